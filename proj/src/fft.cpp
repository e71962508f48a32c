#include "neuromatch/fft.hpp"

#include <cmath>
#include <cstddef>

#include "neuromatch/error.hpp"

namespace neuromatch::fft {

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

void transform_pow2(std::vector<std::complex<double>>& data, bool inverse) {
  const std::size_t n = data.size();
  if (n == 0) return;
  if (!is_pow2(n)) raise(ErrorCode::invalid_argument, "fft: size is not a power of two");

  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(angle), std::sin(angle));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = data[i + k];
        std::complex<double> v = data[i + k + len / 2] * w;
        data[i + k] = u + v;
        data[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }

  if (inverse) {
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& value : data) value *= scale;
  }
}

std::vector<std::complex<double>> transform(const std::vector<std::complex<double>>& input,
                                            bool inverse) {
  const std::size_t n = input.size();
  if (n == 0) return {};
  if (is_pow2(n)) {
    std::vector<std::complex<double>> data = input;
    transform_pow2(data, inverse);
    return data;
  }

  // Bluestein: x_k * chirp_k convolved with the conjugate chirp.
  // The chirp exponent n^2/2 is reduced mod 2N to keep the argument small.
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<std::complex<double>> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t k2 = (k * k) % (2 * n);
    const double angle = sign * M_PI * static_cast<double>(k2) / static_cast<double>(n);
    chirp[k] = std::complex<double>(std::cos(angle), std::sin(angle));
  }

  const std::size_t m = next_pow2(2 * n - 1);
  std::vector<std::complex<double>> a(m, {0.0, 0.0});
  std::vector<std::complex<double>> b(m, {0.0, 0.0});
  for (std::size_t k = 0; k < n; ++k) a[k] = input[k] * chirp[k];
  b[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) b[k] = b[m - k] = std::conj(chirp[k]);

  transform_pow2(a, false);
  transform_pow2(b, false);
  for (std::size_t k = 0; k < m; ++k) a[k] *= b[k];
  transform_pow2(a, true);

  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * chirp[k];
  if (inverse) {
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& value : out) value *= scale;
  }
  return out;
}

std::vector<std::complex<double>> forward_real(const std::vector<double>& input) {
  std::vector<std::complex<double>> data(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) data[i] = {input[i], 0.0};
  return transform(data, false);
}

}  // namespace neuromatch::fft
