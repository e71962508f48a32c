#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "neuromatch/error.hpp"
#include "neuromatch/fft.hpp"
#include "neuromatch/rng.hpp"
#include "neuromatch/sigproc.hpp"

using namespace neuromatch;
using namespace neuromatch::sigproc;

namespace {

std::vector<double> make_sine(double freq, double rate, double seconds, double amp = 1.0) {
  const std::size_t n = static_cast<std::size_t>(std::llround(seconds * rate));
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / rate);
  return x;
}

// Closed-form digital Butterworth magnitude: the bilinear transform maps the
// analog response through tan-prewarped frequencies.
double butterworth_magnitude_oracle(double freq, double cutoff, double rate, int order) {
  const double num = std::tan(M_PI * freq / rate);
  const double den = std::tan(M_PI * cutoff / rate);
  return 1.0 / std::sqrt(1.0 + std::pow(num / den, 2.0 * order));
}

// Least-squares fit of a*sin(2 pi f t) + b*cos(2 pi f t); returns amplitude
// and phase of the fitted sinusoid.
struct SinusoidFit {
  double amplitude;
  double phase;
};

SinusoidFit fit_sinusoid(const std::vector<double>& x, double freq, double rate) {
  double ss = 0.0, sc = 0.0, cc = 0.0, xs = 0.0, xc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = static_cast<double>(i) / rate;
    const double s = std::sin(2.0 * M_PI * freq * t);
    const double c = std::cos(2.0 * M_PI * freq * t);
    ss += s * s;
    sc += s * c;
    cc += c * c;
    xs += x[i] * s;
    xc += x[i] * c;
  }
  const double det = ss * cc - sc * sc;
  const double a = (xs * cc - xc * sc) / det;
  const double b = (xc * ss - xs * sc) / det;
  return {std::hypot(a, b), std::atan2(b, a)};
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

// Cross-correlation peak lag between two equal-length signals, searched over
// [-max_lag, max_lag].
int xcorr_peak_lag(const std::vector<double>& x, const std::vector<double>& y, int max_lag) {
  int best_lag = 0;
  double best = -1e300;
  const int n = static_cast<int>(x.size());
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const int j = i + lag;
      if (j < 0 || j >= n) continue;
      acc += x[i] * y[j];
    }
    if (acc > best) {
      best = acc;
      best_lag = lag;
    }
  }
  return best_lag;
}

TimeSeries series_from_rows(const std::vector<std::vector<double>>& rows, double rate) {
  TimeSeries ts;
  ts.rate = rate;
  ts.samples.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      ts.samples(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return ts;
}

}  // namespace

TEST_CASE("fft matches naive dft on odd and even lengths") {
  Rng rng(11);
  for (std::size_t n : {8u, 13u, 21u, 64u, 100u}) {
    std::vector<std::complex<double>> x(n);
    for (auto& v : x) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto fast = fft::transform(x, false);
    for (std::size_t k = 0; k < n; ++k) {
      std::complex<double> acc(0, 0);
      for (std::size_t j = 0; j < n; ++j) {
        const double ang = -2.0 * M_PI * static_cast<double>(k * j) / static_cast<double>(n);
        acc += x[j] * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      CHECK(std::abs(fast[k] - acc) < 1e-9);
    }
    auto back = fft::transform(fast, true);
    for (std::size_t j = 0; j < n; ++j) CHECK(std::abs(back[j] - x[j]) < 1e-9);
  }
}

TEST_CASE("butterworth lowpass dc gain is one") {
  auto f = design_butterworth(FilterKind::lowpass, 32.0, 4, 512.0);
  CHECK(filter_gain(f, 0.0, 512.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("butterworth gain at cutoff is -3 dB") {
  for (int order : {1, 2, 4, 8}) {
    auto lp = design_butterworth(FilterKind::lowpass, 32.0, order, 512.0);
    const double g = filter_gain(lp, 32.0, 512.0);
    CHECK(g == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.01));
    const double db = 20.0 * std::log10(g);
    CHECK(std::abs(db - (-20.0 * std::log10(std::sqrt(2.0)))) < 0.1);

    auto hp = design_butterworth(FilterKind::highpass, 0.5, order, 512.0);
    CHECK(filter_gain(hp, 0.5, 512.0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.01));
  }
}

TEST_CASE("butterworth magnitude matches prewarped analog closed form") {
  const double rate = 512.0, cutoff = 32.0;
  const int order = 4;
  auto f = design_butterworth(FilterKind::lowpass, cutoff, order, rate);
  for (double freq : {4.0, 16.0, 32.0, 64.0, 128.0, 200.0}) {
    const double expected = butterworth_magnitude_oracle(freq, cutoff, rate, order);
    CHECK(filter_gain(f, freq, rate) == doctest::Approx(expected).epsilon(1e-9));
  }
  // One octave above cutoff: analog form says 1/(1+2^8); the realized digital
  // response follows the prewarped frequency ratio instead.
  const double analog_db = 10.0 * std::log10(1.0 / (1.0 + std::pow(2.0, 8)));
  CHECK(analog_db == doctest::Approx(-24.1).epsilon(0.01));
  const double digital_db = 20.0 * std::log10(filter_gain(f, 64.0, rate));
  CHECK(digital_db ==
        doctest::Approx(20.0 * std::log10(butterworth_magnitude_oracle(64.0, cutoff, rate, order)))
            .epsilon(1e-6));
  CHECK(digital_db < analog_db);  // prewarping steepens the realized rolloff
}

TEST_CASE("butterworth magnitude is monotone") {
  auto lp = design_butterworth(FilterKind::lowpass, 32.0, 4, 512.0);
  double prev = filter_gain(lp, 0.0, 512.0);
  for (double f = 2.0; f < 256.0; f += 2.0) {
    const double g = filter_gain(lp, f, 512.0);
    CHECK(g <= prev + 1e-12);
    prev = g;
  }
}

TEST_CASE("butterworth designs are stable for all supported orders") {
  for (int order = 1; order <= 12; ++order) {
    CHECK(is_stable(design_butterworth(FilterKind::lowpass, 32.0, order, 512.0)));
    CHECK(is_stable(design_butterworth(FilterKind::highpass, 0.5, order, 512.0)));
    CHECK(is_stable(design_butterworth(FilterKind::lowpass, 7000.0, order, 16000.0)));
  }
}

TEST_CASE("butterworth rejects bad designs") {
  CHECK_THROWS_AS(design_butterworth(FilterKind::lowpass, 256.0, 4, 512.0), Error);
  CHECK_THROWS_AS(design_butterworth(FilterKind::lowpass, 300.0, 4, 512.0), Error);
  CHECK_THROWS_AS(design_butterworth(FilterKind::lowpass, 32.0, 13, 512.0), Error);
  CHECK_THROWS_AS(design_butterworth(FilterKind::lowpass, 32.0, 0, 512.0), Error);
}

TEST_CASE("filtfilt removes dc through the highpass") {
  auto hp = design_butterworth(FilterKind::highpass, 0.5, 4, 512.0);
  std::vector<double> constant(2048, 5.0);
  auto out = filtfilt(hp, constant);
  for (double v : out) CHECK(std::abs(v) < 1e-3);
}

TEST_CASE("filtfilt passband sinusoid keeps amplitude and has zero lag") {
  auto lp = design_butterworth(FilterKind::lowpass, 32.0, 4, 512.0);
  auto x = make_sine(10.0, 512.0, 4.0);
  auto y = filtfilt(lp, x);
  const auto fit = fit_sinusoid(y, 10.0, 512.0);
  CHECK(fit.amplitude == doctest::Approx(1.0).epsilon(0.01));
  CHECK(xcorr_peak_lag(x, y, 25) == 0);
}

TEST_CASE("filtfilt identity filter is a no-op") {
  IirFilter identity{{1.0}, {1.0}, FilterKind::lowpass, 0.0, 1};
  std::vector<double> x(64, 0.0);
  x[10] = 1.0;
  auto y = filtfilt(identity, x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("filtfilt rejects too-short input") {
  auto lp = design_butterworth(FilterKind::lowpass, 32.0, 4, 512.0);
  std::vector<double> shorty(12, 1.0);
  CHECK_THROWS_AS(filtfilt(lp, shorty), Error);
}

TEST_CASE("resample 512 to 64 has the expected length") {
  std::vector<double> x(5120, 0.0);
  auto y = resample_signal(x, 512.0, 64.0);
  CHECK(y.size() == 640);
}

TEST_CASE("resample preserves a 10 Hz sine") {
  auto x = make_sine(10.0, 512.0, 10.0);
  auto y = resample_signal(x, 512.0, 64.0);
  auto ideal = make_sine(10.0, 64.0, 10.0);
  REQUIRE(y.size() == ideal.size());
  CHECK(pearson(y, ideal) > 0.999);
}

TEST_CASE("resample preserves constants exactly") {
  std::vector<double> x(1024, 3.25);
  auto y = resample_signal(x, 512.0, 64.0);
  for (double v : y) CHECK(v == doctest::Approx(3.25).epsilon(1e-12));
}

TEST_CASE("resample rejects upsampling") {
  std::vector<double> x(100, 0.0);
  CHECK_THROWS_AS(resample_signal(x, 64.0, 512.0), Error);
}

TEST_CASE("resample at the same rate is an identity no-op") {
  Rng rng(3);
  std::vector<double> x(333);
  for (auto& v : x) v = rng.uniform(-1, 1);
  auto y = resample_signal(x, 64.0, 64.0);
  CHECK(y == x);
}

TEST_CASE("hilbert envelope of a pure tone is its amplitude") {
  auto x = make_sine(50.0, 16000.0, 1.0, 2.0);
  auto env = hilbert_envelope(x, 16000.0);
  const std::size_t n = env.size();
  for (std::size_t i = n / 10; i < n - n / 10; ++i)
    CHECK(env[i] == doctest::Approx(2.0).epsilon(0.01));
}

TEST_CASE("hilbert envelope tracks an am modulator") {
  const double rate = 16000.0;
  const std::size_t n = static_cast<std::size_t>(2.0 * rate);
  std::vector<double> x(n), modulator(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    modulator[i] = 1.0 + 0.5 * std::cos(2.0 * M_PI * 2.0 * t);
    x[i] = modulator[i] * std::sin(2.0 * M_PI * 400.0 * t);
  }
  auto env = hilbert_envelope(x, rate);
  double max_err = 0.0;
  for (std::size_t i = n / 10; i < n - n / 10; ++i)
    max_err = std::max(max_err, std::abs(env[i] - modulator[i]));
  CHECK(max_err < 0.03);
}

TEST_CASE("hilbert envelope of zeros is zeros, and empty input throws") {
  std::vector<double> zeros(512, 0.0);
  auto env = hilbert_envelope(zeros, 64.0);
  for (double v : env) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_THROWS_AS(hilbert_envelope(std::vector<double>{}, 64.0), Error);
  CHECK_THROWS_AS(hilbert_envelope(std::vector<double>(8, 1.0), 64.0), Error);
}

TEST_CASE("hilbert envelope dominates the instantaneous value") {
  Rng rng(99);
  std::vector<double> x(777);
  for (auto& v : x) v = rng.normal();
  auto env = hilbert_envelope(x, 64.0);
  double maxabs = 0.0;
  for (double v : x) maxabs = std::max(maxabs, std::abs(v));
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(env[i] >= std::abs(x[i]) - 1e-6 * maxabs);
}

TEST_CASE("zscore normalizes each channel with population std") {
  auto ts = series_from_rows({{1.0, 2.0, 3.0}}, 64.0);
  auto result = zscore(ts);
  CHECK(result.degenerate_channels.empty());
  CHECK(result.series.samples(0, 0) == doctest::Approx(-1.2247448).epsilon(1e-6));
  CHECK(result.series.samples(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(result.series.samples(0, 2) == doctest::Approx(1.2247448).epsilon(1e-6));
}

TEST_CASE("zscore flags constant channels as zeros") {
  auto ts = series_from_rows({{5.0, 5.0, 5.0}, {1.0, 2.0, 3.0}}, 64.0);
  auto result = zscore(ts);
  REQUIRE(result.degenerate_channels.size() == 1);
  CHECK(result.degenerate_channels[0] == 0);
  CHECK(result.series.samples.row(0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zscore is idempotent and hits mean zero std one") {
  Rng rng(5);
  std::vector<std::vector<double>> rows(4, std::vector<double>(500));
  for (auto& row : rows)
    for (auto& v : row) v = rng.uniform(-3, 7);
  auto ts = series_from_rows(rows, 64.0);
  auto once = zscore(ts);
  for (Eigen::Index c = 0; c < once.series.channels(); ++c) {
    const double mean = once.series.samples.row(c).mean();
    const double var = (once.series.samples.row(c).array() - mean).square().sum() /
                       static_cast<double>(once.series.frames());
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-9);
  }
  auto twice = zscore(once.series);
  CHECK((twice.series.samples - once.series.samples).cwiseAbs().maxCoeff() < 1e-9);
}
