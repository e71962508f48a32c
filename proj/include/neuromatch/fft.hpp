#pragma once

#include <complex>
#include <vector>

namespace neuromatch::fft {

/// In-place iterative radix-2 transform; size must be a power of two.
/// The inverse includes the 1/N scale.
void transform_pow2(std::vector<std::complex<double>>& data, bool inverse);

/// Arbitrary-length DFT. Power-of-two sizes go straight to radix-2,
/// everything else through Bluestein's chirp-z reduction.
std::vector<std::complex<double>> transform(const std::vector<std::complex<double>>& input,
                                            bool inverse);

std::vector<std::complex<double>> forward_real(const std::vector<double>& input);

}  // namespace neuromatch::fft
