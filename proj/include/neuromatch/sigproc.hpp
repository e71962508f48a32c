#pragma once

#include <cstdint>
#include <vector>

#include "neuromatch/error.hpp"
#include "neuromatch/types.hpp"

namespace neuromatch::sigproc {

enum class FilterKind { lowpass, highpass };

// One cascade stage: (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2).
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

struct IirFilter {
  std::vector<double> numerator;    // expanded transfer function, b
  std::vector<double> denominator;  // expanded transfer function, a (a[0] == 1)
  FilterKind kind = FilterKind::lowpass;
  double cutoff_hz = 0.0;
  int order = 0;
  // Operational form: filtering, gain and stability run on the cascade, which
  // stays accurate where the expanded polynomial is ill-conditioned (high
  // order, near-unit-circle poles). Empty means "use numerator/denominator".
  std::vector<Biquad> sections;
};

// Butterworth design via bilinear transform with frequency prewarping.
// Orders above 12 are rejected.
IirFilter design_butterworth(FilterKind kind, double cutoff_hz, int order, double rate);

// Magnitude response at the given frequency.
double filter_gain(const IirFilter& filter, double freq_hz, double rate);

// All poles strictly inside the unit circle.
bool is_stable(const IirFilter& filter);

// Single forward pass with steady-state initial conditions (no startup step).
std::vector<double> filter_forward(const IirFilter& filter, const std::vector<double>& signal);

// Zero-phase forward-backward filtering with odd-reflection edge padding of
// 3 x order samples. Input must be longer than the pad.
std::vector<double> filtfilt(const IirFilter& filter, const std::vector<double>& signal);
TimeSeries filtfilt(const IirFilter& filter, const TimeSeries& ts);

// Rational-ratio downsample (polyphase windowed-sinc anti-alias lowpass at
// 0.45 x target rate, then decimation). Upsampling is rejected.
std::vector<double> resample_signal(const std::vector<double>& signal, double rate,
                                    double target_rate);
TimeSeries resample(const TimeSeries& ts, double target_rate);

// Magnitude of the analytic signal (FFT method). Needs at least 16 samples.
std::vector<double> hilbert_envelope(const std::vector<double>& signal, double rate);

struct ZscoreResult {
  TimeSeries series;
  std::vector<Eigen::Index> degenerate_channels;  // constant rows, zeroed out
};

// Per-channel standardization with population (divide-by-N) std.
ZscoreResult zscore(const TimeSeries& ts);

}  // namespace neuromatch::sigproc
