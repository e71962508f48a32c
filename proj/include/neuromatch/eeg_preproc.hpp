#pragma once

#include <string>
#include <utility>
#include <vector>

#include "neuromatch/montage.hpp"
#include "neuromatch/sigproc.hpp"
#include "neuromatch/types.hpp"

namespace neuromatch::preproc {

struct RejectPolicy {
  double multiplier = 10.0;     // flag channels with var > multiplier x median var
  double max_fraction = 0.25;   // flagging more than this fraction is a hard error
};

struct PreprocReport {
  std::vector<Eigen::Index> rejected;
  std::vector<double> channel_variance;  // measured at the rejection stage
  std::vector<std::string> stages;       // executed pipeline stages, in order
};

// Indices with variance > k x median(variances).
std::vector<Eigen::Index> variance_outliers(const std::vector<double>& variances, double k);

std::pair<std::vector<Eigen::Index>, PreprocReport> reject_channels(const TimeSeries& ts,
                                                                    const RejectPolicy& policy);

// Spherical-spline fit (order m=4, 7 Legendre terms, small ridge) over the
// good electrodes, evaluated at the query positions. values is good x frames;
// the result is query x frames.
Eigen::MatrixXd spline_interpolate(const std::vector<std::array<double, 3>>& good_positions,
                                   const Eigen::MatrixXd& good_values,
                                   const std::vector<std::array<double, 3>>& query_positions);

// Replace the bad rows by the spherical-spline prediction from all remaining
// channels; good rows pass through untouched.
TimeSeries interpolate_channels(const TimeSeries& ts, const std::vector<Eigen::Index>& bad,
                                const Montage& montage);

// Subtract the per-frame mean of the mastoid channels from every channel.
TimeSeries rereference(const TimeSeries& ts, const Montage& montage);

struct PreprocConfig {
  double lowpass_hz = 32.0;
  double highpass_hz = 0.5;
  int filter_order = 4;
  double target_rate = 64.0;
  double reject_multiplier = 10.0;
  bool prereferenced = false;  // dataset already referenced: skip the mastoid stage
  std::vector<double> allowed_rates{512.0, 8192.0};
};

// Fixed stage order: lowpass -> highpass -> resample -> reject+interpolate ->
// rereference -> zscore. The report lists each stage as executed.
std::pair<TimeSeries, PreprocReport> preprocess(const TimeSeries& ts, const Montage& montage,
                                                const PreprocConfig& config);

}  // namespace neuromatch::preproc
