#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "neuromatch/error.hpp"

namespace neuromatch {

/// Multichannel signal: one row per channel, one column per frame.
struct TimeSeries {
  Eigen::MatrixXd samples;  // channels x frames
  double rate = 0.0;        // Hz
  std::vector<std::string> channel_labels;  // optional, empty or channels()-sized

  Eigen::Index channels() const { return samples.rows(); }
  Eigen::Index frames() const { return samples.cols(); }

  void require_valid(const char* context) const {
    if (rate <= 0.0) raise(ErrorCode::invalid_argument, std::string(context) + ": rate must be positive");
    if (frames() < 1) raise(ErrorCode::invalid_argument, std::string(context) + ": empty series");
    if (!channel_labels.empty() &&
        channel_labels.size() != static_cast<std::size_t>(channels()))
      raise(ErrorCode::invalid_argument, std::string(context) + ": channel label count mismatch");
  }
};

/// Throws if any element is NaN or infinite.
void require_finite(const Eigen::MatrixXd& values, const char* context);
void require_finite(const std::vector<double>& values, const char* context);

}  // namespace neuromatch
