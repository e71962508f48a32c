#include "neuromatch/types.hpp"

#include <cmath>

namespace neuromatch {

void require_finite(const Eigen::MatrixXd& values, const char* context) {
  if (!values.allFinite())
    raise(ErrorCode::runtime, std::string(context) + ": non-finite value produced");
}

void require_finite(const std::vector<double>& values, const char* context) {
  for (double v : values) {
    if (!std::isfinite(v))
      raise(ErrorCode::runtime, std::string(context) + ": non-finite value produced");
  }
}

}  // namespace neuromatch
