#include "neuromatch/error.hpp"

namespace neuromatch {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::invalid_design: return "invalid_design";
    case ErrorCode::io: return "io";
    case ErrorCode::format: return "format";
    case ErrorCode::alignment: return "alignment";
    case ErrorCode::pipeline: return "pipeline";
    case ErrorCode::runtime: return "runtime";
  }
  return "unknown";
}

}  // namespace neuromatch
