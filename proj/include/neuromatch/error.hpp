#pragma once

#include <stdexcept>
#include <string>

namespace neuromatch {

enum class ErrorCode {
  invalid_argument,  // bad parameter or precondition violation
  invalid_design,    // filter/model configuration that cannot be realized
  io,                // file system / stream failure
  format,            // malformed on-disk payload (bad magic, truncation, parse)
  alignment,         // stimulus/EEG/window index mismatch
  pipeline,          // a pipeline stage refused to proceed (e.g. data too corrupt)
  runtime,           // everything else (divergence, inconsistent state)
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace neuromatch
