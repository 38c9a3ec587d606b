#pragma once

#include <stdexcept>
#include <string>

namespace biqa {

enum class ErrorCode {
  missing_file,
  unsupported_format,
  corrupt_data,
  io,
  out_of_range,
  shape_mismatch,
  invalid_config,
  invalid_argument,
  zero_variance,
  degenerate,
  leakage,
  checksum,
  version,
  state,
  numeric,
};

const char* to_string(ErrorCode code) noexcept;

/// Every failure raised by the library. The code distinguishes error
/// values that callers (and the CLI exit status) need to branch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::missing_file: return "missing_file";
    case ErrorCode::unsupported_format: return "unsupported_format";
    case ErrorCode::corrupt_data: return "corrupt_data";
    case ErrorCode::io: return "io";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::invalid_config: return "invalid_config";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::zero_variance: return "zero_variance";
    case ErrorCode::degenerate: return "degenerate";
    case ErrorCode::leakage: return "leakage";
    case ErrorCode::checksum: return "checksum";
    case ErrorCode::version: return "version";
    case ErrorCode::state: return "state";
    case ErrorCode::numeric: return "numeric";
  }
  return "unknown";
}

}  // namespace biqa
