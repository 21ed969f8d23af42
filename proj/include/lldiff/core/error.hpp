#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lldiff {

/// Failure categories. Each maps to a stable token that the CLI prints on
/// its single error line.
enum class ErrorCode {
  invalid_argument,
  shape_mismatch,
  out_of_range,
  schedule_invariant,
  io,
  format,
  non_finite,
  config,
};

constexpr std::string_view error_token(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "E_INVALID_ARGUMENT";
    case ErrorCode::shape_mismatch: return "E_SHAPE_MISMATCH";
    case ErrorCode::out_of_range: return "E_OUT_OF_RANGE";
    case ErrorCode::schedule_invariant: return "E_SCHEDULE_INVARIANT";
    case ErrorCode::io: return "E_IO";
    case ErrorCode::format: return "E_FORMAT";
    case ErrorCode::non_finite: return "E_NON_FINITE";
    case ErrorCode::config: return "E_CONFIG";
  }
  return "E_UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace lldiff
