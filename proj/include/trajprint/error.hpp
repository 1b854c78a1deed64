#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace trajprint {

// Distinct codes map onto distinct CLI exit statuses (see tools/trajprint.cpp).
enum class ErrorCode {
  InvalidArgument = 2,
  ShapeMismatch = 3,
  NonFinite = 4,
  NotOnTape = 5,
  UnsupportedKind = 6,
  NonInvertible = 7,
  Io = 8,
  Parse = 9,
  DimensionMismatch = 10,
};

std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace trajprint
