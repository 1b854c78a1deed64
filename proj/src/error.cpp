#include "trajprint/error.hpp"

namespace trajprint {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::NonFinite: return "non_finite";
    case ErrorCode::NotOnTape: return "not_on_tape";
    case ErrorCode::UnsupportedKind: return "unsupported_kind";
    case ErrorCode::NonInvertible: return "non_invertible";
    case ErrorCode::Io: return "io";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::DimensionMismatch: return "dimension_mismatch";
  }
  return "unknown";
}

}  // namespace trajprint
