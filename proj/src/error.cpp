#include "laber/error.hpp"

namespace laber {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::AllZero: return "AllZero";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::ZeroProbability: return "ZeroProbability";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::NegativePriority: return "NegativePriority";
    case ErrorKind::EmptyTree: return "EmptyTree";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::ZeroSurrogate: return "ZeroSurrogate";
    case ErrorKind::NotEnumerable: return "NotEnumerable";
    case ErrorKind::GoalOnTrap: return "GoalOnTrap";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::Config: return "Config";
  }
  return "Unknown";
}

}  // namespace laber
