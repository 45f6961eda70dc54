#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace laber {

enum class ErrorKind {
  AllZero,
  NonFinite,
  ZeroProbability,
  LengthMismatch,
  OutOfRange,
  NegativePriority,
  EmptyTree,
  ShapeMismatch,
  InsufficientData,
  ZeroSurrogate,
  NotEnumerable,
  GoalOnTrap,
  InvalidArgument,
  IoError,
  Config,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Every library failure is reported through this type; `kind()` lets callers
// (and tests) distinguish the contract that was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace laber
