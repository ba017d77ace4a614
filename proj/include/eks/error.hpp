#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace eks {

enum class ErrorKind {
  NotPSD,
  NonFinite,
  SingularMatrix,
  SingularImplicitSystem,
  DimensionMismatch,
  SizeMismatch,
  TooLarge,
  NonPositive,
  NonlinearUnsupported,
  DegenerateDirection,
  PerturbationBound,
  InvalidArgument,
  Config,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Exception carrying a machine-checkable error kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), detail_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// Message without the kind prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

inline std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::NotPSD: return "NotPSD";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::SingularMatrix: return "SingularMatrix";
    case ErrorKind::SingularImplicitSystem: return "SingularImplicitSystem";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::SizeMismatch: return "SizeMismatch";
    case ErrorKind::TooLarge: return "TooLarge";
    case ErrorKind::NonPositive: return "NonPositive";
    case ErrorKind::NonlinearUnsupported: return "NonlinearUnsupported";
    case ErrorKind::DegenerateDirection: return "DegenerateDirection";
    case ErrorKind::PerturbationBound: return "PerturbationBound";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Config: return "Config";
  }
  return "Unknown";
}

}  // namespace eks
