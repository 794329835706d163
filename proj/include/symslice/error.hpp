#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace symslice {

enum class ErrorCode {
  EmptyCloud,
  ZeroExtent,
  OutOfBox,
  InvalidSpec,
  ShapeMismatch,
  Degenerate,
  EigengapTooSmall,
  SolverFailure,
  NonScalarLoss,
  GraphConsumed,
  IO,
  BadMagic,
  VersionError,
  ParseError,
  UnsupportedFormat,
  EmptyResult,
  TooFewPoints,
  DegenerateNormal,
  LengthMismatch,
  NonFiniteLoss,
  Config,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::ZeroExtent: return "ZeroExtent";
    case ErrorCode::OutOfBox: return "OutOfBox";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::Degenerate: return "Degenerate";
    case ErrorCode::EigengapTooSmall: return "EigengapTooSmall";
    case ErrorCode::SolverFailure: return "SolverFailure";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::GraphConsumed: return "GraphConsumed";
    case ErrorCode::IO: return "IO";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionError: return "VersionError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::EmptyResult: return "EmptyResult";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::DegenerateNormal: return "DegenerateNormal";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a code
/// that callers can branch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace symslice
