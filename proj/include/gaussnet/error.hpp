#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gaussnet {

/// Stable error codes. The numeric values are part of the CLI contract.
enum class ErrorCode {
  InvalidInput = 10,
  CyclicGraph = 11,
  RoutingRowExceedsOne = 12,
  Unstable = 13,
  InvalidPath = 14,
  TooManyPaths = 15,
  DomainViolation = 16,
  HypothesisViolated = 17,
  NotPSD = 18,
  TooManyCombinations = 19,
  UnsupportedCase = 20,
  DegenerateVariance = 30,
  SingularCovariance = 31,
  OptimizerFailure = 32,
  AllZeroCounts = 33,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::CyclicGraph: return "CyclicGraph";
    case ErrorCode::RoutingRowExceedsOne: return "RoutingRowExceedsOne";
    case ErrorCode::Unstable: return "Unstable";
    case ErrorCode::InvalidPath: return "InvalidPath";
    case ErrorCode::TooManyPaths: return "TooManyPaths";
    case ErrorCode::DomainViolation: return "DomainViolation";
    case ErrorCode::HypothesisViolated: return "HypothesisViolated";
    case ErrorCode::NotPSD: return "NotPSD";
    case ErrorCode::TooManyCombinations: return "TooManyCombinations";
    case ErrorCode::UnsupportedCase: return "UnsupportedCase";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::OptimizerFailure: return "OptimizerFailure";
    case ErrorCode::AllZeroCounts: return "AllZeroCounts";
  }
  return "Unknown";
}

/// Numerical failures (as opposed to bad input) have codes >= 30.
inline bool is_numerical(ErrorCode code) { return static_cast<int>(code) >= 30; }

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised by stability validation; carries the offending node and its slack.
class UnstableError : public Error {
 public:
  UnstableError(int node, double slack, const std::string& what)
      : Error(ErrorCode::Unstable, what), node_(node), slack_(slack) {}

  int node() const noexcept { return node_; }
  double slack() const noexcept { return slack_; }

 private:
  int node_;
  double slack_;
};

}  // namespace gaussnet
