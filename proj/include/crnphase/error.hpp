#pragma once

#include <stdexcept>
#include <string>

namespace crnphase {

enum class ErrorCode {
  parse,
  unknown_species,
  invalid_network,
  integration_failed,
  no_cycle,
  not_converged,
  complex_multiplier,
  degenerate_basis,
  adjoint_mismatch,
  no_local_minimum,
  curvature_too_small,
  propensity_overflow,
  non_finite_state,
  insufficient_points,
  rate_bound_violated,
  invalid_argument,
  io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse: return "parse-error";
    case ErrorCode::unknown_species: return "unknown-species";
    case ErrorCode::invalid_network: return "invalid-network";
    case ErrorCode::integration_failed: return "integration-failed";
    case ErrorCode::no_cycle: return "no-cycle";
    case ErrorCode::not_converged: return "not-converged";
    case ErrorCode::complex_multiplier: return "complex-multiplier";
    case ErrorCode::degenerate_basis: return "degenerate-basis";
    case ErrorCode::adjoint_mismatch: return "adjoint-mismatch";
    case ErrorCode::no_local_minimum: return "no-local-minimum";
    case ErrorCode::curvature_too_small: return "curvature-too-small";
    case ErrorCode::propensity_overflow: return "propensity-overflow";
    case ErrorCode::non_finite_state: return "non-finite-state";
    case ErrorCode::insufficient_points: return "insufficient-points";
    case ErrorCode::rate_bound_violated: return "rate-bound-violated";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::io: return "io-error";
  }
  return "error";
}

/// Every failure in the library surfaces as this exception; `code()` tells
/// callers which contract was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ParseError : public Error {
 public:
  ParseError(ErrorCode code, int line, int column, const std::string& what)
      : Error(code, "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

}  // namespace crnphase
