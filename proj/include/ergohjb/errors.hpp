#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ergohjb {

/// Invalid user-supplied parameter (grid spacing, truncation level, penalty exponent, ...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A coefficient field violated its validity contract (e.g. non-SPD metric).
class CoefficientError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Linear or nonlinear solve failure. Carries the residual history when one exists.
class SolverError : public std::runtime_error {
 public:
  explicit SolverError(const std::string& what, std::vector<double> history = {})
      : std::runtime_error(what), history_(std::move(history)) {}

  const std::vector<double>& history() const noexcept { return history_; }

 private:
  std::vector<double> history_;
};

/// lambda_R increased across nested boxes by more than the monotonicity tolerance.
class MonotonicityViolation : public SolverError {
 public:
  using SolverError::SolverError;
};

/// LP reported infeasible or unbounded.
class LpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ergohjb
