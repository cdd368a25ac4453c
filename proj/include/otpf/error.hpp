#pragma once

#include <stdexcept>
#include <string>

namespace otpf {

/// Malformed arguments: shape mismatches, non-finite entries, bad orders.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row and column marginals carry different total mass.
class Infeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An iterative routine hit its iteration or pivot cap.
class NonConvergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every importance weight vanished; upstream this means the filter diverged.
class DegenerateWeights : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical breakdown (singular factorisation, division by a zero marginal).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace otpf
