#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "otpf/ensemble.hpp"
#include "otpf/error.hpp"
#include "otpf/random.hpp"
#include "otpf/transport.hpp"

namespace otpf {

namespace detail {

inline void require_compatible(const Ensemble& prior, const TransitionMatrix& transition, const char* what) {
  prior.validate();
  const auto m = prior.size();
  if (transition.p.rows() != m || transition.p.cols() != m)
    throw InvalidInput(std::string(what) + ": transition matrix must be M x M with M = ensemble size");
}

}  // namespace detail

/// X^a = X^f P. The output keeps the prior's weight vector, so a uniformly
/// weighted prior yields a uniformly weighted posterior.
inline Ensemble et_transform(const Ensemble& prior, const TransitionMatrix& transition) {
  detail::require_compatible(prior, transition, "et_transform");
  return Ensemble{prior.states * transition.p, prior.weights};
}

/**
 * Draws posterior member j from the categorical law in column j of P.
 *
 * Draws are made column by column (j = 0, 1, ...), one uniform per column,
 * mapped through the inverse CDF of that column. Output members are copies of
 * prior members.
 */
inline Ensemble ot_resample(const Ensemble& prior, const TransitionMatrix& transition, CounterRng& rng,
                            double column_tol = 1e-10) {
  detail::require_compatible(prior, transition, "ot_resample");
  const auto m = prior.size();
  Eigen::MatrixXd out(prior.dim(), m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto column = transition.p.col(j);
    if ((column.array() < 0.0).any() || std::abs(column.sum() - 1.0) > column_tol)
      throw InvalidInput("ot_resample: column " + std::to_string(j) + " is not a probability vector");
    const double u = rng.uniform() * column.sum();
    Eigen::Index pick = -1;
    double cumulative = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (column(i) <= 0.0) continue;
      pick = i;
      cumulative += column(i);
      if (u < cumulative) break;
    }
    out.col(j) = prior.states.col(pick);
  }
  return Ensemble{std::move(out), prior.weights};
}

/// || sum_j omega_j x^a_j - sum_i w^a_i x^f_i || with omega the prior weights.
inline double mean_identity_check(const Ensemble& prior, const Ensemble& posterior,
                                  const Eigen::VectorXd& posterior_weights) {
  if (prior.dim() != posterior.dim() || prior.size() != posterior.size() ||
      posterior_weights.size() != prior.size())
    throw InvalidInput("mean_identity_check: dimension mismatch");
  const Eigen::VectorXd lhs = posterior.states * prior.weights_or_uniform();
  const Eigen::VectorXd rhs = prior.states * posterior_weights;
  return (lhs - rhs).norm();
}

}  // namespace otpf
