#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>

#include "otpf/error.hpp"

namespace otpf {

/// N x M collection of state columns with an optional probability vector over
/// members. Absent weights mean uniform 1/M.
struct Ensemble {
  Eigen::MatrixXd states;
  std::optional<Eigen::VectorXd> weights;

  Ensemble() = default;
  explicit Ensemble(Eigen::MatrixXd x, std::optional<Eigen::VectorXd> w = std::nullopt)
      : states{std::move(x)}, weights{std::move(w)} {}

  Eigen::Index size() const noexcept { return states.cols(); }
  Eigen::Index dim() const noexcept { return states.rows(); }

  Eigen::VectorXd weights_or_uniform() const {
    if (weights) return *weights;
    return Eigen::VectorXd::Constant(size(), 1.0 / static_cast<double>(size()));
  }

  Eigen::VectorXd mean() const { return states * weights_or_uniform(); }

  void validate() const;
};

namespace detail {

inline void require_probability_vector(const Eigen::VectorXd& w, const char* what, double tol = 1e-12) {
  if (!w.allFinite()) throw InvalidInput(std::string(what) + ": non-finite entry");
  if ((w.array() < 0.0).any()) throw InvalidInput(std::string(what) + ": negative entry");
  if (std::abs(w.sum() - 1.0) > tol)
    throw InvalidInput(std::string(what) + ": entries sum to " + std::to_string(w.sum()) + ", expected 1");
}

}  // namespace detail

inline void Ensemble::validate() const {
  if (size() < 1) throw InvalidInput("ensemble: needs at least one member");
  if (!states.allFinite()) throw InvalidInput("ensemble: non-finite state entry");
  if (weights) {
    if (weights->size() != size()) throw InvalidInput("ensemble: weight vector length differs from member count");
    detail::require_probability_vector(*weights, "ensemble weights");
  }
}

}  // namespace otpf
