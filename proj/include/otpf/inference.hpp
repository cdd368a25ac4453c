#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>

#include "otpf/ensemble.hpp"
#include "otpf/error.hpp"

namespace otpf {

/// Prior samples (columns) with posterior probability weights.
struct WeightedSamples {
  Eigen::MatrixXd values;
  Eigen::VectorXd weights;
};

/// w_i = l_i w^f_i / sum_k l_k w^f_k.
inline Eigen::VectorXd importance_weights(const Eigen::VectorXd& likelihoods, const Eigen::VectorXd& prior_weights) {
  if (likelihoods.size() != prior_weights.size())
    throw InvalidInput("importance_weights: likelihood and prior weight lengths differ");
  if (!likelihoods.allFinite() || (likelihoods.array() < 0.0).any())
    throw InvalidInput("importance_weights: likelihoods must be finite and nonnegative");
  detail::require_probability_vector(prior_weights, "importance_weights prior", 1e-10);
  Eigen::VectorXd w = likelihoods.cwiseProduct(prior_weights);
  const double total = w.sum();
  if (!(total > 0.0)) throw DegenerateWeights("importance_weights: every likelihood vanished");
  return w / total;
}

inline Eigen::VectorXd importance_weights(const Eigen::VectorXd& likelihoods) {
  const auto m = likelihoods.size();
  return importance_weights(likelihoods, Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m)));
}

/// Same weights from log-likelihoods, shifted by their maximum before
/// exponentiation so that distant observations do not underflow.
inline Eigen::VectorXd importance_weights_from_log(const Eigen::VectorXd& log_likelihoods,
                                                   const Eigen::VectorXd& prior_weights) {
  if (log_likelihoods.size() == 0) throw InvalidInput("importance_weights_from_log: empty input");
  if ((log_likelihoods.array().isNaN()).any()) throw InvalidInput("importance_weights_from_log: NaN log-likelihood");
  const double top = log_likelihoods.maxCoeff();
  if (!std::isfinite(top)) throw DegenerateWeights("importance_weights_from_log: no member has finite likelihood");
  return importance_weights((log_likelihoods.array() - top).exp().matrix(), prior_weights);
}

/// Per-component weighted mean and central moments of order 2 to 4.
/// Entries above the requested order are left empty.
struct WeightedMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  Eigen::VectorXd third;
  Eigen::VectorXd fourth;
};

inline WeightedMoments weighted_moments(const WeightedSamples& samples, int order = 4) {
  if (order < 1 || order > 4) throw InvalidInput("weighted_moments: order must lie in 1..4");
  if (samples.values.cols() != samples.weights.size() || samples.values.cols() == 0)
    throw InvalidInput("weighted_moments: sample and weight counts differ");
  detail::require_probability_vector(samples.weights, "weighted_moments weights");

  WeightedMoments out;
  out.mean = samples.values * samples.weights;
  if (order == 1) return out;
  const Eigen::ArrayXXd centred = samples.values.colwise() - out.mean;
  auto moment = [&](int r) -> Eigen::VectorXd { return (centred.pow(r).matrix() * samples.weights); };
  out.variance = moment(2);
  if (order >= 3) out.third = moment(3);
  if (order >= 4) out.fourth = moment(4);
  return out;
}

namespace quadrature {

struct Result {
  double value = 0.0;
  double error = 0.0;
};

/// 15-point Kronrod rule with its embedded 7-point Gauss rule on [a, b].
inline Result gauss_kronrod15(const std::function<double(double)>& f, double a, double b) {
  static constexpr std::array<double, 8> xk = {
      0.991455371120812639206854697526329, 0.949107912342758524526189684047851, 0.864864423359769072789712788640926,
      0.741531185599394439863864773280788, 0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
      0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
  static constexpr std::array<double, 8> wk = {
      0.022935322010529224963732008058970, 0.063092092629978553290700663189204, 0.104790010322250183839876322541518,
      0.140653259715525918745189590510238, 0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
      0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
  static constexpr std::array<double, 4> wg = {0.129484966168869693270611432679082,
                                               0.279705391489276667901467771423780,
                                               0.381830050505118944950369775488975,
                                               0.417959183673469387755102040816327};
  const double centre = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = f(centre);
  double kronrod = wk[7] * fc;
  double gauss = wg[3] * fc;
  for (std::size_t k = 0; k < 7; ++k) {
    const double dx = half * xk[k];
    const double pair = f(centre - dx) + f(centre + dx);
    kronrod += wk[k] * pair;
    if (k % 2 == 1) gauss += wg[k / 2] * pair;
  }
  return {kronrod * half, std::abs((kronrod - gauss) * half)};
}

/// Recursive bisection until each panel's Kronrod-Gauss gap meets its share
/// of the absolute tolerance.
inline double adaptive(const std::function<double(double)>& f, double a, double b, double abs_tol,
                       int max_depth = 50) {
  struct Recurse {
    const std::function<double(double)>& f;
    int max_depth;
    double operator()(double lo, double hi, double tol, int depth) const {
      const auto whole = gauss_kronrod15(f, lo, hi);
      if (whole.error <= tol) return whole.value;
      if (depth >= max_depth) throw NumericError("adaptive quadrature: tolerance not reached");
      const double mid = 0.5 * (lo + hi);
      return (*this)(lo, mid, 0.5 * tol, depth + 1) + (*this)(mid, hi, 0.5 * tol, depth + 1);
    }
  };
  return Recurse{f, max_depth}(a, b, abs_tol, 0);
}

}  // namespace quadrature

/// Closed-form posterior used as an oracle for the scalar experiments.
/// Gaussian: N(mean, variance). Truncated Gaussian: density proportional to
/// exp(-(x - centre)^2 / (2 kernel_variance)) on [lower, upper].
struct AnalyticPosterior {
  enum class Kind { Gaussian, TruncatedGaussian };

  Kind kind = Kind::Gaussian;
  double mean = 0.0;
  double variance = 1.0;
  double lower = 0.0;
  double upper = 1.0;
  double centre = 0.0;
  double kernel_variance = 1.0;
  double normalization = 1.0;

  static AnalyticPosterior gaussian(double mean, double variance) {
    if (!(variance > 0.0)) throw InvalidInput("AnalyticPosterior: variance must be positive");
    AnalyticPosterior p;
    p.kind = Kind::Gaussian;
    p.mean = mean;
    p.variance = variance;
    p.normalization = std::sqrt(2.0 * std::numbers::pi * variance);
    return p;
  }

  /// normalization = integral of the unnormalised kernel over [lower, upper].
  static AnalyticPosterior truncated_gaussian(double lower, double upper, double centre, double kernel_variance,
                                              double abs_tol = 1e-10) {
    if (!(upper > lower) || !(kernel_variance > 0.0))
      throw InvalidInput("AnalyticPosterior: need lower < upper and positive kernel variance");
    AnalyticPosterior p;
    p.kind = Kind::TruncatedGaussian;
    p.lower = lower;
    p.upper = upper;
    p.centre = centre;
    p.kernel_variance = kernel_variance;
    p.normalization = quadrature::adaptive([&](double x) { return p.kernel(x); }, lower, upper, abs_tol);
    return p;
  }

  double kernel(double x) const {
    const double c = kind == Kind::Gaussian ? mean : centre;
    const double s2 = kind == Kind::Gaussian ? variance : kernel_variance;
    return std::exp(-(x - c) * (x - c) / (2.0 * s2));
  }

  double density(double x) const {
    if (kind == Kind::TruncatedGaussian && (x < lower || x > upper)) return 0.0;
    return kernel(x) / normalization;
  }
};

struct PosteriorMoments {
  double mean = 0.0;
  double variance = 0.0;
  double third = 0.0;
  double fourth = 0.0;
};

inline PosteriorMoments analytic_posterior_moments(const AnalyticPosterior& posterior, double abs_tol = 1e-10) {
  if (posterior.kind == AnalyticPosterior::Kind::Gaussian)
    return {posterior.mean, posterior.variance, 0.0, 3.0 * posterior.variance * posterior.variance};

  const double lo = posterior.lower, hi = posterior.upper;
  auto integrate = [&](auto&& g) { return quadrature::adaptive(g, lo, hi, abs_tol); };
  PosteriorMoments m;
  m.mean = integrate([&](double x) { return x * posterior.density(x); });
  auto central = [&](int r) {
    return integrate([&](double x) { return std::pow(x - m.mean, r) * posterior.density(x); });
  };
  m.variance = central(2);
  m.third = central(3);
  m.fourth = central(4);
  return m;
}

}  // namespace otpf
