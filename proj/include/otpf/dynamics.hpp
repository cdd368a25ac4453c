#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>

#include "otpf/error.hpp"
#include "otpf/random.hpp"

namespace otpf {

/// Autonomous vector field x' = f(x) on R^N. The Jacobian is optional; when
/// absent, the Newton fallback of the midpoint solver uses finite differences.
struct VectorField {
  Eigen::Index dimension = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> eval;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian;
  std::map<std::string, double> parameters;

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const { return eval(x); }
};

struct Lorenz63Params {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
};

inline Eigen::Vector3d lorenz63(const Eigen::Vector3d& s, const Lorenz63Params& p = {}) {
  return {p.sigma * (s(1) - s(0)), s(0) * (p.rho - s(2)) - s(1), s(0) * s(1) - p.beta * s(2)};
}

inline VectorField lorenz63_field(const Lorenz63Params& p = {}) {
  VectorField f;
  f.dimension = 3;
  f.eval = [p](const Eigen::VectorXd& x) -> Eigen::VectorXd { return lorenz63(x, p); };
  f.jacobian = [p](const Eigen::VectorXd& x) -> Eigen::MatrixXd {
    Eigen::Matrix3d j;
    j << -p.sigma, p.sigma, 0.0,  //
        p.rho - x(2), -1.0, -x(0),  //
        x(1), x(0), -p.beta;
    return j;
  };
  f.parameters = {{"sigma", p.sigma}, {"rho", p.rho}, {"beta", p.beta}};
  return f;
}

/// f(x) = a x, componentwise.
inline VectorField linear_field(double a, Eigen::Index dimension = 1) {
  VectorField f;
  f.dimension = dimension;
  f.eval = [a](const Eigen::VectorXd& x) -> Eigen::VectorXd { return a * x; };
  f.jacobian = [a, dimension](const Eigen::VectorXd&) -> Eigen::MatrixXd {
    return a * Eigen::MatrixXd::Identity(dimension, dimension);
  };
  f.parameters = {{"a", a}};
  return f;
}

inline VectorField zero_field(Eigen::Index dimension) {
  VectorField f;
  f.dimension = dimension;
  f.eval = [dimension](const Eigen::VectorXd&) -> Eigen::VectorXd { return Eigen::VectorXd::Zero(dimension); };
  f.jacobian = [dimension](const Eigen::VectorXd&) -> Eigen::MatrixXd {
    return Eigen::MatrixXd::Zero(dimension, dimension);
  };
  return f;
}

/// Euler's rigid body, x' = (I2^-1 - I3^-1) x2 x3, ... ; conserves |x|^2.
inline VectorField rigid_body_field(double i1 = 2.0, double i2 = 1.0, double i3 = 2.0 / 3.0) {
  const double a = 1.0 / i3 - 1.0 / i2;
  const double b = 1.0 / i1 - 1.0 / i3;
  const double c = 1.0 / i2 - 1.0 / i1;
  VectorField f;
  f.dimension = 3;
  f.eval = [a, b, c](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return Eigen::Vector3d{a * x(1) * x(2), b * x(2) * x(0), c * x(0) * x(1)};
  };
  f.parameters = {{"i1", i1}, {"i2", i2}, {"i3", i3}};
  return f;
}

struct MidpointOptions {
  double tolerance = 1e-12;
  int max_iterations = 100;
};

namespace detail {

inline Eigen::MatrixXd jacobian_or_fd(const VectorField& field, const Eigen::VectorXd& x) {
  if (field.jacobian) return field.jacobian(x);
  const Eigen::Index n = x.size();
  Eigen::MatrixXd j(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double h = 1e-7 * std::max(1.0, std::abs(x(k)));
    Eigen::VectorXd xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    j.col(k) = (field(xp) - field(xm)) / (2.0 * h);
  }
  return j;
}

}  // namespace detail

/**
 * One step of the implicit midpoint rule: solves
 *   x' = x + dt f((x + x') / 2)
 * to an infinity-norm residual below `tolerance`. Fixed-point iteration first;
 * if it stalls or hits the cap, damped Newton takes over from the best iterate.
 */
inline Eigen::VectorXd implicit_midpoint_step(const VectorField& field, const Eigen::VectorXd& x, double dt,
                                              const MidpointOptions& options = {}) {
  if (!std::isfinite(dt)) throw InvalidInput("implicit_midpoint_step: non-finite step size");
  if (dt == 0.0) return x;
  auto residual = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd { return z - x - dt * field(0.5 * (x + z)); };

  Eigen::VectorXd z = x + dt * field(x);
  double previous = std::numeric_limits<double>::infinity();
  int slow = 0;
  for (int it = 0; it < options.max_iterations; ++it) {
    const Eigen::VectorXd next = x + dt * field(0.5 * (x + z));
    const double change = (next - z).lpNorm<Eigen::Infinity>();
    z = next;
    if (!z.allFinite()) break;
    if (change <= options.tolerance && residual(z).lpNorm<Eigen::Infinity>() <= options.tolerance) return z;
    slow = change > 0.5 * previous ? slow + 1 : 0;
    if (slow >= 5) break;
    previous = change;
  }

  if (!z.allFinite()) z = x;
  Eigen::VectorXd g = residual(z);
  double norm = g.lpNorm<Eigen::Infinity>();
  const auto identity = Eigen::MatrixXd::Identity(x.size(), x.size());
  for (int it = 0; it < options.max_iterations; ++it) {
    if (norm <= options.tolerance) return z;
    const Eigen::MatrixXd jg = identity - 0.5 * dt * detail::jacobian_or_fd(field, 0.5 * (x + z));
    const Eigen::VectorXd step = jg.partialPivLu().solve(g);
    double damping = 1.0;
    bool accepted = false;
    for (int halvings = 0; halvings < 30; ++halvings, damping *= 0.5) {
      const Eigen::VectorXd trial = z - damping * step;
      const Eigen::VectorXd gt = residual(trial);
      const double nt = gt.lpNorm<Eigen::Infinity>();
      if (std::isfinite(nt) && nt < norm) {
        z = trial;
        g = gt;
        norm = nt;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  if (norm <= options.tolerance) return z;
  throw NonConvergence("implicit_midpoint_step: residual " + std::to_string(norm) + " above tolerance");
}

/// duration / dt midpoint steps; duration must be an integer multiple of dt.
inline Eigen::VectorXd propagate(const VectorField& field, Eigen::VectorXd x, double duration, double dt,
                                 const MidpointOptions& options = {}) {
  if (!(dt > 0.0) || !(duration >= 0.0)) throw InvalidInput("propagate: need dt > 0 and duration >= 0");
  const double ratio = duration / dt;
  const auto steps = static_cast<long long>(std::llround(ratio));
  if (std::abs(static_cast<double>(steps) * dt - duration) > 1e-12)
    throw InvalidInput("propagate: duration is not an integer multiple of dt");
  for (long long k = 0; k < steps; ++k) x = implicit_midpoint_step(field, x, dt, options);
  return x;
}

/**
 * y = h(x) + xi with xi ~ N(0, R), observed every `interval` time units.
 * R is validated and factorised at construction.
 */
class ObservationModel {
 public:
  using ForwardMap = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

  static ObservationModel linear(Eigen::MatrixXd h, Eigen::MatrixXd noise, double interval) {
    const Eigen::MatrixXd hh = h;
    ObservationModel m([hh](const Eigen::VectorXd& x) -> Eigen::VectorXd { return hh * x; }, std::move(noise),
                       interval);
    if (h.rows() != m.obs_dim()) throw InvalidInput("ObservationModel: H rows must match R");
    m.linear_ = std::move(h);
    return m;
  }

  /// Identity forward map with R = variance * I.
  static ObservationModel identity(Eigen::Index dim, double variance, double interval) {
    return linear(Eigen::MatrixXd::Identity(dim, dim), variance * Eigen::MatrixXd::Identity(dim, dim), interval);
  }

  static ObservationModel nonlinear(ForwardMap forward, Eigen::MatrixXd noise, double interval) {
    return ObservationModel(std::move(forward), std::move(noise), interval);
  }

  Eigen::Index obs_dim() const noexcept { return noise_.rows(); }
  double interval() const noexcept { return interval_; }
  const Eigen::MatrixXd& noise() const noexcept { return noise_; }
  const std::optional<Eigen::MatrixXd>& linear_operator() const noexcept { return linear_; }
  /// Lower Cholesky factor L with R = L L^T.
  Eigen::MatrixXd noise_factor() const { return chol_.matrixL(); }

  Eigen::VectorXd predict(const Eigen::VectorXd& x) const { return forward_(x); }

  double log_likelihood(const Eigen::VectorXd& y, const Eigen::VectorXd& x) const {
    const Eigen::VectorXd d = y - predict(x);
    if (d.size() != obs_dim()) throw InvalidInput("ObservationModel: observation dimension mismatch");
    const Eigen::VectorXd white = chol_.matrixL().solve(d);
    return log_normalization_ - 0.5 * white.squaredNorm();
  }

  double likelihood(const Eigen::VectorXd& y, const Eigen::VectorXd& x) const {
    return std::exp(log_likelihood(y, x));
  }

 private:
  ObservationModel(ForwardMap forward, Eigen::MatrixXd noise, double interval)
      : forward_{std::move(forward)}, noise_{std::move(noise)}, interval_{interval} {
    if (noise_.rows() == 0 || noise_.rows() != noise_.cols())
      throw InvalidInput("ObservationModel: R must be square and nonempty");
    if (!noise_.allFinite() || !noise_.isApprox(noise_.transpose(), 1e-12))
      throw InvalidInput("ObservationModel: R must be finite and symmetric");
    chol_.compute(noise_);
    if (chol_.info() != Eigen::Success) throw InvalidInput("ObservationModel: R is not positive definite");
    if (!(interval_ > 0.0)) throw InvalidInput("ObservationModel: observation interval must be positive");
    double log_det = 0.0;
    const Eigen::MatrixXd l = chol_.matrixL();
    for (Eigen::Index k = 0; k < l.rows(); ++k) log_det += 2.0 * std::log(l(k, k));
    log_normalization_ =
        -0.5 * static_cast<double>(obs_dim()) * std::log(2.0 * std::numbers::pi) - 0.5 * log_det;
  }

  ForwardMap forward_;
  Eigen::MatrixXd noise_;
  double interval_;
  Eigen::LLT<Eigen::MatrixXd> chol_;
  std::optional<Eigen::MatrixXd> linear_;
  double log_normalization_ = 0.0;
};

/// (2 pi)^{-K/2} |R|^{-1/2} exp(-(y - h(x))^T R^{-1} (y - h(x)) / 2).
inline double gaussian_likelihood(const ObservationModel& model, const Eigen::VectorXd& y, const Eigen::VectorXd& x) {
  return model.likelihood(y, x);
}

/// Reference trajectory sampled at t_k = k * interval, k = 1..steps, with
/// the matching noisy observations. `initial` is the state at t = 0.
struct SyntheticData {
  Eigen::VectorXd initial;
  Eigen::MatrixXd reference;
  Eigen::MatrixXd observations;
  Eigen::VectorXd times;
  double dt = 0.0;
};

inline SyntheticData synthesize_observations(const VectorField& field, const ObservationModel& model,
                                             const Eigen::VectorXd& x0, Eigen::Index steps, double dt,
                                             CounterRng& rng) {
  if (steps < 0) throw InvalidInput("synthesize_observations: negative step count");
  SyntheticData data;
  data.initial = x0;
  data.dt = dt;
  data.reference.resize(x0.size(), steps);
  data.observations.resize(model.obs_dim(), steps);
  data.times.resize(steps);
  const Eigen::MatrixXd l = model.noise_factor();
  Eigen::VectorXd x = x0;
  Eigen::VectorXd z(model.obs_dim());
  for (Eigen::Index k = 0; k < steps; ++k) {
    x = propagate(field, x, model.interval(), dt);
    for (Eigen::Index c = 0; c < z.size(); ++c) z(c) = rng.normal();
    data.reference.col(k) = x;
    data.observations.col(k) = model.predict(x) + l * z;
    data.times(k) = static_cast<double>(k + 1) * model.interval();
  }
  return data;
}

}  // namespace otpf
