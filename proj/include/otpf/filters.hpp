#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "otpf/dynamics.hpp"
#include "otpf/ensemble.hpp"
#include "otpf/ensemble_transform.hpp"
#include "otpf/error.hpp"
#include "otpf/inference.hpp"
#include "otpf/random.hpp"
#include "otpf/transport.hpp"

namespace otpf {

enum class FilterMethod { ETPF, ESRF };

inline std::string_view to_string(FilterMethod method) { return method == FilterMethod::ETPF ? "ETPF" : "ESRF"; }

inline FilterMethod parse_filter_method(std::string_view text) {
  if (text == "ETPF" || text == "etpf" || text == "et") return FilterMethod::ETPF;
  if (text == "ESRF" || text == "esrf") return FilterMethod::ESRF;
  throw InvalidInput("unknown filter method '" + std::string(text) + "'");
}

/// Intermediate products of one ensemble transform analysis.
struct EtpfAnalysis {
  Ensemble analysis;
  Eigen::VectorXd weights;
  Coupling coupling;
  TransitionMatrix transition;
};

/**
 * Likelihoods -> importance weights -> optimal coupling between the weighted
 * and the uniform forecast -> X^a = X^f P. Weights are formed from
 * log-likelihoods shifted by their maximum, which leaves them unchanged and
 * avoids underflow for outlying members.
 */
inline EtpfAnalysis etpf_analysis_detailed(const Ensemble& forecast, const Eigen::VectorXd& observation,
                                           const ObservationModel& model, const TransportOptions& options = {}) {
  forecast.validate();
  const Eigen::Index m = forecast.size();
  const Eigen::VectorXd prior = forecast.weights_or_uniform();
  Eigen::VectorXd log_like(m);
  for (Eigen::Index i = 0; i < m; ++i) log_like(i) = model.log_likelihood(observation, forecast.states.col(i));

  EtpfAnalysis out;
  out.weights = importance_weights_from_log(log_like, prior);
  out.coupling = solve_transport(cost_matrix(forecast), MarginalPair{out.weights, prior}, options);
  out.transition = transition_from_coupling(out.coupling, prior);
  out.analysis = et_transform(forecast, out.transition);
  return out;
}

inline Ensemble etpf_analysis(const Ensemble& forecast, const Eigen::VectorXd& observation,
                              const ObservationModel& model, const TransportOptions& options = {}) {
  return etpf_analysis_detailed(forecast, observation, model, options).analysis;
}

/// Symmetric square root (I + Y^T R^-1 Y / (M-1))^{-1/2} acting on forecast
/// anomalies, with Y = H A the observed anomalies.
inline Eigen::MatrixXd esrf_transform(const Eigen::MatrixXd& observed_anomalies, const ObservationModel& model) {
  const Eigen::Index m = observed_anomalies.cols();
  const double scale = 1.0 / static_cast<double>(m - 1);
  const Eigen::MatrixXd whitened = model.noise_factor().triangularView<Eigen::Lower>().solve(observed_anomalies);
  const Eigen::MatrixXd g =
      Eigen::MatrixXd::Identity(m, m) + scale * whitened.transpose() * whitened;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g);
  if (eig.info() != Eigen::Success) throw NumericError("esrf_transform: eigen-decomposition failed");
  const Eigen::VectorXd inv_sqrt = eig.eigenvalues().array().rsqrt();
  return eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
}

/**
 * Deterministic square-root update for a linear forward map H:
 *   mean: x^a = x^f + K (y - H x^f), K = P^f H^T (H P^f H^T + R)^-1
 *   anomalies: A^a = A^f T with T the symmetric square-root transform,
 * so that the analysis sample covariance equals (I - K H) P^f.
 */
inline Ensemble esrf_analysis(const Ensemble& forecast, const Eigen::VectorXd& observation,
                              const ObservationModel& model) {
  forecast.validate();
  if (!model.linear_operator()) throw InvalidInput("esrf_analysis: requires a linear observation operator");
  if (forecast.weights) throw InvalidInput("esrf_analysis: forecast must be uniformly weighted");
  const Eigen::Index m = forecast.size();
  if (m < 2) throw InvalidInput("esrf_analysis: needs at least two members");
  const Eigen::MatrixXd& h = *model.linear_operator();
  if (h.cols() != forecast.dim() || observation.size() != h.rows())
    throw InvalidInput("esrf_analysis: dimension mismatch");

  const Eigen::VectorXd mean = forecast.states.rowwise().mean();
  const Eigen::MatrixXd anomalies = forecast.states.colwise() - mean;
  const Eigen::MatrixXd observed = h * anomalies;
  const double scale = 1.0 / static_cast<double>(m - 1);

  const Eigen::MatrixXd innovation_cov = scale * observed * observed.transpose() + model.noise();
  const Eigen::LLT<Eigen::MatrixXd> chol(innovation_cov);
  if (chol.info() != Eigen::Success) throw NumericError("esrf_analysis: singular innovation covariance");
  const Eigen::VectorXd innovation = observation - h * mean;
  const Eigen::VectorXd mean_a = mean + scale * anomalies * (observed.transpose() * chol.solve(innovation));

  const Eigen::MatrixXd anomalies_a = anomalies * esrf_transform(observed, model);
  return Ensemble{anomalies_a.colwise() + mean_a};
}

/// x_i <- mean + lambda (x_i - mean).
inline Ensemble inflate(const Ensemble& ensemble, double lambda) {
  if (!(lambda >= 1.0)) throw InvalidInput("inflate: factor must be at least 1");
  const Eigen::VectorXd mean = ensemble.mean();
  Eigen::MatrixXd x = (lambda * (ensemble.states.colwise() - mean)).colwise() + mean;
  return Ensemble{std::move(x), ensemble.weights};
}

struct FilterConfig {
  Eigen::Index ensemble_size = 20;
  double inflation = 1.0;
  ObservationModel model;
  VectorField field;
  double dt = 0.01;
  Eigen::Index steps = 1;
  std::uint64_t seed = 0;
  /// Standard deviation of the initial perturbations around the reference.
  double initial_spread = 1.0;
  /// Per-step RMSE above this, or a non-finite state, flags divergence.
  double divergence_threshold = 100.0;
  /// Leading fraction of steps excluded from the time average.
  double burn_in_fraction = 0.1;
  /// ETPF only: after each analysis every member receives independent
  /// N(0, h^2 P^f) noise, P^f the sample covariance of the inflated forecast.
  /// Zero disables it.
  double rejuvenation = 0.0;
  TransportOptions transport{};

  void validate() const {
    if (ensemble_size < 2) throw InvalidInput("FilterConfig: ensemble size must be at least 2");
    if (!(inflation >= 1.0)) throw InvalidInput("FilterConfig: inflation must be at least 1");
    if (steps < 1) throw InvalidInput("FilterConfig: need at least one assimilation step");
    if (!(dt > 0.0)) throw InvalidInput("FilterConfig: dt must be positive");
    const double ratio = model.interval() / dt;
    if (std::abs(std::round(ratio) * dt - model.interval()) > 1e-12)
      throw InvalidInput("FilterConfig: observation interval must be an integer multiple of dt");
    if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0))
      throw InvalidInput("FilterConfig: burn-in fraction must lie in [0, 1)");
    if (!(rejuvenation >= 0.0)) throw InvalidInput("FilterConfig: rejuvenation must be nonnegative");
  }
};

struct FilterDiagnostics {
  std::vector<double> times;
  Eigen::MatrixXd analysis_means;
  std::vector<double> rmse;
  double time_averaged_rmse = std::numeric_limits<double>::quiet_NaN();
  bool diverged = false;
  std::optional<Eigen::Index> divergence_step;
  std::string failure;
};

/// sqrt(|mean - reference|^2 / N).
inline double rmse(const Eigen::VectorXd& mean, const Eigen::VectorXd& reference) {
  return std::sqrt((mean - reference).squaredNorm() / static_cast<double>(mean.size()));
}

/// Mean of per-step RMSE after discarding floor(burn_in_fraction * steps) leading entries.
inline double time_average(const std::vector<double>& series, Eigen::Index planned_steps, double burn_in_fraction) {
  const auto burn = static_cast<std::size_t>(std::floor(burn_in_fraction * static_cast<double>(planned_steps)));
  if (series.size() <= burn) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (std::size_t k = burn; k < series.size(); ++k) sum += series[k];
  return sum / static_cast<double>(series.size() - burn);
}

/// Symmetric square root of the M-1 normalised sample covariance.
inline Eigen::MatrixXd covariance_sqrt(const Ensemble& ensemble) {
  const Eigen::MatrixXd a = ensemble.states.colwise() - ensemble.states.rowwise().mean();
  const Eigen::MatrixXd cov = a * a.transpose() / static_cast<double>(ensemble.size() - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

/**
 * Alternates propagation over one observation interval, multiplicative
 * inflation of the forecast, and the chosen analysis (plus rejuvenation for
 * the ETPF when enabled). The initial ensemble is data.initial plus
 * N(0, initial_spread^2) perturbations drawn from `seed`; rejuvenation noise
 * uses a separate stream of the same seed. On divergence or an analysis
 * failure the run stops and returns the steps completed so far.
 */
inline FilterDiagnostics run_filter(const FilterConfig& config, FilterMethod method, const SyntheticData& data) {
  config.validate();
  const Eigen::Index n = data.initial.size();
  const Eigen::Index m = config.ensemble_size;
  const Eigen::Index steps = config.steps;
  if (data.reference.cols() < steps || data.observations.cols() < steps)
    throw InvalidInput("run_filter: synthetic data shorter than the requested number of steps");

  CounterRng rng(config.seed, 1);
  CounterRng jitter(config.seed, 2);
  Eigen::MatrixXd states(n, m);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index c = 0; c < n; ++c) states(c, j) = data.initial(c) + config.initial_spread * rng.normal();
  Ensemble ensemble{std::move(states)};

  FilterDiagnostics diag;
  diag.analysis_means.resize(n, 0);
  std::vector<Eigen::VectorXd> means;
  auto fail = [&](Eigen::Index k, std::string why) {
    diag.diverged = true;
    diag.divergence_step = k;
    diag.failure = std::move(why);
  };

  for (Eigen::Index k = 0; k < steps; ++k) {
    try {
      for (Eigen::Index j = 0; j < m; ++j)
        ensemble.states.col(j) = propagate(config.field, ensemble.states.col(j), config.model.interval(), config.dt);
      if (!ensemble.states.allFinite()) {
        fail(k, "non-finite forecast state");
        break;
      }
      Ensemble forecast = inflate(ensemble, config.inflation);
      const Eigen::VectorXd y = data.observations.col(k);
      if (method == FilterMethod::ETPF) {
        ensemble = etpf_analysis(forecast, y, config.model, config.transport);
        if (config.rejuvenation > 0.0) {
          const Eigen::MatrixXd root = config.rejuvenation * covariance_sqrt(forecast);
          Eigen::VectorXd z(n);
          for (Eigen::Index j = 0; j < m; ++j) {
            for (Eigen::Index c = 0; c < n; ++c) z(c) = jitter.normal();
            ensemble.states.col(j) += root * z;
          }
        }
      } else {
        ensemble = esrf_analysis(forecast, y, config.model);
      }
    } catch (const std::exception& e) {
      fail(k, e.what());
      break;
    }
    const Eigen::VectorXd mean = ensemble.mean();
    const double err = rmse(mean, data.reference.col(k));
    diag.times.push_back(data.times(k));
    diag.rmse.push_back(err);
    means.push_back(mean);
    if (!std::isfinite(err) || err > config.divergence_threshold) {
      fail(k, "RMSE above divergence threshold");
      break;
    }
  }

  diag.analysis_means.resize(n, static_cast<Eigen::Index>(means.size()));
  for (std::size_t k = 0; k < means.size(); ++k) diag.analysis_means.col(static_cast<Eigen::Index>(k)) = means[k];
  diag.time_averaged_rmse = time_average(diag.rmse, steps, config.burn_in_fraction);
  return diag;
}

/// step,time,rmse,diverged rows followed by a summary row.
inline void write_diagnostics_csv(std::ostream& os, const FilterDiagnostics& diag, double inflation) {
  os << "step,time,rmse,diverged\n";
  const auto old_precision = os.precision(17);
  for (std::size_t k = 0; k < diag.rmse.size(); ++k) {
    const bool flagged = diag.divergence_step && static_cast<std::size_t>(*diag.divergence_step) == k;
    os << (k + 1) << ',' << diag.times[k] << ',' << diag.rmse[k] << ',' << (flagged ? 1 : 0) << '\n';
  }
  os << "summary,time_averaged_rmse=" << diag.time_averaged_rmse << ",inflation=" << inflation
     << ",diverged=" << (diag.diverged ? 1 : 0) << '\n';
  os.precision(old_precision);
}

}  // namespace otpf
