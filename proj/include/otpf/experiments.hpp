#pragma once

#include <Eigen/Dense>
#include <boost/math/special_functions/erf.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "otpf/dynamics.hpp"
#include "otpf/ensemble.hpp"
#include "otpf/ensemble_transform.hpp"
#include "otpf/filters.hpp"
#include "otpf/inference.hpp"
#include "otpf/random.hpp"
#include "otpf/transport.hpp"

namespace otpf {

struct ScalarPrior {
  enum class Kind { Gaussian, Uniform01 };
  Kind kind = Kind::Uniform01;
  double mean = 0.0;
  double variance = 1.0;

  static ScalarPrior gaussian(double mean, double variance) { return {Kind::Gaussian, mean, variance}; }
  static ScalarPrior uniform01() { return {Kind::Uniform01, 0.5, 1.0 / 12.0}; }
};

/// Standard normal quantile, sqrt(2) erfinv(2u - 1).
inline double normal_quantile(double u) { return std::sqrt(2.0) * boost::math::erf_inv(2.0 * u - 1.0); }

/// Midpoint quantiles u_i = 1/(2M) + (i-1)/M pushed through the prior's
/// inverse CDF; sorted ascending.
inline Eigen::VectorXd deterministic_quantile_samples(Eigen::Index m, const ScalarPrior& prior) {
  if (m < 1) throw InvalidInput("deterministic_quantile_samples: M must be positive");
  Eigen::VectorXd x(m);
  const double md = static_cast<double>(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double u = 1.0 / (2.0 * md) + static_cast<double>(i) / md;
    x(i) = prior.kind == ScalarPrior::Kind::Uniform01 ? u
                                                      : prior.mean + std::sqrt(prior.variance) * normal_quantile(u);
  }
  return x;
}

/// One row of a moment table. `variance` carries the M/(M-1) sample
/// correction; the third and fourth central moments are plain ensemble
/// averages.
struct MomentRow {
  Eigen::Index m = 0;
  double mean = 0.0;
  double variance = 0.0;
  double third = 0.0;
  double fourth = 0.0;
};

inline MomentRow moment_row(const Eigen::VectorXd& values) {
  const auto m = values.size();
  const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  const auto mom = weighted_moments(WeightedSamples{values.transpose(), uniform});
  const double correction = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
  return {m, mom.mean(0), mom.variance(0) * correction, mom.third(0), mom.fourth(0)};
}

/// Settings shared by both scalar experiments: a direct observation y0 of the
/// state with noise variance 2, i.e. likelihood exp(-(y - x)^2 / 4) / sqrt(4 pi).
struct ScalarSetting {
  double observation = 0.1;
  double noise_variance = 2.0;
};

struct ScalarExperiment {
  Ensemble prior;
  Eigen::VectorXd weights;
  Coupling coupling;
  TransitionMatrix transition;
  Ensemble posterior;
  MomentRow row;
};

inline ScalarExperiment scalar_experiment(const Eigen::VectorXd& samples, const ScalarSetting& setting = {}) {
  const Eigen::Index m = samples.size();
  if (m < 2) throw InvalidInput("scalar_experiment: M must be at least 2");
  const auto model = ObservationModel::identity(1, setting.noise_variance, 1.0);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(1, setting.observation);

  ScalarExperiment out;
  out.prior = Ensemble{samples.transpose()};
  Eigen::VectorXd likelihoods(m);
  for (Eigen::Index i = 0; i < m; ++i) likelihoods(i) = gaussian_likelihood(model, y, out.prior.states.col(i));
  const Eigen::VectorXd uniform = out.prior.weights_or_uniform();
  out.weights = importance_weights(likelihoods, uniform);
  out.coupling = solve_transport(cost_matrix(out.prior), MarginalPair{out.weights, uniform});
  out.transition = transition_from_coupling(out.coupling, uniform);
  out.posterior = et_transform(out.prior, out.transition);
  out.row = moment_row(out.posterior.states.row(0).transpose());
  return out;
}

/// Prior N(1, 2) observed at y0 = 0.1 with noise variance 2; posterior N(0.55, 1).
inline ScalarExperiment scalar_gaussian_experiment(Eigen::Index m) {
  return scalar_experiment(deterministic_quantile_samples(m, ScalarPrior::gaussian(1.0, 2.0)));
}

/// Prior U[0, 1], same likelihood and observation as the Gaussian case.
inline ScalarExperiment scalar_uniform_experiment(Eigen::Index m) {
  return scalar_experiment(deterministic_quantile_samples(m, ScalarPrior::uniform01()));
}

inline AnalyticPosterior gaussian_example_posterior() {
  // Conjugate update of N(1, 2) by y0 = 0.1 with noise variance 2.
  const double prior_mean = 1.0, prior_var = 2.0, y = 0.1, r = 2.0;
  const double gain = prior_var / (prior_var + r);
  return AnalyticPosterior::gaussian(prior_mean + gain * (y - prior_mean), (1.0 - gain) * prior_var);
}

inline AnalyticPosterior uniform_example_posterior() {
  return AnalyticPosterior::truncated_gaussian(0.0, 1.0, 0.1, 2.0);
}

struct MapPoint {
  double prior = 0.0;
  double posterior = 0.0;
  double analytic = 0.0;
};

/// Numerical ET map of the Gaussian example next to the exact affine map
/// x -> 0.55 + (x - 1) / sqrt(2).
inline std::vector<MapPoint> transform_map_export(Eigen::Index m) {
  const auto exp = scalar_gaussian_experiment(m);
  const auto post = gaussian_example_posterior();
  const double slope = std::sqrt(post.variance / 2.0);
  std::vector<MapPoint> out;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double x = exp.prior.states(0, i);
    out.push_back({x, exp.posterior.states(0, i), post.mean + slope * (x - 1.0)});
  }
  return out;
}

inline std::vector<IndexPair> support_pattern_export(Eigen::Index m) {
  return support_pattern(scalar_gaussian_experiment(m).coupling);
}

// Lorenz-63 twin experiment ---------------------------------------------------

struct LorenzSetup {
  Lorenz63Params params{};
  double dt = 0.01;
  double obs_interval = 0.12;
  double obs_variance = 8.0;
  double spin_up = 1000.0;
  double initial_spread = 1.0;
  Eigen::Index steps = 500;
  double burn_in_fraction = 0.1;
  double divergence_threshold = 100.0;
  /// Rejuvenation factor for the ETPF; the ESRF never uses it.
  double etpf_rejuvenation = 0.2;
};

struct SweepConfig {
  LorenzSetup setup{};
  std::vector<Eigen::Index> ensemble_sizes{10, 20, 40, 60, 80, 100};
  std::vector<double> inflation_grid{1.0, 1.02, 1.05, 1.08, 1.12, 1.2, 1.3, 1.5};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<FilterMethod> methods{FilterMethod::ETPF, FilterMethod::ESRF};
  /// Worker threads; 0 means OTPF_THREADS or the hardware concurrency.
  unsigned threads = 0;
};

struct SweepRow {
  FilterMethod method = FilterMethod::ETPF;
  Eigen::Index m = 0;
  /// Seed-averaged time-averaged RMSE at the chosen inflation; NaN when every
  /// inflation value diverged for some seed.
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double inflation = std::numeric_limits<double>::quiet_NaN();
  bool diverged = false;
  /// Number of (inflation, seed) runs that diverged in this cell.
  std::size_t diverged_runs = 0;
  std::vector<double> seed_rmse;
};

struct SweepResult {
  std::vector<SweepRow> rows;

  const SweepRow* find(FilterMethod method, Eigen::Index m) const {
    for (const auto& r : rows)
      if (r.method == method && r.m == m) return &r;
    return nullptr;
  }
};

/// Reference state on the attractor: spin-up from (1, 1, 1).
inline Eigen::VectorXd lorenz_reference_start(const LorenzSetup& setup) {
  return propagate(lorenz63_field(setup.params), Eigen::Vector3d(1.0, 1.0, 1.0), setup.spin_up, setup.dt);
}

inline SyntheticData lorenz_data(const LorenzSetup& setup, const Eigen::VectorXd& start, std::uint64_t seed) {
  const auto model = ObservationModel::identity(3, setup.obs_variance, setup.obs_interval);
  CounterRng rng(seed, 0);
  return synthesize_observations(lorenz63_field(setup.params), model, start, setup.steps, setup.dt, rng);
}

inline FilterConfig lorenz_filter_config(const LorenzSetup& setup, FilterMethod method, Eigen::Index m,
                                         double inflation, std::uint64_t seed) {
  return FilterConfig{.ensemble_size = m,
                      .inflation = inflation,
                      .model = ObservationModel::identity(3, setup.obs_variance, setup.obs_interval),
                      .field = lorenz63_field(setup.params),
                      .dt = setup.dt,
                      .steps = setup.steps,
                      .seed = seed,
                      .initial_spread = setup.initial_spread,
                      .divergence_threshold = setup.divergence_threshold,
                      .burn_in_fraction = setup.burn_in_fraction,
                      .rejuvenation = method == FilterMethod::ETPF ? setup.etpf_rejuvenation : 0.0};
}

inline unsigned resolve_threads(unsigned requested) {
  unsigned n = requested;
  if (n == 0) {
    if (const char* env = std::getenv("OTPF_THREADS")) n = static_cast<unsigned>(std::max(0L, std::atol(env)));
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

/// Runs tasks [0, count) on up to `threads` workers; each task writes only its own slot.
template <typename Task>
void parallel_for(std::size_t count, unsigned threads, Task&& task) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < count; k = next++) task(k);
  };
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  if (workers <= 1) {
    worker();
    return;
  }
  std::vector<std::jthread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
}

/**
 * Every (method, M, inflation, seed) run is independent. Per (method, M) the
 * reported inflation minimises the seed-averaged time-averaged RMSE among
 * inflation values for which no seed diverged; ties go to the smaller value.
 */
inline SweepResult lorenz_sweep(const SweepConfig& config) {
  if (config.ensemble_sizes.empty() || config.inflation_grid.empty() || config.seeds.empty() ||
      config.methods.empty())
    throw InvalidInput("lorenz_sweep: empty grid");
  const Eigen::VectorXd start = lorenz_reference_start(config.setup);
  std::vector<SyntheticData> data;
  for (const auto seed : config.seeds) data.push_back(lorenz_data(config.setup, start, seed));

  struct Run {
    std::size_t method, size, lambda, seed;
  };
  std::vector<Run> runs;
  for (std::size_t a = 0; a < config.methods.size(); ++a)
    for (std::size_t b = 0; b < config.ensemble_sizes.size(); ++b)
      for (std::size_t c = 0; c < config.inflation_grid.size(); ++c)
        for (std::size_t d = 0; d < config.seeds.size(); ++d) runs.push_back({a, b, c, d});

  std::vector<FilterDiagnostics> results(runs.size());
  parallel_for(runs.size(), resolve_threads(config.threads), [&](std::size_t k) {
    const auto& r = runs[k];
    const auto cfg = lorenz_filter_config(config.setup, config.methods[r.method], config.ensemble_sizes[r.size],
                                          config.inflation_grid[r.lambda], config.seeds[r.seed]);
    results[k] = run_filter(cfg, config.methods[r.method], data[r.seed]);
  });

  SweepResult out;
  std::size_t k = 0;
  const std::size_t nseeds = config.seeds.size();
  for (std::size_t a = 0; a < config.methods.size(); ++a) {
    for (std::size_t b = 0; b < config.ensemble_sizes.size(); ++b) {
      SweepRow row;
      row.method = config.methods[a];
      row.m = config.ensemble_sizes[b];
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < config.inflation_grid.size(); ++c) {
        double sum = 0.0;
        bool ok = true;
        std::vector<double> per_seed;
        for (std::size_t d = 0; d < nseeds; ++d, ++k) {
          const auto& diag = results[k];
          if (diag.diverged || !std::isfinite(diag.time_averaged_rmse)) {
            ok = false;
            ++row.diverged_runs;
          }
          sum += diag.time_averaged_rmse;
          per_seed.push_back(diag.time_averaged_rmse);
        }
        const double mean = sum / static_cast<double>(nseeds);
        if (ok && mean < best) {
          best = mean;
          row.rmse = mean;
          row.inflation = config.inflation_grid[c];
          row.seed_rmse = std::move(per_seed);
        }
      }
      row.diverged = !std::isfinite(best);
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

// CSV output ----------------------------------------------------------------

namespace detail {

inline std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  std::string s = os.str();
  if (s == "-" + std::string("0.") + std::string(static_cast<std::size_t>(digits), '0')) s.erase(0, 1);
  return s;
}

}  // namespace detail

/// M,mean,variance,third_central,fourth_central with 4 decimals.
inline void write_moment_table(std::ostream& os, const std::vector<MomentRow>& rows) {
  os << "M,mean,variance,third_central,fourth_central\n";
  for (const auto& r : rows)
    os << r.m << ',' << detail::fixed(r.mean, 4) << ',' << detail::fixed(r.variance, 4) << ','
       << detail::fixed(r.third, 4) << ',' << detail::fixed(r.fourth, 4) << '\n';
}

inline void write_map_csv(std::ostream& os, Eigen::Index m, const std::vector<MapPoint>& points) {
  os << "M,prior,posterior,analytic\n";
  for (const auto& p : points)
    os << m << ',' << detail::fixed(p.prior, 10) << ',' << detail::fixed(p.posterior, 10) << ','
       << detail::fixed(p.analytic, 10) << '\n';
}

/// 1-based (i, j) support entries.
inline void write_support_csv(std::ostream& os, Eigen::Index m, const std::vector<IndexPair>& support) {
  os << "M,i,j\n";
  for (const auto& [i, j] : support) os << m << ',' << (i + 1) << ',' << (j + 1) << '\n';
}

inline void write_sweep_csv(std::ostream& os, const SweepResult& result) {
  os << "method,M,rmse,lambda,diverged,diverged_runs\n";
  for (const auto& r : result.rows)
    os << to_string(r.method) << ',' << r.m << ',' << detail::fixed(r.rmse, 6) << ',' << detail::fixed(r.inflation, 2)
       << ',' << (r.diverged ? 1 : 0) << ',' << r.diverged_runs << '\n';
}

}  // namespace otpf
