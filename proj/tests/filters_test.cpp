#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "otpf/filters.hpp"
#include "otpf/random.hpp"

namespace otpf {
namespace {

Eigen::MatrixXd random_states(CounterRng& rng, Eigen::Index n, Eigen::Index m, double scale = 1.0) {
  Eigen::MatrixXd x(n, m);
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = scale * rng.normal();
  return x;
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd a = x.colwise() - x.rowwise().mean();
  return a * a.transpose() / static_cast<double>(x.cols() - 1);
}

TEST(FilterMethod, ParseAndPrint) {
  EXPECT_EQ(parse_filter_method("ETPF"), FilterMethod::ETPF);
  EXPECT_EQ(parse_filter_method("esrf"), FilterMethod::ESRF);
  EXPECT_EQ(to_string(FilterMethod::ESRF), "ESRF");
  EXPECT_THROW(parse_filter_method("enkf"), InvalidInput);
}

TEST(EtpfAnalysis, UninformativeObservationKeepsForecast) {
  CounterRng rng(1);
  const Ensemble forecast{random_states(rng, 3, 12)};
  const auto model = ObservationModel::identity(3, 1e8, 0.1);
  const auto out = etpf_analysis(forecast, Eigen::Vector3d(0.5, -0.5, 0.0), model);
  EXPECT_LE((out.states - forecast.states).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(EtpfAnalysis, WorkedExampleViaLikelihoodRatio) {
  // Unit noise; y chosen so that L(0) / L(1) = 3, i.e. y = 1/2 + ln 3.
  Eigen::MatrixXd x(1, 2);
  x << 0.0, 1.0;
  const auto model = ObservationModel::identity(1, 1.0, 0.1);
  const auto detail = etpf_analysis_detailed(Ensemble{x}, Eigen::VectorXd::Constant(1, 0.5 - std::log(3.0)), model);
  EXPECT_NEAR(detail.weights(0), 0.75, 1e-14);
  EXPECT_NEAR(detail.analysis.states(0, 0), 0.0, 1e-14);
  EXPECT_NEAR(detail.analysis.states(0, 1), 0.5, 1e-14);
  EXPECT_FALSE(detail.analysis.weights.has_value());
}

TEST(EtpfAnalysis, MeanIdentityAndConvexHullOnRandomInstances) {
  CounterRng rng(2);
  const auto model = ObservationModel::identity(2, 0.5, 0.1);
  for (int rep = 0; rep < 50; ++rep) {
    const Ensemble forecast{random_states(rng, 2, 5 + rep % 20)};
    const Eigen::Vector2d y(rng.normal(), rng.normal());
    const auto d = etpf_analysis_detailed(forecast, y, model);
    EXPECT_LE((d.analysis.mean() - forecast.states * d.weights).norm(), 1e-10);
    for (Eigen::Index c = 0; c < 2; ++c) {
      EXPECT_GE(d.analysis.states.row(c).minCoeff(), forecast.states.row(c).minCoeff() - 1e-12);
      EXPECT_LE(d.analysis.states.row(c).maxCoeff(), forecast.states.row(c).maxCoeff() + 1e-12);
    }
  }
}

TEST(EtpfAnalysis, FarOutlyingObservationStillUsable) {
  CounterRng rng(3);
  const Ensemble forecast{random_states(rng, 3, 10)};
  const auto model = ObservationModel::identity(3, 1e-4, 0.1);
  const auto out = etpf_analysis(forecast, Eigen::Vector3d(1e3, 1e3, 1e3), model);
  EXPECT_TRUE(out.states.allFinite());
}

TEST(EsrfAnalysis, UninformativeObservationKeepsForecast) {
  CounterRng rng(4);
  const Ensemble forecast{random_states(rng, 3, 12)};
  const auto out = esrf_analysis(forecast, Eigen::Vector3d(5.0, 5.0, 5.0), ObservationModel::identity(3, 1e8, 0.1));
  EXPECT_LE((out.states - forecast.states).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(EsrfAnalysis, ScalarConjugateUpdate) {
  // Members 0 and 2: mean 1 and unbiased variance 2.
  Eigen::MatrixXd x(1, 2);
  x << 0.0, 2.0;
  const auto out = esrf_analysis(Ensemble{x}, Eigen::VectorXd::Constant(1, 0.1), ObservationModel::identity(1, 2.0, 1.0));
  EXPECT_NEAR(out.mean()(0), 0.55, 1e-10);
  EXPECT_NEAR(sample_covariance(out.states)(0, 0), 1.0, 1e-10);
}

TEST(EsrfAnalysis, MatchesKalmanMeanAndCovariance) {
  CounterRng rng(5);
  Eigen::MatrixXd h(2, 3);
  h << 1.0, 0.0, 0.5, 0.0, 1.0, -1.0;
  Eigen::Matrix2d r;
  r << 0.7, 0.1, 0.1, 0.4;
  const auto model = ObservationModel::linear(h, r, 0.1);
  for (int rep = 0; rep < 20; ++rep) {
    const Ensemble forecast{random_states(rng, 3, 8, 2.0)};
    const Eigen::Vector2d y(rng.normal(), rng.normal());
    const auto out = esrf_analysis(forecast, y, model);

    const Eigen::MatrixXd pf = sample_covariance(forecast.states);
    const Eigen::VectorXd mf = forecast.mean();
    const Eigen::MatrixXd k = pf * h.transpose() * (h * pf * h.transpose() + r).inverse();
    const Eigen::VectorXd ma = mf + k * (y - h * mf);
    const Eigen::MatrixXd pa = (Eigen::MatrixXd::Identity(3, 3) - k * h) * pf;
    EXPECT_LE((out.mean() - ma).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((sample_covariance(out.states) - pa).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(EsrfAnalysis, TransformIsSymmetricPositiveDefinite) {
  CounterRng rng(6);
  const Eigen::MatrixXd y = random_states(rng, 3, 7);
  const auto t = esrf_transform(y, ObservationModel::identity(3, 0.5, 0.1));
  EXPECT_LE((t - t.transpose()).cwiseAbs().maxCoeff(), 1e-14);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(t);
  EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
  EXPECT_EQ(t, esrf_transform(y, ObservationModel::identity(3, 0.5, 0.1)));
}

TEST(EsrfAnalysis, Preconditions) {
  const auto model = ObservationModel::identity(1, 1.0, 0.1);
  EXPECT_THROW(esrf_analysis(Ensemble{Eigen::MatrixXd::Zero(1, 1)}, Eigen::VectorXd::Zero(1), model), InvalidInput);
  EXPECT_THROW(esrf_analysis(Ensemble{Eigen::MatrixXd::Zero(1, 2), Eigen::Vector2d(0.3, 0.7)}, Eigen::VectorXd::Zero(1),
                             model),
               InvalidInput);
  const auto nonlinear = ObservationModel::nonlinear([](const Eigen::VectorXd& x) { return x; },
                                                     Eigen::MatrixXd::Identity(1, 1), 0.1);
  EXPECT_THROW(esrf_analysis(Ensemble{Eigen::MatrixXd::Zero(1, 3)}, Eigen::VectorXd::Zero(1), nonlinear), InvalidInput);
}

TEST(Inflate, Examples) {
  Eigen::MatrixXd x(1, 2);
  x << -1.0, 1.0;
  const auto out = inflate(Ensemble{x}, 2.0);
  EXPECT_DOUBLE_EQ(out.states(0, 0), -2.0);
  EXPECT_DOUBLE_EQ(out.states(0, 1), 2.0);
  EXPECT_EQ(inflate(Ensemble{x}, 1.0).states, x);
  EXPECT_THROW(inflate(Ensemble{x}, 0.9), InvalidInput);
}

TEST(Inflate, MeanPreservedCovarianceScaled) {
  CounterRng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    const Ensemble e{random_states(rng, 3, 10)};
    const double lambda = 1.0 + rng.uniform();
    const auto out = inflate(e, lambda);
    EXPECT_LE((out.mean() - e.mean()).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LE((sample_covariance(out.states) - lambda * lambda * sample_covariance(e.states)).cwiseAbs().maxCoeff(),
              1e-12);
  }
}

FilterConfig static_config(Eigen::Index m, double variance, Eigen::Index steps, std::uint64_t seed) {
  return FilterConfig{.ensemble_size = m,
                      .inflation = 1.0,
                      .model = ObservationModel::identity(3, variance, 0.1),
                      .field = zero_field(3),
                      .dt = 0.05,
                      .steps = steps,
                      .seed = seed};
}

SyntheticData static_data(const FilterConfig& cfg, std::uint64_t seed) {
  CounterRng rng(seed, 0);
  return synthesize_observations(cfg.field, cfg.model, Eigen::Vector3d(0.5, -1.0, 2.0), cfg.steps, cfg.dt, rng);
}

TEST(RunFilter, EsrfContractsOnStaticState) {
  const double variance = 1e-4;
  const auto cfg = static_config(20, variance, 10, 9);
  const auto diag = run_filter(cfg, FilterMethod::ESRF, static_data(cfg, 9));
  ASSERT_EQ(diag.rmse.size(), 10u);
  EXPECT_FALSE(diag.diverged);
  EXPECT_LT(*std::min_element(diag.rmse.begin(), diag.rmse.end()), std::sqrt(variance) / 3.0);
}

TEST(RunFilter, EtpfAnalysisMeanStaysCloseOnStaticState) {
  auto cfg = static_config(30, 0.01, 10, 10);
  const auto diag = run_filter(cfg, FilterMethod::ETPF, static_data(cfg, 10));
  EXPECT_FALSE(diag.diverged);
  EXPECT_LT(diag.rmse.back(), diag.rmse.front() + 1e-12);
}

TEST(RunFilter, SingleStepDiagnostics) {
  const auto cfg = static_config(5, 1.0, 1, 1);
  const auto diag = run_filter(cfg, FilterMethod::ESRF, static_data(cfg, 1));
  EXPECT_EQ(diag.rmse.size(), 1u);
  EXPECT_EQ(diag.analysis_means.cols(), 1);
  EXPECT_DOUBLE_EQ(diag.time_averaged_rmse, diag.rmse[0]);
}

TEST(RunFilter, Deterministic) {
  auto cfg = FilterConfig{.ensemble_size = 15,
                          .inflation = 1.05,
                          .model = ObservationModel::identity(3, 8.0, 0.12),
                          .field = lorenz63_field(),
                          .dt = 0.01,
                          .steps = 20,
                          .seed = 3,
                          .rejuvenation = 0.2};
  CounterRng rng(3, 0);
  const auto data = synthesize_observations(cfg.field, cfg.model, Eigen::Vector3d(1, 1, 1), cfg.steps, cfg.dt, rng);
  for (const auto method : {FilterMethod::ETPF, FilterMethod::ESRF}) {
    const auto a = run_filter(cfg, method, data);
    const auto b = run_filter(cfg, method, data);
    EXPECT_EQ(a.rmse, b.rmse);
    EXPECT_EQ(a.analysis_means, b.analysis_means);
  }
}

TEST(RunFilter, RejuvenationChangesOnlyEtpf) {
  auto cfg = static_config(10, 1.0, 5, 4);
  const auto data = static_data(cfg, 4);
  const auto esrf_plain = run_filter(cfg, FilterMethod::ESRF, data);
  const auto etpf_plain = run_filter(cfg, FilterMethod::ETPF, data);
  cfg.rejuvenation = 0.3;
  EXPECT_EQ(run_filter(cfg, FilterMethod::ESRF, data).rmse, esrf_plain.rmse);
  EXPECT_NE(run_filter(cfg, FilterMethod::ETPF, data).rmse, etpf_plain.rmse);
}

TEST(RunFilter, DivergenceIsFlaggedAndRunStops) {
  auto cfg = static_config(10, 1.0, 20, 5);
  cfg.divergence_threshold = 1e-6;
  const auto diag = run_filter(cfg, FilterMethod::ESRF, static_data(cfg, 5));
  EXPECT_TRUE(diag.diverged);
  ASSERT_TRUE(diag.divergence_step.has_value());
  EXPECT_EQ(*diag.divergence_step, 0);
  EXPECT_EQ(diag.rmse.size(), 1u);
}

TEST(RunFilter, AnalysisErrorsBecomeDivergence) {
  // A non-linear forward map is not supported by the ESRF.
  auto cfg = static_config(10, 1.0, 5, 6);
  const auto data = static_data(cfg, 6);
  cfg.model = ObservationModel::nonlinear([](const Eigen::VectorXd& x) { return x; }, Eigen::Matrix3d::Identity(), 0.1);
  const auto diag = run_filter(cfg, FilterMethod::ESRF, data);
  EXPECT_TRUE(diag.diverged);
  EXPECT_TRUE(diag.rmse.empty());
  EXPECT_FALSE(diag.failure.empty());
}

TEST(RunFilter, InvalidConfigs) {
  auto cfg = static_config(1, 1.0, 5, 0);
  const auto data = static_data(static_config(5, 1.0, 5, 0), 0);
  EXPECT_THROW(run_filter(cfg, FilterMethod::ESRF, data), InvalidInput);
  cfg = static_config(5, 1.0, 5, 0);
  cfg.inflation = 0.5;
  EXPECT_THROW(run_filter(cfg, FilterMethod::ESRF, data), InvalidInput);
  cfg = static_config(5, 1.0, 5, 0);
  cfg.dt = 0.03;
  EXPECT_THROW(run_filter(cfg, FilterMethod::ESRF, data), InvalidInput);
  cfg = static_config(5, 1.0, 6, 0);
  EXPECT_THROW(run_filter(cfg, FilterMethod::ESRF, data), InvalidInput);
}

TEST(Diagnostics, TimeAverageDropsBurnIn) {
  const std::vector<double> series{100.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0};
  EXPECT_DOUBLE_EQ(time_average(series, 10, 0.1), 5.0);
  EXPECT_DOUBLE_EQ(time_average(series, 10, 0.0), 14.5);
  EXPECT_TRUE(std::isnan(time_average({1.0}, 10, 0.1)));
}

TEST(Diagnostics, RmseDefinition) {
  EXPECT_DOUBLE_EQ(rmse(Eigen::Vector3d(1, 1, 1), Eigen::Vector3d(0, 0, 0)), 1.0);
  EXPECT_DOUBLE_EQ(rmse(Eigen::Vector2d(3, 0), Eigen::Vector2d(0, 0)), std::sqrt(4.5));
}

TEST(Diagnostics, CsvLayout) {
  FilterDiagnostics d;
  d.times = {0.1, 0.2};
  d.rmse = {0.5, 0.25};
  d.time_averaged_rmse = 0.375;
  std::ostringstream os;
  write_diagnostics_csv(os, d, 1.05);
  EXPECT_EQ(os.str(), "step,time,rmse,diverged\n1,0.10000000000000001,0.5,0\n2,0.20000000000000001,0.25,0\n"
                      "summary,time_averaged_rmse=0.375,inflation=1.05,diverged=0\n");
}

}  // namespace
}  // namespace otpf
