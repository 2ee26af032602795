#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pcpo/errors.hpp"
#include "pcpo/rollout.hpp"

using namespace pcpo;

namespace {

SystemTuple scalar_system(double a, double b, double q, double r, double gamma) {
  return SystemTuple::validated(Eigen::MatrixXd::Constant(1, 1, a),
                                Eigen::MatrixXd::Constant(1, 1, b),
                                Eigen::MatrixXd::Constant(1, 1, q),
                                Eigen::MatrixXd::Constant(1, 1, r), gamma);
}

Policy scalar_policy(double k) { return Policy{Eigen::MatrixXd::Constant(1, 1, k)}; }

SystemTuple planar_no_dynamics() {
  return SystemTuple::validated(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Identity(2, 2),
                                Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2),
                                0.9);
}

}  // namespace

TEST_CASE("sphere noise has exact radius and identity covariance") {
  const NoiseModel model = NoiseModel::sphere_uniform(3);
  CHECK(model.norm_bound() == 3.0);
  RngStream rng(1, 0, 0, Draw::Test);

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d second = Eigen::Matrix3d::Zero();
  const int draws = 1000000;
  for (int i = 0; i < draws; ++i) {
    const Eigen::VectorXd z = model.sample(rng);
    CHECK(std::abs(z.squaredNorm() - 3.0) < 1e-12);
    mean += z;
    second += z * z.transpose();
  }
  mean /= draws;
  second /= draws;
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(mean(i)) < 4.0 / std::sqrt(static_cast<double>(draws)));
    for (int j = 0; j < 3; ++j) {
      CHECK(std::abs(second(i, j) - (i == j ? 1.0 : 0.0)) < 0.01);
    }
  }
}

TEST_CASE("scalar sphere noise is a fair sign flip") {
  const NoiseModel model = NoiseModel::sphere_uniform(1);
  RngStream rng(2, 0, 0, Draw::Test);
  int pos = 0;
  for (int i = 0; i < 10000; ++i) {
    const double z = model.sample(rng)(0);
    CHECK(std::abs(std::abs(z) - 1.0) < 1e-12);
    pos += z > 0 ? 1 : 0;
  }
  CHECK(pos > 4700);
  CHECK(pos < 5300);
}

TEST_CASE("truncated gaussian noise is bounded with identity covariance") {
  const int n = 2;
  const NoiseModel model = NoiseModel::truncated_gaussian(n, 4.0 * n);
  CHECK(model.norm_bound() > 4.0 * n);  // rescaling enlarges the bound
  RngStream rng(3, 0, 0, Draw::Test);
  Eigen::Matrix2d second = Eigen::Matrix2d::Zero();
  const int draws = 400000;
  for (int i = 0; i < draws; ++i) {
    const Eigen::VectorXd z = model.sample(rng);
    CHECK(z.squaredNorm() <= model.norm_bound() + 1e-12);
    second += z * z.transpose();
  }
  second /= draws;
  CHECK(second(0, 0) == doctest::Approx(1.0).epsilon(0.02));
  CHECK(second(1, 1) == doctest::Approx(1.0).epsilon(0.02));
  CHECK(std::abs(second(0, 1)) < 0.01);
}

TEST_CASE("horizon sizing covers the discounted tail") {
  const RolloutConfig cfg = RolloutConfig::for_cost_bound(0.9, 30.0, 1e-6);
  // gamma^horizon * C_ub / (1 - gamma) <= tol
  CHECK(std::pow(0.9, cfg.horizon) * 30.0 / 0.1 <= 1e-6 * 1.0000001);
  CHECK(std::pow(0.9, cfg.horizon - 1) * 30.0 / 0.1 > 1e-6);
  CHECK_THROWS_AS(RolloutConfig::for_cost_bound(1.0, 30.0), ConfigError);
}

TEST_CASE("rollout_cost degenerate horizons") {
  const auto sys = planar_no_dynamics();
  const Policy K{Eigen::MatrixXd::Zero(2, 2)};
  const NoiseModel noise = NoiseModel::sphere_uniform(2);
  RolloutConfig cfg;
  cfg.horizon = 1;
  const auto r = rollout_cost(sys, K, noise, cfg, RngStream(1, 0, 0, Draw::Test));
  CHECK(r.cost == 0.0);  // starts at the origin; only the t = 0 term exists
  CHECK_FALSE(r.diverged);
}

TEST_CASE("rollout_cost with no dynamics is the discounted noise energy") {
  // x_t = z_{t-1} and u = 0, so the cost is sum_{t>=1} gamma^t * ||z||^2 with
  // ||z||^2 = 2 exactly under sphere noise.
  const auto sys = planar_no_dynamics();
  const Policy K{Eigen::MatrixXd::Zero(2, 2)};
  const NoiseModel noise = NoiseModel::sphere_uniform(2);
  RolloutConfig cfg;
  cfg.horizon = 40;
  double expected = 0.0;
  for (int t = 1; t < cfg.horizon; ++t) expected += std::pow(0.9, t) * 2.0;
  const auto r = rollout_cost(sys, K, noise, cfg, RngStream(9, 0, 0, Draw::Test));
  CHECK(r.cost == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("rollout mean matches the exact cost oracle") {
  const auto sys = scalar_system(0.5, 1.0, 1.0, 1.0, 0.9);
  const Policy K = scalar_policy(0.2);
  const double exact = exact_cost(sys, K);
  const NoiseModel noise = NoiseModel::sphere_uniform(1);
  const RolloutConfig cfg = RolloutConfig::for_cost_bound(0.9, 4.0 * exact, 1e-8);

  const long M = 20000;
  const RngStream stream(77, 0, 0, Draw::Test);
  std::vector<double> costs;
  double sum = 0.0, sum2 = 0.0;
  for (long k = 0; k < M; ++k) {
    RngStream sub = stream.substream(static_cast<std::uint64_t>(k));
    const double c = rollout_cost(sys, K, noise, cfg, sub).cost;
    sum += c;
    sum2 += c * c;
  }
  const double mean = sum / M;
  const double se = std::sqrt((sum2 / M - mean * mean) / (M - 1));
  CHECK(std::abs(mean - exact) <= 3.0 * se + 1e-8);
}

TEST_CASE("estimate_cost basics and determinism") {
  const auto sys = scalar_system(0.5, 1.0, 1.0, 1.0, 0.9);
  const Policy K = scalar_policy(0.3);
  const NoiseModel noise = NoiseModel::sphere_uniform(1);
  const RolloutConfig cfg = RolloutConfig::for_cost_bound(0.9, 50.0);
  const RngStream stream(5, 2, 3, Draw::CostEstimation);

  // A single-element minibatch is exactly one rollout.
  const auto single = estimate_cost(sys, K, 1, noise, cfg, stream);
  RngStream sub = stream.substream(0);
  CHECK(single.value == rollout_cost(sys, K, noise, cfg, sub).cost);

  const auto a = estimate_cost(sys, K, 100, noise, cfg, stream);
  const auto b = estimate_cost(sys, K, 100, noise, cfg, stream);
  CHECK(a.value == b.value);  // bit-identical replay
  CHECK_FALSE(a.diverged);
}

TEST_CASE("divergence is reported, not thrown") {
  const auto sys = scalar_system(2.0, 1.0, 1.0, 1.0, 0.9);
  const Policy K = scalar_policy(0.0);  // closed loop doubles the state
  const NoiseModel noise = NoiseModel::sphere_uniform(1);
  RolloutConfig cfg;
  cfg.horizon = 200;
  const auto r = rollout_cost(sys, K, noise, cfg, RngStream(8, 0, 0, Draw::Test));
  CHECK(r.diverged);
  CHECK(r.cost > 0.0);
  CHECK(std::isfinite(r.cost));

  const auto est = estimate_cost(sys, K, 8, noise, cfg, RngStream(8, 0, 0, Draw::Test));
  CHECK(est.diverged);
}

TEST_CASE("cost samples of distinct agents are uncorrelated") {
  const auto sys = scalar_system(0.5, 1.0, 1.0, 1.0, 0.9);
  const Policy K = scalar_policy(0.3);
  const NoiseModel noise = NoiseModel::sphere_uniform(1);
  RolloutConfig cfg;
  cfg.horizon = 60;
  const int samples = 10000;
  const RngStream s0(4242, 0, 1, Draw::Noise);
  const RngStream s1(4242, 1, 1, Draw::Noise);
  std::vector<double> a(samples), b(samples);
  for (int i = 0; i < samples; ++i) {
    RngStream sa = s0.substream(static_cast<std::uint64_t>(i));
    RngStream sb = s1.substream(static_cast<std::uint64_t>(i));
    a[i] = rollout_cost(sys, K, noise, cfg, sa).cost;
    b[i] = rollout_cost(sys, K, noise, cfg, sb).cost;
  }
  double ma = 0, mb = 0;
  for (int i = 0; i < samples; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= samples;
  mb /= samples;
  double cab = 0, va = 0, vb = 0;
  for (int i = 0; i < samples; ++i) {
    cab += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  const double corr = cab / std::sqrt(va * vb);
  CHECK(std::abs(corr) < 4.0 / std::sqrt(static_cast<double>(samples)));
}

TEST_CASE("estimator deviations respect the Hoeffding envelope") {
  const auto sys = scalar_system(0.5, 1.0, 1.0, 1.0, 0.9);
  const Policy K = scalar_policy(0.3);
  const double exact = exact_cost(sys, K);
  const NoiseModel noise = NoiseModel::sphere_uniform(1);
  const RolloutConfig cfg = RolloutConfig::for_cost_bound(0.9, 4.0 * exact, 1e-8);

  const int trials = 200;
  const long M = 400;
  std::vector<double> estimates(trials);
  double max_cost = 0.0;
  for (int t = 0; t < trials; ++t) {
    const RngStream stream(1000, 0, 0, Draw::Test, static_cast<std::uint32_t>(t));
    estimates[t] = estimate_cost(sys, K, M, noise, cfg, stream).value;
    for (long k = 0; k < M; ++k) {
      RngStream sub = stream.substream(static_cast<std::uint64_t>(k));
      max_cost = std::max(max_cost, rollout_cost(sys, K, noise, cfg, sub).cost);
    }
  }
  // Two-sided Hoeffding with range G: P(|mean - mu| >= s) <= 2 exp(-2 s^2 M / G^2).
  // At the 5% level s = G sqrt(log(2/0.05) / (2 M)); allow binomial slack on
  // top of the nominal rate.
  const double s = max_cost * std::sqrt(std::log(2.0 / 0.05) / (2.0 * M));
  int exceed = 0;
  for (double e : estimates) {
    if (std::abs(e - exact) > s + 1e-8) ++exceed;
  }
  const double slack = 4.0 * std::sqrt(trials * 0.05 * 0.95);
  CHECK(exceed <= static_cast<int>(0.05 * trials + slack));
}
