#include "pcpo/rollout.hpp"

#include <cmath>
#include <vector>

#include "pcpo/errors.hpp"

namespace pcpo {

NoiseModel NoiseModel::sphere_uniform(int dimension) {
  if (dimension < 1) throw ConfigError("NoiseModel: dimension must be >= 1");
  return NoiseModel(NoiseKind::SphereUniform, dimension, static_cast<double>(dimension), 0.0, 1.0);
}

NoiseModel NoiseModel::truncated_gaussian(int dimension, double raw_bound) {
  if (dimension < 1) throw ConfigError("NoiseModel: dimension must be >= 1");
  if (!(raw_bound > static_cast<double>(dimension))) {
    throw ConfigError("NoiseModel: raw_bound must exceed the dimension");
  }
  // E[X 1{X<=c}] = n P(chi2_{n+2} <= c), so the second-moment ratio of the
  // truncated chi-square is alpha = F_{n+2}(c) / F_n(c).
  const double a = dimension / 2.0;
  const double alpha = gamma_p(a + 1.0, raw_bound / 2.0) / gamma_p(a, raw_bound / 2.0);
  const double scale = 1.0 / std::sqrt(alpha);
  return NoiseModel(NoiseKind::TruncatedGaussian, dimension, raw_bound / alpha, raw_bound, scale);
}

Eigen::VectorXd NoiseModel::sample(RngStream& rng) const {
  Eigen::VectorXd g(dimension_);
  switch (kind_) {
    case NoiseKind::SphereUniform: {
      double norm2 = 0.0;
      do {
        for (int i = 0; i < dimension_; ++i) g(i) = rng.normal();
        norm2 = g.squaredNorm();
      } while (norm2 == 0.0);
      return std::sqrt(static_cast<double>(dimension_) / norm2) * g;
    }
    case NoiseKind::TruncatedGaussian: {
      do {
        for (int i = 0; i < dimension_; ++i) g(i) = rng.normal();
      } while (g.squaredNorm() > raw_bound_);
      return scale_ * g;
    }
  }
  throw ConfigError("NoiseModel: unknown kind");
}

RolloutConfig RolloutConfig::for_cost_bound(double gamma, double cost_upper_bound,
                                            double truncation_tol) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("RolloutConfig: gamma outside (0,1)");
  if (!(cost_upper_bound > 0.0) || !(truncation_tol > 0.0)) {
    throw ConfigError("RolloutConfig: cost bound and tolerance must be positive");
  }
  RolloutConfig cfg;
  cfg.truncation_tol = truncation_tol;
  const double ratio = truncation_tol * (1.0 - gamma) / cost_upper_bound;
  const double h = std::ceil(std::log(ratio) / std::log(gamma));
  cfg.horizon = std::max(1, static_cast<int>(h));
  return cfg;
}

RolloutResult rollout_cost(const SystemTuple& sys, const Policy& policy, const NoiseModel& noise,
                           const RolloutConfig& cfg, RngStream rng) {
  if (policy.K.rows() != sys.m() || policy.K.cols() != sys.n() || !policy.K.allFinite()) {
    throw ConfigError("rollout_cost: policy must be finite and match the system dimensions");
  }
  if (noise.dimension() != sys.n()) {
    throw ConfigError("rollout_cost: noise dimension must match the state dimension");
  }
  if (cfg.horizon < 1) throw ConfigError("rollout_cost: horizon must be >= 1");

  const double blowup2 = cfg.blowup_threshold * cfg.blowup_threshold;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(sys.n());
  Eigen::VectorXd u(sys.m());
  double cost = 0.0;
  double discount = 1.0;
  for (int t = 0; t < cfg.horizon; ++t) {
    u.noalias() = -(policy.K * x);
    cost += discount * (x.dot(sys.Q * x) + u.dot(sys.R * u));
    discount *= sys.gamma;
    if (t + 1 >= cfg.horizon) break;
    x = (sys.A * x + sys.B * u + noise.sample(rng)).eval();
    if (!(x.squaredNorm() <= blowup2)) {  // catches NaN as well
      return {cost, true};
    }
  }
  return {cost, false};
}

CostEstimate estimate_cost(const SystemTuple& sys, const Policy& policy, long minibatch,
                           const NoiseModel& noise, const RolloutConfig& cfg, const RngStream& rng,
                           ExecMode exec) {
  if (minibatch < 1) throw ConfigError("estimate_cost: minibatch must be >= 1");
  std::vector<double> costs(static_cast<std::size_t>(minibatch));
  std::vector<unsigned char> bad(static_cast<std::size_t>(minibatch), 0);
  const bool parallel = exec == ExecMode::Parallel;
#pragma omp parallel for schedule(static) if (parallel)
  for (long k = 0; k < minibatch; ++k) {
    RngStream sub = rng.substream(static_cast<std::uint64_t>(k));
    const RolloutResult r = rollout_cost(sys, policy, noise, cfg, sub);
    costs[static_cast<std::size_t>(k)] = r.cost;
    bad[static_cast<std::size_t>(k)] = r.diverged ? 1 : 0;
  }
  CostEstimate est;
  est.value = pairwise_sum(costs) / static_cast<double>(minibatch);
  for (unsigned char b : bad) est.diverged |= (b != 0);
  return est;
}

}  // namespace pcpo
