#include "pcpo/zo_estimator.hpp"

#include <cmath>

#include "pcpo/errors.hpp"

namespace pcpo {

Eigen::MatrixXd sample_unit_frobenius(int m, int n, RngStream& rng) {
  if (m < 1 || n < 1) throw ConfigError("sample_unit_frobenius: dimensions must be >= 1");
  Eigen::MatrixXd U(m, n);
  double norm2 = 0.0;
  do {
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) U(i, j) = rng.normal();
    }
    norm2 = U.squaredNorm();
  } while (norm2 == 0.0);
  return U / std::sqrt(norm2);
}

void ZoRequest::validate(int m, int n) const {
  if (minibatch < 1) throw ConfigError("ZoRequest: minibatch must be >= 1");
  if (!(radius > 0.0)) throw ConfigError("ZoRequest: radius must be positive");
  if (m < 1 || n < 1) throw ConfigError("ZoRequest: bad policy dimensions");
}

GradientEstimate zo_gradient_custom(int m, int n, const Eigen::MatrixXd& gain,
                                    const ZoRequest& req, const PerturbedCostFn& eval,
                                    const RngStream& rng, ExecMode exec) {
  req.validate(m, n);
  if (gain.rows() != m || gain.cols() != n || !gain.allFinite()) {
    throw ConfigError("zo_gradient: gain must be finite with the requested shape");
  }
  const int dim = m * n;
  const long M = req.minibatch;

  // Column k holds cost_k * vec(U_k); the estimator is (D / (r M)) times the
  // pairwise column sum.
  Eigen::MatrixXd contributions(dim, M);
  std::vector<double> costs(static_cast<std::size_t>(M));
  std::vector<unsigned char> bad(static_cast<std::size_t>(M), 0);
  const bool parallel = exec == ExecMode::Parallel;
#pragma omp parallel for schedule(static) if (parallel)
  for (long k = 0; k < M; ++k) {
    RngStream sub = rng.substream(static_cast<std::uint64_t>(k));
    const Eigen::MatrixXd U = sample_unit_frobenius(m, n, sub);
    const RolloutResult r = eval(gain + req.radius * U, sub);
    costs[static_cast<std::size_t>(k)] = r.cost;
    bad[static_cast<std::size_t>(k)] = r.diverged ? 1 : 0;
    contributions.col(k) = r.cost * Eigen::Map<const Eigen::VectorXd>(U.data(), dim);
  }

  GradientEstimate est;
  const Eigen::VectorXd summed = pairwise_col_sum(contributions);
  const double scale = static_cast<double>(dim) / (req.radius * static_cast<double>(M));
  est.value = scale * Eigen::Map<const Eigen::MatrixXd>(summed.data(), m, n);
  for (long k = 0; k < M; ++k) {
    est.max_abs_cost = std::max(est.max_abs_cost, std::abs(costs[static_cast<std::size_t>(k)]));
    if (bad[static_cast<std::size_t>(k)] && !est.diverged) {
      est.diverged = true;
      est.failed_element = k;
    }
  }
  return est;
}

GradientEstimate zo_gradient(const SystemTuple& sys, const Policy& policy, const ZoRequest& req,
                             const NoiseModel& noise, const RolloutConfig& cfg,
                             const RngStream& rng, ExecMode exec) {
  const PerturbedCostFn eval = [&](const Eigen::MatrixXd& gain, RngStream& sub) {
    return rollout_cost(sys, Policy{gain}, noise, cfg, sub);
  };
  return zo_gradient_custom(sys.m(), sys.n(), policy.K, req, eval, rng, exec);
}

namespace {

// Uniform draw from the unit Frobenius ball: sphere direction scaled by
// u^(1/(mn)).
Eigen::MatrixXd sample_unit_ball(int m, int n, RngStream& rng) {
  const Eigen::MatrixXd U = sample_unit_frobenius(m, n, rng);
  const double u = rng.uniform01();
  return std::pow(u, 1.0 / static_cast<double>(m * n)) * U;
}

}  // namespace

namespace {

double smoothed_mean(int m, int n, const Eigen::MatrixXd& gain, double radius, long samples,
                     const std::function<double(const Eigen::MatrixXd&)>& f, const RngStream& rng,
                     ExecMode exec, const char* who) {
  if (samples < 1) throw ConfigError(std::string(who) + ": samples must be >= 1");
  if (!(radius > 0.0)) throw ConfigError(std::string(who) + ": radius must be positive");
  const long pairs = (samples + 1) / 2;

  std::vector<double> values(static_cast<std::size_t>(2 * pairs));
  std::vector<unsigned char> unstable(static_cast<std::size_t>(pairs), 0);
  const bool parallel = exec == ExecMode::Parallel;
#pragma omp parallel for schedule(static) if (parallel)
  for (long s = 0; s < pairs; ++s) {
    RngStream sub = rng.substream(static_cast<std::uint64_t>(s));
    const Eigen::MatrixXd v = sample_unit_ball(m, n, sub);
    try {
      values[static_cast<std::size_t>(2 * s)] = f(gain + radius * v);
      values[static_cast<std::size_t>(2 * s + 1)] = f(gain - radius * v);
    } catch (const StabilityError&) {
      unstable[static_cast<std::size_t>(s)] = 1;
    }
  }
  for (unsigned char u : unstable) {
    if (u) {
      throw StabilityError(std::string(who) + ": a perturbed gain left the stabilizing set");
    }
  }
  return pairwise_sum(values) / static_cast<double>(2 * pairs);
}

}  // namespace

double smoothed_cost(const SystemTuple& sys, const Policy& policy, double radius, long samples,
                     const RngStream& rng, ExecMode exec) {
  const auto eval = [&sys](const Eigen::MatrixXd& gain) {
    const Policy p{gain};
    if (!is_stabilizing(p, sys)) throw StabilityError("smoothed_cost: unstable perturbation");
    return exact_cost(sys, p);
  };
  return smoothed_mean(sys.m(), sys.n(), policy.K, radius, samples, eval, rng, exec,
                       "smoothed_cost");
}

double smoothed_value_custom(int m, int n, const Eigen::MatrixXd& gain, double radius,
                             long samples, const std::function<double(const Eigen::MatrixXd&)>& f,
                             const RngStream& rng, ExecMode exec) {
  return smoothed_mean(m, n, gain, radius, samples, f, rng, exec, "smoothed_value_custom");
}

Eigen::MatrixXd smoothed_cost_gradient_ref(const SystemTuple& sys, const Policy& policy,
                                           double radius, long samples, double fd_step,
                                           const RngStream& rng, ExecMode exec) {
  if (samples < 1) throw ConfigError("smoothed_cost_gradient_ref: samples must be >= 1");
  if (!(fd_step > 0.0)) throw ConfigError("smoothed_cost_gradient_ref: step must be positive");
  const int m = sys.m();
  const int n = sys.n();
  const int dim = m * n;
  const long pairs = (samples + 1) / 2;

  // One fixed perturbation set, reused across every +/- h evaluation.
  std::vector<Eigen::MatrixXd> vs(static_cast<std::size_t>(pairs));
  {
    RngStream draw = rng;
    for (long s = 0; s < pairs; ++s) {
      RngStream sub = draw.substream(static_cast<std::uint64_t>(s));
      vs[static_cast<std::size_t>(s)] = sample_unit_ball(m, n, sub);
    }
  }

  const bool parallel = exec == ExecMode::Parallel;
  Eigen::MatrixXd grad(m, n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      std::vector<double> diffs(static_cast<std::size_t>(2 * pairs));
      std::vector<unsigned char> unstable(static_cast<std::size_t>(pairs), 0);
      Eigen::MatrixXd probe_up = policy.K;
      Eigen::MatrixXd probe_down = policy.K;
      probe_up(i, j) += fd_step;
      probe_down(i, j) -= fd_step;
#pragma omp parallel for schedule(static) if (parallel)
      for (long s = 0; s < pairs; ++s) {
        const Eigen::MatrixXd& v = vs[static_cast<std::size_t>(s)];
        for (int sign = 0; sign < 2; ++sign) {
          const Eigen::MatrixXd offset = (sign == 0 ? radius : -radius) * v;
          const Policy up{probe_up + offset};
          const Policy down{probe_down + offset};
          if (!is_stabilizing(up, sys) || !is_stabilizing(down, sys)) {
            unstable[static_cast<std::size_t>(s)] = 1;
            continue;
          }
          diffs[static_cast<std::size_t>(2 * s + sign)] =
              (exact_cost(sys, up) - exact_cost(sys, down)) / (2.0 * fd_step);
        }
      }
      for (unsigned char u : unstable) {
        if (u) {
          throw StabilityError("smoothed_cost_gradient_ref: perturbed gain not stabilizing");
        }
      }
      grad(i, j) = pairwise_sum(diffs) / static_cast<double>(2 * pairs);
    }
  }
  return grad;
}

ConcentrationReport concentration_probe(const SystemTuple& sys, const Policy& policy,
                                        long minibatch, double radius, int trials,
                                        double delta_prime, const ProbedConstants& constants,
                                        int agents_averaged, const NoiseModel& noise,
                                        const RolloutConfig& cfg, std::uint64_t seed,
                                        ExecMode exec, long ref_samples) {
  if (trials < 1) throw ConfigError("concentration_probe: trials must be >= 1");
  if (!(delta_prime > 0.0 && delta_prime < 1.0)) {
    throw ConfigError("concentration_probe: delta_prime outside (0,1)");
  }
  if (agents_averaged < 1) throw ConfigError("concentration_probe: need >= 1 agent");
  const int dim = sys.m() * sys.n();

  const Eigen::MatrixXd reference = smoothed_cost_gradient_ref(
      sys, policy, radius, ref_samples, /*fd_step=*/1e-4,
      RngStream(seed, /*agent=*/0, /*epoch=*/0, Draw::Probe, /*round=*/1), exec);

  const double c8 = constants.G_inf + constants.lambda * constants.rho / dim +
                    constants.phi * constants.rho * constants.rho / dim;
  ConcentrationReport report;
  report.bound = c8 * dim /
                 (radius * std::sqrt(static_cast<double>(minibatch) * agents_averaged)) *
                 std::sqrt(std::log(2.0 * dim / delta_prime));

  const ZoRequest req{minibatch, radius};
  report.deviations.resize(static_cast<std::size_t>(trials));
  int exceed = 0;
  for (int t = 0; t < trials; ++t) {
    Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(sys.m(), sys.n());
    for (int a = 0; a < agents_averaged; ++a) {
      const RngStream stream(seed, static_cast<std::uint32_t>(a), /*epoch=*/0, Draw::Probe,
                             static_cast<std::uint32_t>(t + 2));
      const GradientEstimate g = zo_gradient(sys, policy, req, noise, cfg, stream, exec);
      if (g.diverged) {
        throw StabilityError("concentration_probe: rollout diverged inside the probe");
      }
      avg += g.value;
    }
    avg /= static_cast<double>(agents_averaged);
    const double dev = (avg - reference).norm();
    report.deviations[static_cast<std::size_t>(t)] = dev;
    if (dev > report.bound) ++exceed;
  }
  report.exceed_rate = static_cast<double>(exceed) / static_cast<double>(trials);
  report.median_deviation = median(report.deviations);
  return report;
}

}  // namespace pcpo
