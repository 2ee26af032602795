#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "pcpo/rollout.hpp"

namespace pcpo {

// Uniform draw from the set of m x n matrices with unit Frobenius norm
// (i.i.d. standard normal entries, normalized).
Eigen::MatrixXd sample_unit_frobenius(int m, int n, RngStream& rng);

// Evaluates the (noisy) cost of a perturbed gain. The default binds a single
// simulated rollout; tests substitute analytic functions.
using PerturbedCostFn =
    std::function<RolloutResult(const Eigen::MatrixXd& gain, RngStream& rng)>;

struct ZoRequest {
  long minibatch = 1;
  double radius = 0.0;  // smoothing radius r > 0

  void validate(int m, int n) const;
};

struct GradientEstimate {
  Eigen::MatrixXd value;
  bool diverged = false;
  long failed_element = -1;   // lowest diverged minibatch index, -1 if none
  double max_abs_cost = 0.0;  // largest |cost| seen across the minibatch
};

// One-point minibatched zeroth-order gradient: mean over k of
// cost(K + r U_k) * (D / r) * U_k with D = m * n. Element k derives both its
// perturbation U_k and its evaluation noise from rng.substream(k); the mean
// is a pairwise sum, so the value is independent of scheduling.
GradientEstimate zo_gradient(const SystemTuple& sys, const Policy& policy, const ZoRequest& req,
                             const NoiseModel& noise, const RolloutConfig& cfg,
                             const RngStream& rng, ExecMode exec = ExecMode::Parallel);

// Same estimator with a caller-supplied evaluation function.
GradientEstimate zo_gradient_custom(int m, int n, const Eigen::MatrixXd& gain,
                                    const ZoRequest& req, const PerturbedCostFn& eval,
                                    const RngStream& rng, ExecMode exec = ExecMode::Parallel);

// Monte-Carlo estimate of the ball-smoothed cost E_v[cost(K + r v)], v uniform
// over the unit Frobenius ball, evaluated with the closed-form cost oracle.
// Samples are antithetic pairs (v, -v), which halves variance and makes the
// estimate exact for costs linear in K; `samples` is rounded up to even.
// Throws StabilityError if any perturbed gain leaves the stabilizing set.
double smoothed_cost(const SystemTuple& sys, const Policy& policy, double radius, long samples,
                     const RngStream& rng, ExecMode exec = ExecMode::Parallel);

// Same smoothing with a caller-supplied deterministic evaluation (test hook).
double smoothed_value_custom(int m, int n, const Eigen::MatrixXd& gain, double radius,
                             long samples, const std::function<double(const Eigen::MatrixXd&)>& f,
                             const RngStream& rng, ExecMode exec = ExecMode::Parallel);

// Central-difference gradient of the smoothed cost with common random
// numbers: one fixed set of ball perturbations is reused for every +/- h
// evaluation, so the Monte-Carlo error largely cancels in the differences.
// Serves as the independent reference for estimator-unbiasedness checks.
Eigen::MatrixXd smoothed_cost_gradient_ref(const SystemTuple& sys, const Policy& policy,
                                           double radius, long samples, double fd_step,
                                           const RngStream& rng,
                                           ExecMode exec = ExecMode::Parallel);

// Empirically probed problem constants used by diagnostic bounds.
struct ProbedConstants {
  double G_inf = 0.0;   // uniform bound on noisy rollout costs
  double lambda = 0.0;  // local Lipschitz constant of the cost
  double phi = 0.0;     // local gradient-Lipschitz constant
  double mu = 0.0;      // gradient-domination constant
  double rho = 0.0;     // locality radius
};

struct ConcentrationReport {
  std::vector<double> deviations;  // per trial: ||g - grad C_r|| Frobenius
  double bound = 0.0;              // deviation bound at the requested failure level
  double exceed_rate = 0.0;        // fraction of trials above the bound
  double median_deviation = 0.0;
};

// Draws `trials` independent minibatched gradient estimates (averaging
// `agents_averaged` agents' estimates per trial), measures their deviation
// from a common-random-number reference of grad C_r, and compares against the
// norm-sub-Gaussian deviation bound
//   (G_inf + lambda rho / D + phi rho^2 / D) * D / (r sqrt(c M)) * sqrt(log(2 D / delta')).
ConcentrationReport concentration_probe(const SystemTuple& sys, const Policy& policy, long minibatch,
                                        double radius, int trials, double delta_prime,
                                        const ProbedConstants& constants, int agents_averaged,
                                        const NoiseModel& noise, const RolloutConfig& cfg,
                                        std::uint64_t seed, ExecMode exec = ExecMode::Parallel,
                                        long ref_samples = 200000);

}  // namespace pcpo
