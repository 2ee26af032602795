#pragma once

#include <Eigen/Dense>

#include "pcpo/lqr.hpp"
#include "pcpo/numerics.hpp"
#include "pcpo/rng.hpp"

namespace pcpo {

enum class NoiseKind { SphereUniform, TruncatedGaussian };

// Zero-mean, identity-covariance, norm-bounded process noise.
//
// SphereUniform draws uniformly on the sphere of radius sqrt(n), so the
// identity covariance and the bound ||z||^2 = n hold exactly per draw.
// TruncatedGaussian rejects standard-normal vectors with ||g||^2 above a raw
// cap and rescales so the covariance is restored to identity; the resulting
// almost-sure bound is raw_bound / alpha with alpha the truncated-chi-square
// second-moment ratio.
class NoiseModel {
 public:
  static NoiseModel sphere_uniform(int dimension);
  static NoiseModel truncated_gaussian(int dimension, double raw_bound);

  Eigen::VectorXd sample(RngStream& rng) const;

  NoiseKind kind() const { return kind_; }
  int dimension() const { return dimension_; }
  double norm_bound() const { return bound_; }  // B with ||z||^2 <= B a.s.

 private:
  NoiseModel(NoiseKind kind, int dimension, double bound, double raw_bound, double scale)
      : kind_(kind), dimension_(dimension), bound_(bound), raw_bound_(raw_bound), scale_(scale) {}

  NoiseKind kind_;
  int dimension_;
  double bound_;
  double raw_bound_ = 0.0;  // rejection cap on ||g||^2 (TruncatedGaussian)
  double scale_ = 1.0;      // covariance-restoring factor (TruncatedGaussian)
};

// Horizon/truncation settings for simulated trajectories.
struct RolloutConfig {
  int horizon = 1;
  double truncation_tol = 1e-6;
  double blowup_threshold = 1e8;  // divergence signal once ||x|| exceeds this

  // Smallest horizon whose discarded tail is below truncation_tol for costs
  // up to cost_upper_bound: ceil(log(tol * (1-gamma) / C_ub) / log(gamma)).
  static RolloutConfig for_cost_bound(double gamma, double cost_upper_bound,
                                      double truncation_tol = 1e-6);
};

struct RolloutResult {
  double cost = 0.0;     // partial cost when diverged
  bool diverged = false; // state norm crossed the blow-up threshold
};

// One simulated trajectory cost: sum_{t < horizon} gamma^t (x'Qx + u'Ru)
// with x_0 = 0, u = -Kx, x_{t+1} = Ax + Bu + z. The policy need not be
// stabilizing; blow-ups are reported, never thrown.
RolloutResult rollout_cost(const SystemTuple& sys, const Policy& policy, const NoiseModel& noise,
                           const RolloutConfig& cfg, RngStream rng);

struct CostEstimate {
  double value = 0.0;
  bool diverged = false;  // any of the minibatch rollouts diverged
};

// Mean of `minibatch` independent rollout costs. Element k draws from
// rng.substream(k); the mean uses pairwise summation, so the result does not
// depend on execution order or thread count.
CostEstimate estimate_cost(const SystemTuple& sys, const Policy& policy, long minibatch,
                           const NoiseModel& noise, const RolloutConfig& cfg, const RngStream& rng,
                           ExecMode exec = ExecMode::Parallel);

}  // namespace pcpo
