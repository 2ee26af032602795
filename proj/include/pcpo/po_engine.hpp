#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "pcpo/zo_estimator.hpp"

namespace pcpo {

struct PoParams {
  double step_size = 0.0;  // eta
  int iterations = 0;      // R
  long minibatch = 1;      // M
  double radius = 0.0;     // r

  void validate() const;
};

struct PoOutcome {
  Policy final_policy;
  std::vector<double> iterate_costs;  // oracle cost per iterate (diagnostic)
  bool diverged = false;
  long rollouts_used = 0;
};

// Source of gradient estimates for one optimization step; the iteration index
// keys the RNG round. Tests may inject stubs.
using GradientSource = std::function<GradientEstimate(const Policy&, int iteration)>;

// Gradient source backed by simulated rollouts: iteration k draws from
// RngStream(seed, agent, epoch, purpose, round = k).
GradientSource rollout_gradient_source(const SystemTuple& sys, const PoParams& params,
                                       const NoiseModel& noise, const RolloutConfig& cfg,
                                       std::uint64_t seed, std::uint32_t agent,
                                       std::uint32_t epoch, Draw purpose, ExecMode exec);

// One gradient step K - eta * g(K). Reports the gradient estimate alongside
// the updated policy so callers can inspect divergence.
struct PoStep {
  Policy policy;
  GradientEstimate gradient;
};
PoStep po_step(const Policy& policy, double step_size, const GradientSource& gradients,
               int iteration);

// Runs `iterations` sequential gradient steps from K0. On divergence evidence
// (a blown-up rollout inside the gradient estimate, or a non-finite update)
// the last stable iterate is returned with diverged = true; the experiment
// owner decides how to proceed. iterate_costs holds the oracle cost of every
// iterate (K0 first) when record_costs is set; entries are +inf outside the
// stabilizing set. These diagnostics consume no rollout budget.
PoOutcome local_po(const SystemTuple& sys, const Policy& K0, const PoParams& params,
                   const GradientSource& gradients, bool record_costs = false);

// Convenience overload wiring the rollout-backed gradient source.
PoOutcome local_po(const SystemTuple& sys, const Policy& K0, const PoParams& params,
                   const NoiseModel& noise, const RolloutConfig& cfg, std::uint64_t seed,
                   std::uint32_t agent, std::uint32_t epoch, Draw purpose,
                   ExecMode exec = ExecMode::Parallel, bool record_costs = false);

}  // namespace pcpo
