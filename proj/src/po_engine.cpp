#include "pcpo/po_engine.hpp"

#include <limits>

#include "pcpo/errors.hpp"

namespace pcpo {

void PoParams::validate() const {
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) {
    throw ConfigError("PoParams: step size must be finite and non-negative");
  }
  if (iterations < 0) throw ConfigError("PoParams: iterations must be >= 0");
  if (minibatch < 1) throw ConfigError("PoParams: minibatch must be >= 1");
  if (!(radius > 0.0)) throw ConfigError("PoParams: radius must be positive");
}

GradientSource rollout_gradient_source(const SystemTuple& sys, const PoParams& params,
                                       const NoiseModel& noise, const RolloutConfig& cfg,
                                       std::uint64_t seed, std::uint32_t agent,
                                       std::uint32_t epoch, Draw purpose, ExecMode exec) {
  const ZoRequest req{params.minibatch, params.radius};
  return [=, &sys, &noise](const Policy& policy, int iteration) {
    const RngStream stream(seed, agent, epoch, purpose, static_cast<std::uint32_t>(iteration));
    return zo_gradient(sys, policy, req, noise, cfg, stream, exec);
  };
}

PoStep po_step(const Policy& policy, double step_size, const GradientSource& gradients,
               int iteration) {
  PoStep result{policy, gradients(policy, iteration)};
  if (!result.gradient.diverged) {
    result.policy.K = policy.K - step_size * result.gradient.value;
  }
  return result;
}

namespace {

double oracle_cost_or_inf(const SystemTuple& sys, const Policy& policy) {
  if (!is_stabilizing(policy, sys)) return std::numeric_limits<double>::infinity();
  return exact_cost(sys, policy);
}

}  // namespace

PoOutcome local_po(const SystemTuple& sys, const Policy& K0, const PoParams& params,
                   const GradientSource& gradients, bool record_costs) {
  params.validate();
  if (K0.K.rows() != sys.m() || K0.K.cols() != sys.n() || !K0.K.allFinite()) {
    throw ConfigError("local_po: initial policy must be finite and match the system");
  }
  PoOutcome outcome;
  outcome.final_policy = K0;
  if (record_costs) outcome.iterate_costs.push_back(oracle_cost_or_inf(sys, K0));

  for (int k = 0; k < params.iterations; ++k) {
    const PoStep step = po_step(outcome.final_policy, params.step_size, gradients, k);
    outcome.rollouts_used += params.minibatch;
    if (step.gradient.diverged || !step.policy.K.allFinite()) {
      outcome.diverged = true;
      return outcome;  // keep the last stable iterate
    }
    outcome.final_policy = step.policy;
    if (record_costs) outcome.iterate_costs.push_back(oracle_cost_or_inf(sys, outcome.final_policy));
  }
  return outcome;
}

PoOutcome local_po(const SystemTuple& sys, const Policy& K0, const PoParams& params,
                   const NoiseModel& noise, const RolloutConfig& cfg, std::uint64_t seed,
                   std::uint32_t agent, std::uint32_t epoch, Draw purpose, ExecMode exec,
                   bool record_costs) {
  return local_po(sys, K0, params,
                  rollout_gradient_source(sys, params, noise, cfg, seed, agent, epoch, purpose, exec),
                  record_costs);
}

}  // namespace pcpo
