#include "pcpo/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <string>

#include "pcpo/errors.hpp"

namespace pcpo {

std::vector<std::vector<int>> update_neighborhood(std::span<const double> costs,
                                                  const std::vector<std::vector<int>>& previous,
                                                  double Delta_l) {
  const int N = static_cast<int>(previous.size());
  if (static_cast<int>(costs.size()) != N) {
    throw ProtocolError("update_neighborhood: every agent needs a cost");
  }
  std::vector<std::vector<int>> next(previous.size());
  for (int i = 0; i < N; ++i) {
    for (int j : previous[i]) {
      if (j < 0 || j >= N) throw ProtocolError("update_neighborhood: agent index out of range");
      if (j == i || std::abs(costs[j] - costs[i]) <= Delta_l / 2.0) {
        next[i].push_back(j);
      }
    }
  }
  return next;
}

Eigen::MatrixXd aggregate_gradients(std::span<const Eigen::MatrixXd> gradients,
                                    const std::vector<int>& neighborhood) {
  if (neighborhood.empty()) throw ProtocolError("aggregate_gradients: empty neighborhood");
  const int first = neighborhood.front();
  if (first < 0 || first >= static_cast<int>(gradients.size())) {
    throw ProtocolError("aggregate_gradients: gradient missing for an agent");
  }
  const Eigen::Index rows = gradients[first].rows();
  const Eigen::Index cols = gradients[first].cols();
  if (rows == 0 || cols == 0) throw ProtocolError("aggregate_gradients: empty gradient");

  Eigen::MatrixXd stacked(rows * cols, static_cast<Eigen::Index>(neighborhood.size()));
  for (std::size_t idx = 0; idx < neighborhood.size(); ++idx) {
    const int j = neighborhood[idx];
    if (j < 0 || j >= static_cast<int>(gradients.size()) || gradients[j].rows() != rows ||
        gradients[j].cols() != cols) {
      throw ProtocolError("aggregate_gradients: gradient missing or mismatched for agent " +
                          std::to_string(j));
    }
    stacked.col(static_cast<Eigen::Index>(idx)) =
        Eigen::Map<const Eigen::VectorXd>(gradients[j].data(), rows * cols);
  }
  const Eigen::VectorXd mean = pairwise_col_sum(stacked) / static_cast<double>(neighborhood.size());
  return Eigen::Map<const Eigen::MatrixXd>(mean.data(), rows, cols);
}

std::vector<Policy> reinitialize(std::span<const Policy> local_policies,
                                 std::span<const double> estimated_costs,
                                 const std::vector<std::vector<int>>& neighborhoods) {
  std::vector<Policy> result(neighborhoods.size());
  for (std::size_t i = 0; i < neighborhoods.size(); ++i) {
    const auto& nbhd = neighborhoods[i];
    if (nbhd.empty()) throw ProtocolError("reinitialize: empty neighborhood");
    int best = nbhd.front();
    for (int j : nbhd) {
      if (estimated_costs[j] < estimated_costs[best]) best = j;  // ties keep the lower index
    }
    result[i] = local_policies[best];
  }
  return result;
}

namespace {

std::vector<std::vector<int>> initial_neighborhoods(const ClusterScenario& scenario,
                                                    NeighborhoodPolicy policy) {
  const int N = scenario.num_agents();
  std::vector<std::vector<int>> nbhd(N);
  switch (policy) {
    case NeighborhoodPolicy::Adaptive:
    case NeighborhoodPolicy::FixedAll: {
      std::vector<int> all(N);
      for (int i = 0; i < N; ++i) all[i] = i;
      for (int i = 0; i < N; ++i) nbhd[i] = all;
      break;
    }
    case NeighborhoodPolicy::FixedSelf:
      for (int i = 0; i < N; ++i) nbhd[i] = {i};
      break;
    case NeighborhoodPolicy::FixedTrueClusters: {
      const auto clusters = scenario.clusters();
      for (int i = 0; i < N; ++i) nbhd[i] = clusters[scenario.assignment[i]];
      break;
    }
  }
  return nbhd;
}

// Rethrows the first exception captured inside an OpenMP region.
class ExceptionCollector {
 public:
  template <typename Fn>
  void run(Fn&& fn) noexcept {
    try {
      fn();
    } catch (...) {
#pragma omp critical(pcpo_exception_collector)
      if (!ptr_) ptr_ = std::current_exception();
    }
  }
  void rethrow_if_any() const {
    if (ptr_) std::rethrow_exception(ptr_);
  }

 private:
  std::exception_ptr ptr_;
};

}  // namespace

PcpoTrace run_pcpo(const ClusterScenario& scenario, const RunConfig& cfg) {
  scenario.validate();
  if (cfg.budget < 1) throw ConfigError("run_pcpo: budget must be positive");
  const int N = scenario.num_agents();
  const int n = scenario.systems[0].n();
  const int m = scenario.systems[0].m();

  ScheduleConfig sched_cfg;
  sched_cfg.mode = cfg.mode;
  sched_cfg.Delta0 = cfg.Delta0;
  sched_cfg.delta = cfg.delta;
  sched_cfg.num_agents = N;
  sched_cfg.dim = m * n;
  sched_cfg.theory = cfg.theory;
  sched_cfg.practical = cfg.practical;
  sched_cfg.validate();

  const NoiseModel noise = cfg.noise_kind == NoiseKind::SphereUniform
                               ? NoiseModel::sphere_uniform(n)
                               : NoiseModel::truncated_gaussian(
                                     n, cfg.noise_raw_bound > 0.0 ? cfg.noise_raw_bound : 4.0 * n);

  // Horizon sized so the discarded tail stays below the truncation tolerance
  // for costs up to the configured (or probed) upper bound.
  double cost_ub = cfg.cost_upper_bound;
  if (!(cost_ub > 0.0)) {
    cost_ub = 0.0;
    for (int i = 0; i < N; ++i) {
      cost_ub = std::max(cost_ub, exact_cost(scenario.system_of(i), scenario.initial_policies[i]));
    }
    cost_ub *= 2.0;
  }
  double gamma_max = 0.0;
  for (const auto& sys : scenario.systems) gamma_max = std::max(gamma_max, sys.gamma);
  RolloutConfig rollout_cfg = RolloutConfig::for_cost_bound(gamma_max, cost_ub, cfg.truncation_tol);
  rollout_cfg.blowup_threshold = cfg.blowup_threshold;

  PcpoTrace trace;
  trace.num_agents = N;
  trace.num_clusters = scenario.num_clusters();
  trace.seed = cfg.seed;
  trace.assignment = scenario.assignment;
  if (cfg.record_exact_gaps) {
    for (const auto& sys : scenario.systems) trace.optimal_costs.push_back(solve_dare(sys).cost);
  }

  std::vector<AgentState> agents(N);
  for (int i = 0; i < N; ++i) {
    agents[i].id = i;
    agents[i].local_policy = scenario.initial_policies[i];
    agents[i].global_policy = scenario.initial_policies[i];
  }
  ServerState server;
  server.neighborhoods = initial_neighborhoods(scenario, cfg.neighborhoods);

  const bool adaptive = cfg.neighborhoods == NeighborhoodPolicy::Adaptive;
  const bool collaborative = cfg.neighborhoods != NeighborhoodPolicy::FixedSelf;
  const bool parallel_agents = cfg.exec == ExecMode::Parallel;
  const ExecMode inner_exec = parallel_agents ? ExecMode::Serial : cfg.exec;

  long spent = 0;
  EpochSchedule previous{};
  for (int l = 1; l <= cfg.max_epochs; ++l) {
    const EpochSchedule sched = make_schedule(l, l == 1 ? nullptr : &previous, sched_cfg);
    if (spent + sched.rollouts_per_agent() > cfg.budget) {
      if (l == 1) {
        throw BudgetError("run_pcpo: first epoch needs " +
                          std::to_string(sched.rollouts_per_agent()) +
                          " rollouts per agent, budget is " + std::to_string(cfg.budget));
      }
      break;
    }
    spent += sched.rollouts_per_agent();
    server.epoch = l;
    const std::uint32_t epoch = static_cast<std::uint32_t>(l);
    for (auto& a : agents) a.frozen = false;
    int divergence_events = 0;

    // Local policy optimization (clustering sequence).
    {
      ExceptionCollector errors;
#pragma omp parallel for schedule(dynamic, 1) if (parallel_agents)
      for (int i = 0; i < N; ++i) {
        errors.run([&, i] {
          const PoParams params{sched.eta, sched.R_l, sched.M_l, sched.r_local};
          const PoOutcome out =
              local_po(scenario.system_of(i), agents[i].local_policy, params, noise, rollout_cfg,
                       cfg.seed, static_cast<std::uint32_t>(i), epoch, Draw::LocalGradient,
                       inner_exec);
          agents[i].local_policy = out.final_policy;
          agents[i].rollouts_consumed += out.rollouts_used;
          if (out.diverged) {
            // The local sequence restarts next epoch from the last stable
            // iterate; remaining iterations of this epoch are forfeited.
#pragma omp atomic
            ++divergence_events;
          }
        });
      }
      errors.rethrow_if_any();
    }

    // Cost estimation at the new local policies.
    {
      ExceptionCollector errors;
#pragma omp parallel for schedule(dynamic, 1) if (parallel_agents)
      for (int i = 0; i < N; ++i) {
        errors.run([&, i] {
          const RngStream stream(cfg.seed, static_cast<std::uint32_t>(i), epoch,
                                 Draw::CostEstimation);
          const CostEstimate est = estimate_cost(scenario.system_of(i), agents[i].local_policy,
                                                 sched.M_l, noise, rollout_cfg, stream, inner_exec);
          agents[i].rollouts_consumed += sched.M_l;
          agents[i].estimated_cost =
              est.diverged ? std::numeric_limits<double>::infinity() : est.value;
        });
      }
      errors.rethrow_if_any();
    }

    // Collaborative rounds on the global sequence, averaging over the
    // previous epoch's neighborhoods.
    std::vector<double> radius_global(N);
    for (int i = 0; i < N; ++i) {
      agents[i].working_policy = agents[i].global_policy;
      radius_global[i] = sched.r_global(server.neighborhoods[i].size());
    }
    std::vector<Eigen::MatrixXd> gradients(N);
    for (int k = 0; k < sched.R_l; ++k) {
      ExceptionCollector errors;
#pragma omp parallel for schedule(dynamic, 1) if (parallel_agents)
      for (int i = 0; i < N; ++i) {
        errors.run([&, i] {
          if (agents[i].frozen) {
            // A halted agent abstains: it submits a zero gradient and stops
            // spending rollouts until reinitialization repairs it.
            gradients[i] = Eigen::MatrixXd::Zero(m, n);
            return;
          }
          const ZoRequest req{sched.M_l, radius_global[i]};
          const RngStream stream(cfg.seed, static_cast<std::uint32_t>(i), epoch,
                                 Draw::GlobalGradient, static_cast<std::uint32_t>(k));
          const GradientEstimate g = zo_gradient(scenario.system_of(i), agents[i].working_policy,
                                                 req, noise, rollout_cfg, stream, inner_exec);
          agents[i].rollouts_consumed += sched.M_l;
          if (g.diverged) {
            agents[i].frozen = true;
            gradients[i] = Eigen::MatrixXd::Zero(m, n);
          } else {
            gradients[i] = g.value;
          }
        });
      }
      errors.rethrow_if_any();

      if (collaborative) {
        server.comm_rounds += 1;
        server.entries_exchanged += 2L * N * m * n;
      }
      for (int i = 0; i < N; ++i) {
        if (agents[i].frozen) continue;
        const Eigen::MatrixXd avg = collaborative
                                        ? aggregate_gradients(gradients, server.neighborhoods[i])
                                        : gradients[i];
        Eigen::MatrixXd next = agents[i].working_policy.K - sched.eta * avg;
        if (!next.allFinite()) {
          agents[i].frozen = true;
        } else {
          agents[i].working_policy.K = std::move(next);
        }
      }
    }
    for (int i = 0; i < N; ++i) {
      agents[i].global_policy = agents[i].working_policy;
      if (agents[i].frozen) ++divergence_events;
    }

    // Upload of (local policy, estimated cost), then elimination.
    bool reinit = false;
    if (adaptive) {
      server.comm_rounds += 1;
      server.entries_exchanged += static_cast<long>(N) * (m * n + 1);
      std::vector<double> costs(N);
      for (int i = 0; i < N; ++i) costs[i] = agents[i].estimated_cost;
      auto next_nbhd = update_neighborhood(costs, server.neighborhoods, sched.Delta_l);
      reinit = next_nbhd != server.neighborhoods;
      server.neighborhoods = std::move(next_nbhd);
      if (reinit) {
        std::vector<Policy> locals(N);
        for (int i = 0; i < N; ++i) locals[i] = agents[i].local_policy;
        const std::vector<Policy> fresh = reinitialize(locals, costs, server.neighborhoods);
        for (int i = 0; i < N; ++i) agents[i].global_policy = fresh[i];
      }
    }

    EpochRecord record;
    record.schedule = sched;
    record.neighborhoods = server.neighborhoods;
    record.reinitialized = reinit;
    record.comm_rounds = server.comm_rounds;
    record.divergence_events = divergence_events;
    record.estimated_costs.resize(N);
    record.rollouts.resize(N);
    record.frozen.resize(N);
    for (int i = 0; i < N; ++i) {
      record.estimated_costs[i] = agents[i].estimated_cost;
      record.local_policies.push_back(agents[i].local_policy.K);
      record.global_policies.push_back(agents[i].global_policy.K);
      record.rollouts[i] = agents[i].rollouts_consumed;
      record.frozen[i] = agents[i].frozen ? 1 : 0;
      if (cfg.record_exact_gaps) {
        const SystemTuple& sys = scenario.system_of(i);
        const double opt = trace.optimal_costs[scenario.assignment[i]];
        record.exact_gaps.push_back(is_stabilizing(agents[i].global_policy, sys)
                                        ? exact_cost(sys, agents[i].global_policy) - opt
                                        : std::numeric_limits<double>::infinity());
      }
    }
    trace.epochs.push_back(std::move(record));
    previous = sched;
  }
  return trace;
}

CommReport comm_report(const PcpoTrace& trace) {
  CommReport report;
  long prev = 0;
  for (const auto& epoch : trace.epochs) {
    report.per_epoch.push_back(epoch.comm_rounds - prev);
    prev = epoch.comm_rounds;
  }
  report.rounds = prev;
  return report;
}

}  // namespace pcpo
