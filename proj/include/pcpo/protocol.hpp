#pragma once

#include <iosfwd>
#include <vector>

#include "pcpo/po_engine.hpp"
#include "pcpo/schedule.hpp"

namespace pcpo {

// How each agent's neighborhood set evolves. Adaptive is the full algorithm
// (sequential elimination); the fixed variants implement the baselines.
enum class NeighborhoodPolicy {
  Adaptive,          // eliminate by comparing estimated costs each epoch
  FixedSelf,         // {i} forever: independent local optimization
  FixedTrueClusters, // ground-truth clusters from the first epoch
  FixedAll,          // all agents forever: no personalization
};

struct AgentState {
  int id = 0;
  Policy local_policy;    // sequence used only for clustering
  Policy global_policy;   // collaboratively updated sequence
  Policy working_policy;  // within-epoch collaborative iterate
  double estimated_cost = 0.0;
  long rollouts_consumed = 0;
  bool frozen = false;  // halted for the rest of the epoch after divergence
};

struct ServerState {
  std::vector<std::vector<int>> neighborhoods;  // ascending agent indices
  int epoch = 0;
  long comm_rounds = 0;
  long entries_exchanged = 0;  // matrices exchanged, counted in scalar entries
};

// Per-epoch snapshot of everything the analysis needs.
struct EpochRecord {
  EpochSchedule schedule;
  std::vector<std::vector<int>> neighborhoods;  // after this epoch's update
  std::vector<double> estimated_costs;
  std::vector<Eigen::MatrixXd> local_policies;
  std::vector<Eigen::MatrixXd> global_policies;  // after any reinitialization
  std::vector<double> exact_gaps;                // oracle; +inf when unstable
  std::vector<long> rollouts;                    // cumulative per agent
  long comm_rounds = 0;                          // cumulative
  bool reinitialized = false;
  std::vector<unsigned char> frozen;  // agents halted during this epoch
  int divergence_events = 0;
};

struct PcpoTrace {
  int num_agents = 0;
  int num_clusters = 0;
  std::uint64_t seed = 0;
  std::vector<int> assignment;
  std::vector<double> optimal_costs;  // per cluster (oracle), empty if disabled
  std::vector<EpochRecord> epochs;

  int last_epoch() const { return static_cast<int>(epochs.size()); }
};

struct RunConfig {
  ScheduleMode mode = ScheduleMode::Practical;
  double Delta0 = 0.0;
  double delta = 0.0;
  TheoryConstants theory;
  PracticalParams practical;
  long budget = 0;  // per-agent rollout budget T
  std::uint64_t seed = 0;
  NoiseKind noise_kind = NoiseKind::SphereUniform;
  double noise_raw_bound = 0.0;  // TruncatedGaussian only; 0 picks 4n
  double truncation_tol = 1e-6;
  double cost_upper_bound = 0.0;  // 0: derive from the oracle at the initial policies
  double blowup_threshold = 1e8;
  ExecMode exec = ExecMode::Parallel;
  NeighborhoodPolicy neighborhoods = NeighborhoodPolicy::Adaptive;
  bool record_exact_gaps = true;
  int max_epochs = 64;  // safety stop; the budget is the intended limit
};

// Elimination step: keep j in i's previous neighborhood iff
// |cost_j - cost_i| <= Delta_l / 2 (inclusive). An agent always keeps itself.
std::vector<std::vector<int>> update_neighborhood(std::span<const double> costs,
                                                  const std::vector<std::vector<int>>& previous,
                                                  double Delta_l);

// Server-side mean of the neighborhood's gradients, ascending agent index,
// pairwise summation. Throws ProtocolError on missing/mismatched gradients.
Eigen::MatrixXd aggregate_gradients(std::span<const Eigen::MatrixXd> gradients,
                                    const std::vector<int>& neighborhood);

// Resets every agent's global policy to the cheapest local policy in its
// neighborhood (ties: lowest agent index).
std::vector<Policy> reinitialize(std::span<const Policy> local_policies,
                                 std::span<const double> estimated_costs,
                                 const std::vector<std::vector<int>>& neighborhoods);

// Runs the full epoch-based protocol until the next epoch would exceed the
// per-agent budget. Throws BudgetError if not even the first epoch fits.
PcpoTrace run_pcpo(const ClusterScenario& scenario, const RunConfig& cfg);

struct CommReport {
  long rounds = 0;
  std::vector<long> per_epoch;
};

// Communication rounds of a completed trace: per epoch, one round per
// collaborative iteration plus one upload of (local policy, estimated cost).
CommReport comm_report(const PcpoTrace& trace);

// Trace export: JSON-lines (one epoch per line, schema_version field) and a
// flat CSV (epoch, agent, cluster, neighborhood_size, est_cost, exact_gap,
// rollouts, comm_rounds, reinit_flag).
void write_trace_jsonl(const PcpoTrace& trace, std::ostream& out);
void write_trace_csv(const PcpoTrace& trace, std::ostream& out);

}  // namespace pcpo
