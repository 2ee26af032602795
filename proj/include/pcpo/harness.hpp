#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "pcpo/protocol.hpp"

namespace pcpo {

// How heterogeneity is injected across clusters. Scaling the state cost keeps
// every cluster stabilizable by the same gains (the benign regime); shifting
// the dynamics makes cross-cluster collaboration actively dangerous.
enum class HeterogeneityMode { QScale, APerturb };

struct GeneratorParams {
  int num_agents = 0;
  int num_clusters = 0;
  std::vector<int> cluster_sizes;  // empty: as balanced as possible
  int state_dim = 1;
  int input_dim = 1;
  double gamma = 0.9;
  double heterogeneity = 1.0;  // required lower bound on the separation gap
  HeterogeneityMode mode = HeterogeneityMode::QScale;
  double initial_policy_spread = 0.3;  // relative model perturbation for initial gains
  double base_spectral_radius = 0.6;   // 0 gives driftless dynamics (needs full-rank B)
};

// Builds a scenario whose oracle separation gap is at least
// params.heterogeneity, with stabilizing initial policies. Deterministic in
// (params, seed). Throws ConfigError when the request is infeasible.
ClusterScenario generate_scenario(const GeneratorParams& params, std::uint64_t seed);

// Separation gap of a scenario; +inf for a single cluster.
double scenario_gap(const ClusterScenario& scenario);

inline constexpr const char* kAlgoPcpo = "pcpo";
inline constexpr const char* kAlgoLocalOnly = "local_only";
inline constexpr const char* kAlgoOracleClustered = "oracle_clustered";
inline constexpr const char* kAlgoNaiveGlobal = "naive_global";

// Maps an algorithm name to its neighborhood policy; ConfigError on unknown
// names.
NeighborhoodPolicy algorithm_policy(const std::string& name);

struct MetricsRow {
  std::string algorithm;
  std::uint64_t seed = 0;
  int agent = 0;
  int cluster = 0;
  double final_gap = 0.0;       // oracle suboptimality of the final global policy
  bool clustering_correct = false;
  int first_correct_epoch = -1; // earliest epoch from which the neighborhood stays correct
  long rollouts_used = 0;
  long comm_rounds = 0;
};

// Runs one algorithm on a scenario and flattens the trace into per-agent rows.
std::vector<MetricsRow> run_algorithm(const std::string& name, const ClusterScenario& scenario,
                                      const RunConfig& base_config, std::uint64_t seed,
                                      PcpoTrace* trace_out = nullptr);

void write_metrics_csv(std::span<const MetricsRow> rows, std::ostream& out);
std::vector<MetricsRow> read_metrics_csv(std::istream& in);

struct GroupSummary {
  std::string algorithm;
  int cluster_size = 0;
  int rows = 0;
  double median_gap = 0.0;
  double iqr_low = 0.0;
  double iqr_high = 0.0;
  double clustering_rate = 0.0;
};

struct SpeedupEntry {
  std::string algorithm;
  int cluster_size = 0;
  double median_ratio_vs_local = 0.0;  // ratio of median gaps
  double ci_low = 0.0;                 // bootstrap CI over seeds
  double ci_high = 0.0;
};

struct CommFitEntry {
  std::string algorithm;
  int runs = 0;
  double slope = 0.0;
  double r_squared = 0.0;
};

struct Summary {
  std::vector<GroupSummary> groups;
  std::vector<SpeedupEntry> speedups;
  std::vector<CommFitEntry> comm_fits;  // comm rounds vs log2 budget, when measurable
};

// Per-(algorithm, cluster size) medians/IQRs, clustering-success rates, the
// speedup table against the local-only baseline (bootstrap CI over seeds,
// 1000 resamples) and, when runs span several budgets, a comm-vs-log-budget
// fit. Deterministic.
Summary summarize(std::span<const MetricsRow> rows);

void write_summary_csv(const Summary& summary, std::ostream& out);
void write_summary_text(const Summary& summary, std::ostream& out);

// Percentile bootstrap CI for the ratio of group medians (numerator /
// denominator), resampling whole seeds. Used by the speedup table and the
// acceptance checks.
struct BootstrapCi {
  double point = 0.0;
  double low = 0.0;
  double high = 0.0;
};
BootstrapCi bootstrap_median_ratio(std::span<const MetricsRow> numerator,
                                   std::span<const MetricsRow> denominator, int resamples = 1000,
                                   std::uint64_t seed = 0x9E3779B97F4A7C15ull);

// Empirical probes of the problem constants on one system: Lipschitz and
// gradient-Lipschitz ratios over random pairs in the restricted set,
// the gradient-domination constant, the largest observed noisy rollout cost,
// and a locality radius that keeps perturbations inside the restricted set.
struct ProbeParams {
  double Delta0_tilde = 0.0;  // restricted set: cost gap <= 10 * Delta0_tilde
  int policy_samples = 64;
  int pair_samples = 128;
  int rollout_samples = 256;
  double fd_step = 1e-6;
};
ProbedConstants probe_constants(const SystemTuple& sys, const ProbeParams& params,
                                const NoiseModel& noise, const RolloutConfig& cfg,
                                std::uint64_t seed, ExecMode exec = ExecMode::Parallel);

}  // namespace pcpo
