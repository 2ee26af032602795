#include "pcpo/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "pcpo/errors.hpp"

namespace pcpo {

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, RngStream& rng) {
  Eigen::MatrixXd M(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) M(i, j) = rng.normal();
  }
  return M;
}

// Base (A, B) pair with the requested spectral radius and unit-scale B;
// redrawn until controllable.
void base_dynamics(int n, int m, double radius, RngStream& rng, Eigen::MatrixXd& A,
                   Eigen::MatrixXd& B) {
  for (int attempt = 0; attempt < 32; ++attempt) {
    A = random_matrix(n, n, rng);
    const double sr = spectral_radius(A);
    A = (sr > 0.0 && radius > 0.0) ? (radius / sr * A).eval() : Eigen::MatrixXd::Zero(n, n);
    B = random_matrix(n, m, rng);
    const double bn = B.norm();
    if (bn < 1e-8) continue;
    B *= std::sqrt(static_cast<double>(m)) / bn;
    try {
      SystemTuple::validated(A, B, Eigen::MatrixXd::Identity(n, n),
                             Eigen::MatrixXd::Identity(m, m), 0.5);
      return;
    } catch (const ConfigError&) {
      continue;
    }
  }
  throw ConfigError("generate_scenario: could not draw a controllable base system");
}

std::vector<SystemTuple> build_cluster_systems(const GeneratorParams& p, const Eigen::MatrixXd& A,
                                               const Eigen::MatrixXd& B) {
  const Eigen::MatrixXd Q = Eigen::MatrixXd::Identity(p.state_dim, p.state_dim);
  const Eigen::MatrixXd R = Eigen::MatrixXd::Identity(p.input_dim, p.input_dim);

  const auto systems_for = [&](double spread) {
    std::vector<SystemTuple> systems;
    for (int j = 0; j < p.num_clusters; ++j) {
      const double factor = 1.0 + spread * j;
      if (p.mode == HeterogeneityMode::QScale) {
        systems.push_back(SystemTuple::validated(A, B, factor * Q, R, p.gamma));
      } else {
        systems.push_back(SystemTuple::validated(factor * A, B, Q, R, p.gamma));
      }
    }
    return systems;
  };

  if (p.num_clusters == 1) return systems_for(0.0);

  // Proportional search on the spread: gaps grow monotonically with it, so
  // rescaling by target/achieved converges in a few rounds. Accept the first
  // spread landing in [h, 1.05 h]; keep the smallest feasible one as backup.
  double spread = 1.0;
  double best_spread = -1.0;
  double best_gap = 0.0;
  for (int iter = 0; iter < 50; ++iter) {
    std::vector<SystemTuple> systems = systems_for(spread);
    const double gap = separation_gap(systems);
    if (gap >= p.heterogeneity) {
      if (best_spread < 0.0 || spread < best_spread) {
        best_spread = spread;
        best_gap = gap;
      }
      if (gap <= 1.05 * p.heterogeneity) return systems;
    }
    if (!(gap > 0.0)) {
      spread *= 2.0;
      continue;
    }
    spread *= p.heterogeneity / gap;
    if (!std::isfinite(spread) || spread > 1e9) break;
  }
  if (best_spread > 0.0 && best_gap >= p.heterogeneity) return systems_for(best_spread);
  throw ConfigError("generate_scenario: heterogeneity target unreachable with the Q/A spread");
}

}  // namespace

ClusterScenario generate_scenario(const GeneratorParams& p, std::uint64_t seed) {
  if (p.num_agents < 1 || p.num_clusters < 1 || p.num_clusters > p.num_agents) {
    throw ConfigError("generate_scenario: need 1 <= clusters <= agents");
  }
  if (p.state_dim < 1 || p.input_dim < 1) throw ConfigError("generate_scenario: bad dimensions");
  if (!(p.gamma > 0.0 && p.gamma < 1.0)) throw ConfigError("generate_scenario: bad gamma");
  if (!(p.heterogeneity > 0.0)) throw ConfigError("generate_scenario: heterogeneity must be > 0");

  std::vector<int> sizes = p.cluster_sizes;
  if (sizes.empty()) {
    sizes.assign(p.num_clusters, p.num_agents / p.num_clusters);
    for (int r = 0; r < p.num_agents % p.num_clusters; ++r) sizes[r] += 1;
  }
  if (static_cast<int>(sizes.size()) != p.num_clusters) {
    throw ConfigError("generate_scenario: one size per cluster required");
  }
  int total = 0;
  for (int s : sizes) {
    if (s < 1) throw ConfigError("generate_scenario: empty cluster requested");
    total += s;
  }
  if (total != p.num_agents) throw ConfigError("generate_scenario: cluster sizes must sum to N");

  RngStream rng(seed, /*agent=*/0, /*epoch=*/0, Draw::ScenarioGen);
  Eigen::MatrixXd A, B;
  base_dynamics(p.state_dim, p.input_dim, p.base_spectral_radius, rng, A, B);

  ClusterScenario scenario;
  scenario.systems = build_cluster_systems(p, A, B);
  for (int j = 0; j < p.num_clusters; ++j) {
    scenario.assignment.insert(scenario.assignment.end(), sizes[j], j);
  }

  // Initial gains: solve the design problem on a perturbed model, shrink the
  // perturbation until the gain stabilizes the true system.
  for (int agent = 0; agent < p.num_agents; ++agent) {
    const SystemTuple& sys = scenario.systems[scenario.assignment[agent]];
    RngStream astream = rng.substream(static_cast<std::uint64_t>(agent) + 1);
    const double a_scale = std::max(sys.A.norm() / std::sqrt(static_cast<double>(sys.n())), 0.25);
    const double b_scale = sys.B.norm() / std::sqrt(static_cast<double>(sys.m()));
    Policy K0;
    bool ok = false;
    double eps = p.initial_policy_spread;
    for (int attempt = 0; attempt < 8 && !ok; ++attempt, eps *= 0.5) {
      const Eigen::MatrixXd Ap = sys.A + eps * a_scale * random_matrix(sys.n(), sys.n(), astream);
      const Eigen::MatrixXd Bp = sys.B + eps * b_scale * random_matrix(sys.n(), sys.m(), astream);
      try {
        const SystemTuple perturbed = SystemTuple::validated(Ap, Bp, sys.Q, sys.R, sys.gamma);
        K0 = solve_dare(perturbed).gain;
        ok = is_stabilizing(K0, sys);
      } catch (const ConfigError&) {
      } catch (const ConvergenceError&) {
      }
    }
    if (!ok) K0 = solve_dare(sys).gain;
    scenario.initial_policies.push_back(K0);
  }
  scenario.validate();
  return scenario;
}

double scenario_gap(const ClusterScenario& scenario) {
  if (scenario.num_clusters() < 2) return std::numeric_limits<double>::infinity();
  return separation_gap(scenario.systems);
}

NeighborhoodPolicy algorithm_policy(const std::string& name) {
  if (name == kAlgoPcpo) return NeighborhoodPolicy::Adaptive;
  if (name == kAlgoLocalOnly) return NeighborhoodPolicy::FixedSelf;
  if (name == kAlgoOracleClustered) return NeighborhoodPolicy::FixedTrueClusters;
  if (name == kAlgoNaiveGlobal) return NeighborhoodPolicy::FixedAll;
  throw ConfigError("unknown algorithm: " + name);
}

std::vector<MetricsRow> run_algorithm(const std::string& name, const ClusterScenario& scenario,
                                      const RunConfig& base_config, std::uint64_t seed,
                                      PcpoTrace* trace_out) {
  RunConfig cfg = base_config;
  cfg.seed = seed;
  cfg.neighborhoods = algorithm_policy(name);
  cfg.record_exact_gaps = true;
  const PcpoTrace trace = run_pcpo(scenario, cfg);
  if (trace_out) *trace_out = trace;

  const auto clusters = scenario.clusters();
  const EpochRecord& last = trace.epochs.back();
  std::vector<MetricsRow> rows;
  for (int i = 0; i < trace.num_agents; ++i) {
    MetricsRow row;
    row.algorithm = name;
    row.seed = seed;
    row.agent = i;
    row.cluster = scenario.assignment[i];
    row.final_gap = last.exact_gaps[i];
    const auto& truth = clusters[row.cluster];
    row.clustering_correct = last.neighborhoods[i] == truth;
    row.first_correct_epoch = -1;
    for (auto it = trace.epochs.rbegin(); it != trace.epochs.rend(); ++it) {
      if (it->neighborhoods[i] == truth) {
        row.first_correct_epoch = it->schedule.l;
      } else {
        break;
      }
    }
    row.rollouts_used = last.rollouts[i];
    row.comm_rounds = last.comm_rounds;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_metrics_csv(std::span<const MetricsRow> rows, std::ostream& out) {
  out << "algorithm,seed,agent,cluster,final_gap,clustering_correct,first_correct_epoch,"
         "rollouts_used,comm_rounds\n";
  for (const auto& r : rows) {
    out << r.algorithm << ',' << r.seed << ',' << r.agent << ',' << r.cluster << ','
        << format_double(r.final_gap) << ',' << (r.clustering_correct ? 1 : 0) << ','
        << r.first_correct_epoch << ',' << r.rollouts_used << ',' << r.comm_rounds << "\n";
  }
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::vector<MetricsRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 9) throw ConfigError("metrics CSV: expected 9 columns");
    MetricsRow r;
    r.algorithm = fields[0];
    r.seed = std::stoull(fields[1]);
    r.agent = std::stoi(fields[2]);
    r.cluster = std::stoi(fields[3]);
    r.final_gap = std::strtod(fields[4].c_str(), nullptr);
    r.clustering_correct = fields[5] == "1";
    r.first_correct_epoch = std::stoi(fields[6]);
    r.rollouts_used = std::stol(fields[7]);
    r.comm_rounds = std::stol(fields[8]);
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

// Cluster size of each row, inferred from rows sharing (algorithm, seed,
// cluster).
std::vector<int> infer_cluster_sizes(std::span<const MetricsRow> rows) {
  std::map<std::tuple<std::string, std::uint64_t, int>, int> counts;
  for (const auto& r : rows) counts[{r.algorithm, r.seed, r.cluster}] += 1;
  std::vector<int> sizes;
  sizes.reserve(rows.size());
  for (const auto& r : rows) sizes.push_back(counts[{r.algorithm, r.seed, r.cluster}]);
  return sizes;
}

std::vector<double> gaps_of(std::span<const MetricsRow> rows) {
  std::vector<double> g;
  g.reserve(rows.size());
  for (const auto& r : rows) g.push_back(r.final_gap);
  return g;
}

}  // namespace

BootstrapCi bootstrap_median_ratio(std::span<const MetricsRow> numerator,
                                   std::span<const MetricsRow> denominator, int resamples,
                                   std::uint64_t seed) {
  if (numerator.empty() || denominator.empty()) {
    throw ConfigError("bootstrap_median_ratio: empty group");
  }
  std::map<std::uint64_t, std::vector<double>> num_by_seed, den_by_seed;
  for (const auto& r : numerator) num_by_seed[r.seed].push_back(r.final_gap);
  for (const auto& r : denominator) den_by_seed[r.seed].push_back(r.final_gap);
  std::vector<std::uint64_t> seeds;
  for (const auto& [s, _] : num_by_seed) {
    if (den_by_seed.count(s)) seeds.push_back(s);
  }
  if (seeds.empty()) throw ConfigError("bootstrap_median_ratio: no common seeds");

  BootstrapCi ci;
  ci.point = median(gaps_of(numerator)) / median(gaps_of(denominator));

  RngStream rng(seed, 0, 0, Draw::Test);
  std::vector<double> ratios;
  ratios.reserve(static_cast<std::size_t>(resamples));
  for (int b = 0; b < resamples; ++b) {
    std::vector<double> num, den;
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const std::uint64_t pick = seeds[rng.next_u64() % seeds.size()];
      const auto& nv = num_by_seed[pick];
      const auto& dv = den_by_seed[pick];
      num.insert(num.end(), nv.begin(), nv.end());
      den.insert(den.end(), dv.begin(), dv.end());
    }
    ratios.push_back(median(std::move(num)) / median(std::move(den)));
  }
  ci.low = quantile(ratios, 0.025);
  ci.high = quantile(ratios, 0.975);
  return ci;
}

Summary summarize(std::span<const MetricsRow> rows) {
  if (rows.empty()) throw ConfigError("summarize: no rows");
  const std::vector<int> sizes = infer_cluster_sizes(rows);

  Summary summary;
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    groups[{rows[i].algorithm, sizes[i]}].push_back(i);
  }
  for (const auto& [key, idx] : groups) {
    GroupSummary g;
    g.algorithm = key.first;
    g.cluster_size = key.second;
    g.rows = static_cast<int>(idx.size());
    std::vector<double> gaps;
    int correct = 0;
    for (std::size_t i : idx) {
      gaps.push_back(rows[i].final_gap);
      correct += rows[i].clustering_correct ? 1 : 0;
    }
    g.median_gap = median(gaps);
    g.iqr_low = quantile(gaps, 0.25);
    g.iqr_high = quantile(gaps, 0.75);
    g.clustering_rate = static_cast<double>(correct) / static_cast<double>(idx.size());
    summary.groups.push_back(std::move(g));
  }

  // Speedup vs the local-only baseline at matched cluster size.
  for (const auto& [key, idx] : groups) {
    if (key.first == kAlgoLocalOnly) continue;
    const auto base_it = groups.find({kAlgoLocalOnly, key.second});
    if (base_it == groups.end()) continue;
    std::vector<MetricsRow> num, den;
    for (std::size_t i : idx) num.push_back(rows[i]);
    for (std::size_t i : base_it->second) den.push_back(rows[i]);
    try {
      const BootstrapCi ci = bootstrap_median_ratio(num, den);
      summary.speedups.push_back({key.first, key.second, ci.point, ci.low, ci.high});
    } catch (const ConfigError&) {
      // no common seeds: skip the entry
    }
  }

  // Communication rounds against the (log) budget when several budgets are
  // present.
  std::map<std::string, std::map<std::pair<std::uint64_t, long>, long>> runs;
  for (const auto& r : rows) {
    auto& run = runs[r.algorithm][{r.seed, r.comm_rounds}];
    run = std::max(run, r.rollouts_used);
  }
  for (const auto& [algo, by_run] : runs) {
    std::set<long> budgets;
    std::vector<double> x, y;
    for (const auto& [key, budget] : by_run) {
      if (budget <= 0) continue;
      budgets.insert(budget);
      x.push_back(std::log2(static_cast<double>(budget)));
      y.push_back(static_cast<double>(key.second));
    }
    if (budgets.size() >= 3) {
      const LinearFit fit = linear_fit(x, y);
      summary.comm_fits.push_back(
          {algo, static_cast<int>(x.size()), fit.slope, fit.r_squared});
    }
  }
  return summary;
}

void write_summary_csv(const Summary& summary, std::ostream& out) {
  out << "algorithm,cluster_size,rows,median_gap,iqr_low,iqr_high,clustering_rate\n";
  for (const auto& g : summary.groups) {
    out << g.algorithm << ',' << g.cluster_size << ',' << g.rows << ','
        << format_double(g.median_gap) << ',' << format_double(g.iqr_low) << ','
        << format_double(g.iqr_high) << ',' << format_double(g.clustering_rate) << "\n";
  }
  out << "speedup_algorithm,cluster_size,median_ratio_vs_local,ci_low,ci_high\n";
  for (const auto& s : summary.speedups) {
    out << s.algorithm << ',' << s.cluster_size << ',' << format_double(s.median_ratio_vs_local)
        << ',' << format_double(s.ci_low) << ',' << format_double(s.ci_high) << "\n";
  }
  out << "comm_algorithm,runs,slope_per_log2,comm_r_squared\n";
  for (const auto& c : summary.comm_fits) {
    out << c.algorithm << ',' << c.runs << ',' << format_double(c.slope) << ','
        << format_double(c.r_squared) << "\n";
  }
}

void write_summary_text(const Summary& summary, std::ostream& out) {
  out << "final gap by (algorithm, cluster size)\n";
  out << std::left << std::setw(18) << "algorithm" << std::setw(6) << "size" << std::setw(8)
      << "rows" << std::setw(14) << "median" << std::setw(14) << "iqr25" << std::setw(14)
      << "iqr75" << std::setw(10) << "clustered" << "\n";
  for (const auto& g : summary.groups) {
    out << std::left << std::setw(18) << g.algorithm << std::setw(6) << g.cluster_size
        << std::setw(8) << g.rows << std::setw(14) << format_double(g.median_gap) << std::setw(14)
        << format_double(g.iqr_low) << std::setw(14) << format_double(g.iqr_high) << std::setw(10)
        << format_double(g.clustering_rate) << "\n";
  }
  if (!summary.speedups.empty()) {
    out << "\nmedian-gap ratio vs local_only (bootstrap 95% CI)\n";
    for (const auto& s : summary.speedups) {
      out << "  " << s.algorithm << " size " << s.cluster_size << ": "
          << format_double(s.median_ratio_vs_local) << "  [" << format_double(s.ci_low) << ", "
          << format_double(s.ci_high) << "]\n";
    }
  }
  if (!summary.comm_fits.empty()) {
    out << "\ncomm rounds vs log2(budget)\n";
    for (const auto& c : summary.comm_fits) {
      out << "  " << c.algorithm << ": slope " << format_double(c.slope) << ", R^2 "
          << format_double(c.r_squared) << " over " << c.runs << " runs\n";
    }
  }
}

ProbedConstants probe_constants(const SystemTuple& sys, const ProbeParams& params,
                                const NoiseModel& noise, const RolloutConfig& cfg,
                                std::uint64_t seed, ExecMode exec) {
  if (!(params.Delta0_tilde > 0.0)) throw ConfigError("probe_constants: Delta0_tilde must be > 0");
  const DareSolution opt = solve_dare(sys);
  const double gap_cap = 10.0 * params.Delta0_tilde;
  const int m = sys.m();
  const int n = sys.n();

  RngStream rng(seed, 0, 0, Draw::Probe);

  // Largest step from K along U that keeps the suboptimality gap under the
  // cap; bisected against the oracle.
  const auto stay_inside_radius = [&](const Policy& from, const Eigen::MatrixXd& U) {
    double lo = 0.0, hi = 1e-3;
    const auto inside = [&](double r) {
      const Policy probe{from.K + r * U};
      if (!is_stabilizing(probe, sys)) return false;
      return exact_cost(sys, probe) - opt.cost <= gap_cap;
    };
    while (inside(hi) && hi < 1e6) {
      lo = hi;
      hi *= 2.0;
    }
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      (inside(mid) ? lo : hi) = mid;
    }
    return lo;
  };

  // Policies sampled inside the restricted set, spread along random rays.
  std::vector<Policy> policies;
  policies.push_back(opt.gain);
  for (int s = 0; s < params.policy_samples; ++s) {
    const Eigen::MatrixXd U = sample_unit_frobenius(m, n, rng);
    const double reach = stay_inside_radius(opt.gain, U);
    const double t = rng.uniform01();
    policies.push_back(Policy{opt.gain.K + 0.95 * t * reach * U});
  }

  ProbedConstants out;
  out.rho = std::numeric_limits<double>::infinity();
  std::vector<double> mu_candidates;
  for (const auto& K : policies) {
    const double gap = exact_cost(sys, K) - opt.cost;
    const Eigen::MatrixXd grad = cost_gradient_fd(sys, K, params.fd_step);
    if (gap > 1e-9) mu_candidates.push_back(grad.squaredNorm() / gap);
    const Eigen::MatrixXd U = sample_unit_frobenius(m, n, rng);
    out.rho = std::min(out.rho, stay_inside_radius(K, U));
  }
  out.mu = mu_candidates.empty() ? 0.0 : *std::min_element(mu_candidates.begin(),
                                                           mu_candidates.end());

  for (int s = 0; s < params.pair_samples; ++s) {
    const Policy& K = policies[s % policies.size()];
    const Eigen::MatrixXd U = sample_unit_frobenius(m, n, rng);
    const double step = std::min(out.rho, 1e-3 * (1.0 + K.K.norm())) * (0.2 + 0.8 * rng.uniform01());
    const Policy Kp{K.K + step * U};
    if (!is_stabilizing(Kp, sys)) continue;
    const double cost_gap = std::abs(exact_cost(sys, Kp) - exact_cost(sys, K));
    const double grad_gap =
        (cost_gradient_fd(sys, Kp, params.fd_step) - cost_gradient_fd(sys, K, params.fd_step))
            .norm();
    out.lambda = std::max(out.lambda, cost_gap / step);
    out.phi = std::max(out.phi, grad_gap / step);
  }

  // Largest noisy rollout cost over perturbed policies in the set.
  std::vector<double> maxima(static_cast<std::size_t>(params.rollout_samples), 0.0);
  const bool parallel = exec == ExecMode::Parallel;
  const RngStream base(seed, 1, 0, Draw::Probe);
#pragma omp parallel for schedule(static) if (parallel)
  for (int s = 0; s < params.rollout_samples; ++s) {
    RngStream sub = base.substream(static_cast<std::uint64_t>(s));
    const Policy& K = policies[static_cast<std::size_t>(s) % policies.size()];
    const Eigen::MatrixXd U = sample_unit_frobenius(m, n, sub);
    const double r = out.rho * sub.uniform01();
    const RolloutResult res = rollout_cost(sys, Policy{K.K + r * U}, noise, cfg, sub);
    maxima[static_cast<std::size_t>(s)] = res.diverged ? 0.0 : std::abs(res.cost);
  }
  out.G_inf = *std::max_element(maxima.begin(), maxima.end());
  return out;
}

}  // namespace pcpo
