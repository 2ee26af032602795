#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "pcpo/errors.hpp"
#include "pcpo/protocol.hpp"

using namespace pcpo;

namespace {

SystemTuple scalar_system(double a, double b, double q, double r, double gamma) {
  return SystemTuple::validated(Eigen::MatrixXd::Constant(1, 1, a),
                                Eigen::MatrixXd::Constant(1, 1, b),
                                Eigen::MatrixXd::Constant(1, 1, q),
                                Eigen::MatrixXd::Constant(1, 1, r), gamma);
}

Policy scalar_policy(double k) { return Policy{Eigen::MatrixXd::Constant(1, 1, k)}; }

// Two scalar clusters with well separated optimal costs and near-optimal
// initial gains.
ClusterScenario two_cluster_scenario(int per_cluster) {
  ClusterScenario s;
  s.systems.push_back(scalar_system(0.5, 1.0, 1.0, 1.0, 0.9));
  s.systems.push_back(scalar_system(0.5, 1.0, 3.0, 1.0, 0.9));
  const Policy k0 = solve_dare(s.systems[0]).gain;
  const Policy k1 = solve_dare(s.systems[1]).gain;
  for (int i = 0; i < per_cluster; ++i) {
    s.assignment.push_back(0);
    s.initial_policies.push_back(scalar_policy(k0.K(0, 0) + 0.05 * (i + 1)));
  }
  for (int i = 0; i < per_cluster; ++i) {
    s.assignment.push_back(1);
    s.initial_policies.push_back(scalar_policy(k1.K(0, 0) + 0.05 * (i + 1)));
  }
  s.validate();
  return s;
}

RunConfig practical_config(long budget, std::uint64_t seed) {
  RunConfig cfg;
  cfg.mode = ScheduleMode::Practical;
  cfg.Delta0 = 16.0;
  cfg.delta = 0.2;
  cfg.practical = {150, 2, 0.0, 0.003, 0.2, 0.3};
  cfg.budget = budget;
  cfg.seed = seed;
  return cfg;
}

ScheduleConfig practical_schedule_config(int agents, int dim) {
  ScheduleConfig sc;
  sc.mode = ScheduleMode::Practical;
  sc.Delta0 = 8.0;
  sc.delta = 0.1;
  sc.num_agents = agents;
  sc.dim = dim;
  sc.practical = {100, 3, 0.5, 0.01, 0.2, 0.4};
  return sc;
}

std::string serialize(const PcpoTrace& trace) {
  std::ostringstream os;
  write_trace_jsonl(trace, os);
  return os.str();
}

}  // namespace

TEST_CASE("schedules halve the gap estimate and shrink the failure budget") {
  const ScheduleConfig sc = practical_schedule_config(4, 1);
  EpochSchedule prev{};
  std::vector<EpochSchedule> epochs;
  for (int l = 1; l <= 3; ++l) {
    const EpochSchedule s = make_schedule(l, l == 1 ? nullptr : &prev, sc);
    epochs.push_back(s);
    prev = s;
  }
  CHECK(epochs[0].Delta_l == 4.0);
  CHECK(epochs[1].Delta_l == 2.0);
  CHECK(epochs[2].Delta_l == 1.0);  // Delta_0 = 8 halves to 1 by epoch 3
  CHECK(epochs[0].delta_l == doctest::Approx(0.05));  // delta / (2 l^2)
  CHECK(epochs[1].delta_l == doctest::Approx(0.1 / 8.0));
  CHECK(epochs[0].M_l == 100);
  CHECK(epochs[1].M_l == 400);
  CHECK(epochs[2].M_l == 1600);
  CHECK(epochs[1].R_l >= epochs[0].R_l);
  CHECK(epochs[0].rollouts_per_agent() ==
        2L * epochs[0].R_l * epochs[0].M_l + epochs[0].M_l);
  // A singleton neighborhood leaves the collaborative radius at the local one.
  CHECK(epochs[0].r_global(1) == epochs[0].r_local);
  CHECK(epochs[0].r_global(16) == doctest::Approx(epochs[0].r_tilde / 2.0));
}

TEST_CASE("schedule validation rejects malformed configs") {
  ScheduleConfig sc = practical_schedule_config(4, 1);
  sc.Delta0 = 0.0;
  CHECK_THROWS_AS(make_schedule(1, nullptr, sc), ConfigError);
  sc = practical_schedule_config(4, 1);
  sc.delta = 1.0;
  CHECK_THROWS_AS(make_schedule(1, nullptr, sc), ConfigError);
  sc = practical_schedule_config(4, 1);
  const EpochSchedule first = make_schedule(1, nullptr, sc);
  CHECK_THROWS_AS(make_schedule(3, &first, sc), ConfigError);  // wrong predecessor
}

TEST_CASE("theory constants ledger") {
  // Hand-derived from the closed forms with mu=1, phi=2, lambda=3, rho=1/2,
  // G_inf=10, D=2: c_p8 = 10 + 3/4 + 1/4 = 11, max(sqrt(phi),1/rho)^2 = 4,
  // c_p9 = 12*11*4 = 528, c_p1 = min(8, 1/8, 1/14) = 1/14, c_p2 = 56.
  const TheoryConstants c = TheoryConstants::derive(1.0, 2.0, 3.0, 0.5, 10.0, 4.0, 4.0, 2);
  CHECK(c.c_p8 == doctest::Approx(11.0));
  CHECK(c.c_p9 == doctest::Approx(528.0));
  CHECK(c.c_p1 == doctest::Approx(1.0 / 14.0));
  CHECK(c.c_p2 == doctest::Approx(56.0));
  CHECK(c.c_p5 == doctest::Approx(11.0));
  CHECK(c.c_p6 == 0.5);
  CHECK(c.c_p10 == doctest::Approx(256.0 * 528.0 * 528.0 * 4.0));
  CHECK_NOTHROW(c.validate(4.0, 2));

  TheoryConstants broken = c;
  broken.c_p9 = 1.0;
  CHECK_THROWS_AS(broken.validate(4.0, 2), ConfigError);

  // Theory-mode schedules follow the ledger shape.
  ScheduleConfig sc;
  sc.mode = ScheduleMode::Theory;
  sc.Delta0 = 4.0;
  sc.delta = 0.1;
  sc.num_agents = 3;
  sc.dim = 2;
  sc.theory = c;
  const EpochSchedule s1 = make_schedule(1, nullptr, sc);
  CHECK(s1.eta == doctest::Approx(1.0 / 14.0));
  CHECK(s1.R_l >= 1);
  CHECK(s1.M_l >= 1);
  CHECK(s1.r_local == std::min(0.5, s1.r_tilde));
  const EpochSchedule s2 = make_schedule(2, &s1, sc);
  CHECK(s2.M_l > s1.M_l);
  CHECK(s2.R_l >= s1.R_l);
}

TEST_CASE("neighborhood update: threshold, boundary, monotonicity") {
  const std::vector<std::vector<int>> all{{0, 1, 2}, {0, 1, 2}, {0, 1, 2}};
  const std::vector<double> costs{10.0, 10.1, 20.0};
  const auto next = update_neighborhood(costs, all, 1.0);
  CHECK(next[0] == std::vector<int>{0, 1});
  CHECK(next[1] == std::vector<int>{0, 1});
  CHECK(next[2] == std::vector<int>{2});

  // Exactly Delta_l / 2 apart is retained (inclusive comparison).
  const auto boundary = update_neighborhood(std::vector<double>{0.0, 0.5}, {{0, 1}, {0, 1}}, 1.0);
  CHECK(boundary[0] == std::vector<int>{0, 1});
  CHECK(boundary[1] == std::vector<int>{0, 1});

  // Elimination is permanent: identical costs do not re-admit an outsider.
  const auto pruned = update_neighborhood(std::vector<double>{5.0, 5.0}, {{0}, {0, 1}}, 1.0);
  CHECK(pruned[0] == std::vector<int>{0});
  CHECK(pruned[1] == std::vector<int>{0, 1});
}

TEST_CASE("neighborhood update is symmetric for symmetric inputs") {
  RngStream rng(33, 0, 0, Draw::Test);
  for (int trial = 0; trial < 20; ++trial) {
    const int N = 6;
    std::vector<double> costs;
    for (int i = 0; i < N; ++i) costs.push_back(10.0 * rng.uniform01());
    std::vector<std::vector<int>> prev(N);
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < N; ++j) {
        if (i == j || rng.uniform01() < 0.7) prev[i].push_back(j);
      }
    }
    const auto next = update_neighborhood(costs, prev, 2.0);
    for (int i = 0; i < N; ++i) {
      CHECK(std::find(next[i].begin(), next[i].end(), i) != next[i].end());
      for (int j = 0; j < N; ++j) {
        const bool i_in_j_prev =
            std::find(prev[j].begin(), prev[j].end(), i) != prev[j].end();
        const bool j_in_i_prev =
            std::find(prev[i].begin(), prev[i].end(), j) != prev[i].end();
        if (i_in_j_prev && j_in_i_prev && costs[i] == costs[j]) {
          const bool ij = std::find(next[i].begin(), next[i].end(), j) != next[i].end();
          const bool ji = std::find(next[j].begin(), next[j].end(), i) != next[j].end();
          CHECK(ij == ji);
        }
      }
    }
  }
}

TEST_CASE("gradient aggregation") {
  Eigen::MatrixXd g(1, 2);
  g << 1.0, -2.0;
  std::vector<Eigen::MatrixXd> grads{g, -g, g, g};

  CHECK(aggregate_gradients(grads, {0}) == g);
  CHECK(aggregate_gradients(grads, {0, 1}).norm() == 0.0);
  CHECK(aggregate_gradients(grads, {0, 2, 3}) == g);

  std::vector<Eigen::MatrixXd> missing{g, Eigen::MatrixXd()};
  CHECK_THROWS_AS(aggregate_gradients(missing, {0, 1}), ProtocolError);
  CHECK_THROWS_AS(aggregate_gradients(grads, std::vector<int>{}), ProtocolError);
  CHECK_THROWS_AS(aggregate_gradients(grads, {0, 7}), ProtocolError);
}

TEST_CASE("reinitialization picks the cheapest local policy, ties to the lowest index") {
  const std::vector<Policy> locals{scalar_policy(1.0), scalar_policy(2.0), scalar_policy(3.0)};
  const std::vector<double> costs{5.0, 7.0, 5.0};
  const auto fresh = reinitialize(locals, costs, {{0}, {0, 1}, {0, 2}});
  CHECK(fresh[0].K(0, 0) == 1.0);  // singleton keeps its own
  CHECK(fresh[1].K(0, 0) == 1.0);  // argmin over {0, 1}
  CHECK(fresh[2].K(0, 0) == 1.0);  // tie between 0 and 2 goes to agent 0
}

TEST_CASE("single-agent run degenerates to local optimization") {
  ClusterScenario s;
  s.systems.push_back(scalar_system(0.5, 1.0, 1.0, 1.0, 0.9));
  s.assignment = {0};
  s.initial_policies = {scalar_policy(0.45)};
  const double opt = solve_dare(s.systems[0]).cost;
  const double init_gap = exact_cost(s.systems[0], s.initial_policies[0]) - opt;

  const PcpoTrace small = run_pcpo(s, practical_config(800, 3));
  const PcpoTrace large = run_pcpo(s, practical_config(24000, 3));
  for (const auto& e : large.epochs) {
    CHECK(e.neighborhoods[0] == std::vector<int>{0});
    CHECK_FALSE(e.reinitialized);
  }
  CHECK(large.last_epoch() > small.last_epoch());
  CHECK(large.epochs.back().exact_gaps[0] < small.epochs.back().exact_gaps[0]);
  CHECK(large.epochs.back().exact_gaps[0] < init_gap);
}

TEST_CASE("identical systems never eliminate and share their final gap") {
  ClusterScenario s;
  s.systems.push_back(scalar_system(0.5, 1.0, 1.0, 1.0, 0.9));
  s.assignment = {0, 0, 0, 0};
  const Policy k0 = scalar_policy(solve_dare(s.systems[0]).gain.K(0, 0) + 0.1);
  s.initial_policies = {k0, k0, k0, k0};

  const PcpoTrace trace = run_pcpo(s, practical_config(10000, 11));
  REQUIRE(trace.last_epoch() >= 2);
  for (const auto& e : trace.epochs) {
    for (int i = 0; i < 4; ++i) {
      CHECK(e.neighborhoods[i] == std::vector<int>{0, 1, 2, 3});
    }
  }
  // Same start, same averaged updates: the global sequences coincide.
  const auto& last = trace.epochs.back();
  for (int i = 1; i < 4; ++i) {
    CHECK(last.global_policies[i] == last.global_policies[0]);
    CHECK(last.exact_gaps[i] == last.exact_gaps[0]);
  }
}

TEST_CASE("two clusters separate, reinitialize, then synchronize per cluster") {
  const ClusterScenario s = two_cluster_scenario(3);
  const PcpoTrace trace = run_pcpo(s, practical_config(20000, 21));
  REQUIRE(trace.last_epoch() >= 2);

  const std::vector<int> c0{0, 1, 2}, c1{3, 4, 5};
  int first_correct = -1;
  for (const auto& e : trace.epochs) {
    // Monotone elimination and self-membership on every record.
    for (int i = 0; i < 6; ++i) {
      CHECK(std::find(e.neighborhoods[i].begin(), e.neighborhoods[i].end(), i) !=
            e.neighborhoods[i].end());
    }
    const bool correct =
        e.neighborhoods[0] == c0 && e.neighborhoods[3] == c1 && e.neighborhoods[5] == c1;
    if (correct && first_correct < 0) {
      first_correct = e.schedule.l;
      CHECK(e.reinitialized);  // the first separation rewrites the global policies
    }
  }
  REQUIRE(first_correct >= 1);

  // After the reinitializing epoch, same-cluster agents carry bit-identical
  // global policies.
  for (const auto& e : trace.epochs) {
    if (e.schedule.l < first_correct) continue;
    CHECK(e.global_policies[1] == e.global_policies[0]);
    CHECK(e.global_policies[2] == e.global_policies[0]);
    CHECK(e.global_policies[4] == e.global_policies[3]);
    CHECK(e.global_policies[5] == e.global_policies[3]);
  }

  // Monotone elimination across consecutive epochs.
  for (std::size_t e = 1; e < trace.epochs.size(); ++e) {
    for (int i = 0; i < 6; ++i) {
      for (int j : trace.epochs[e].neighborhoods[i]) {
        const auto& prev = trace.epochs[e - 1].neighborhoods[i];
        CHECK(std::find(prev.begin(), prev.end(), j) != prev.end());
      }
    }
  }

  // Exact per-epoch sample accounting.
  std::vector<long> before(6, 0);
  for (const auto& e : trace.epochs) {
    for (int i = 0; i < 6; ++i) {
      CHECK(e.rollouts[i] - before[i] == e.schedule.rollouts_per_agent());
      before[i] = e.rollouts[i];
    }
  }
}

TEST_CASE("traces replay byte-identically under a fixed seed") {
  const ClusterScenario s = two_cluster_scenario(2);
  const PcpoTrace a = run_pcpo(s, practical_config(8000, 77));
  const PcpoTrace b = run_pcpo(s, practical_config(8000, 77));
  CHECK(serialize(a) == serialize(b));
  const PcpoTrace c = run_pcpo(s, practical_config(8000, 78));
  CHECK(serialize(a) != serialize(c));
}

TEST_CASE("communication accounting") {
  const ClusterScenario s = two_cluster_scenario(2);
  // R_l = 5 with rho_R = 0; one epoch fits the budget exactly.
  RunConfig cfg = practical_config(0, 5);
  cfg.practical = {100, 5, 0.0, 0.003, 0.2, 0.3};
  cfg.budget = 100 * (2 * 5 + 1);
  const PcpoTrace trace = run_pcpo(s, cfg);
  REQUIRE(trace.last_epoch() == 1);
  const CommReport report = comm_report(trace);
  CHECK(report.rounds == 6);  // five collaborative rounds plus one upload
  CHECK(report.per_epoch == std::vector<long>{6});

  cfg.budget = 100 * 11 - 1;
  CHECK_THROWS_AS(run_pcpo(s, cfg), BudgetError);
}

TEST_CASE("trace exports carry the documented schema") {
  const ClusterScenario s = two_cluster_scenario(2);
  const PcpoTrace trace = run_pcpo(s, practical_config(8000, 5));

  std::ostringstream jsonl;
  write_trace_jsonl(trace, jsonl);
  std::istringstream lines(jsonl.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("schema_version") == 1);
    CHECK(j.at("epoch") == count + 1);
    CHECK(j.at("neighborhoods").size() == 4);
    CHECK(j.at("rollouts").size() == 4);
    ++count;
  }
  CHECK(count == trace.last_epoch());

  std::ostringstream csv;
  write_trace_csv(trace, csv);
  std::string header;
  std::istringstream rows(csv.str());
  std::getline(rows, header);
  CHECK(header ==
        "epoch,agent,cluster,neighborhood_size,est_cost,exact_gap,rollouts,comm_rounds,"
        "reinit_flag");
}
