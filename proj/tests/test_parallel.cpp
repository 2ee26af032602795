// The OpenMP kernels must agree bit-for-bit with their serial reference,
// whatever the thread count: element work is keyed by counter-based
// substreams and reductions are pairwise over materialized buffers.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <sstream>

#include "pcpo/harness.hpp"

using namespace pcpo;

namespace {

ClusterScenario desk_scenario(std::uint64_t seed) {
  GeneratorParams p;
  p.num_agents = 6;
  p.num_clusters = 2;
  p.state_dim = 2;
  p.input_dim = 1;
  p.heterogeneity = 4.0;
  return generate_scenario(p, seed);
}

std::string serialize(const PcpoTrace& trace) {
  std::ostringstream os;
  write_trace_csv(trace, os);
  return os.str();
}

}  // namespace

TEST_CASE("estimate_cost: serial and parallel agree bit-for-bit") {
  const ClusterScenario s = desk_scenario(1);
  const SystemTuple& sys = s.systems[0];
  const NoiseModel noise = NoiseModel::sphere_uniform(sys.n());
  const RolloutConfig cfg = RolloutConfig::for_cost_bound(sys.gamma, 100.0);
  const RngStream rng(5, 0, 0, Draw::Test);
  const auto serial =
      estimate_cost(sys, s.initial_policies[0], 2000, noise, cfg, rng, ExecMode::Serial);
  const auto parallel =
      estimate_cost(sys, s.initial_policies[0], 2000, noise, cfg, rng, ExecMode::Parallel);
  CHECK(serial.value == parallel.value);
  CHECK(serial.diverged == parallel.diverged);
}

TEST_CASE("zo_gradient: serial and parallel agree bit-for-bit") {
  const ClusterScenario s = desk_scenario(2);
  const SystemTuple& sys = s.systems[1];
  const NoiseModel noise = NoiseModel::sphere_uniform(sys.n());
  const RolloutConfig cfg = RolloutConfig::for_cost_bound(sys.gamma, 100.0);
  const RngStream rng(6, 1, 2, Draw::GlobalGradient, 3);
  const ZoRequest req{1500, 0.1};
  const auto serial =
      zo_gradient(sys, s.initial_policies[3], req, noise, cfg, rng, ExecMode::Serial);
  const auto parallel =
      zo_gradient(sys, s.initial_policies[3], req, noise, cfg, rng, ExecMode::Parallel);
  CHECK(serial.value == parallel.value);
  CHECK(serial.max_abs_cost == parallel.max_abs_cost);
}

TEST_CASE("smoothed_cost: serial and parallel agree bit-for-bit") {
  const ClusterScenario s = desk_scenario(3);
  const SystemTuple& sys = s.systems[0];
  const RngStream rng(7, 0, 0, Draw::Probe);
  const double serial =
      smoothed_cost(sys, s.initial_policies[0], 0.02, 4000, rng, ExecMode::Serial);
  const double parallel =
      smoothed_cost(sys, s.initial_policies[0], 0.02, 4000, rng, ExecMode::Parallel);
  CHECK(serial == parallel);
}

TEST_CASE("run_pcpo: serial and parallel traces are identical") {
  const ClusterScenario s = desk_scenario(4);
  RunConfig cfg;
  cfg.Delta0 = 16.0;
  cfg.delta = 0.2;
  cfg.practical = {100, 2, 0.5, 0.002, 0.2, 0.3};
  cfg.budget = 4000;
  cfg.seed = 11;

  cfg.exec = ExecMode::Serial;
  const PcpoTrace serial = run_pcpo(s, cfg);
  cfg.exec = ExecMode::Parallel;
  const PcpoTrace parallel = run_pcpo(s, cfg);
  CHECK(serialize(serial) == serialize(parallel));
}

#ifdef _OPENMP
TEST_CASE("results are independent of the thread count") {
  const ClusterScenario s = desk_scenario(5);
  const SystemTuple& sys = s.systems[0];
  const NoiseModel noise = NoiseModel::sphere_uniform(sys.n());
  const RolloutConfig cfg = RolloutConfig::for_cost_bound(sys.gamma, 100.0);
  const RngStream rng(8, 0, 0, Draw::Test);
  const ZoRequest req{1024, 0.1};

  const int before = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto one =
      zo_gradient(sys, s.initial_policies[0], req, noise, cfg, rng, ExecMode::Parallel);
  omp_set_num_threads(4);
  const auto four =
      zo_gradient(sys, s.initial_policies[0], req, noise, cfg, rng, ExecMode::Parallel);
  omp_set_num_threads(before);
  CHECK(one.value == four.value);
}
#endif
