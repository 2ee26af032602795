// Wall-clock comparison of the OpenMP kernels against their serial reference:
// minibatch cost estimation, gradient estimation, and one full protocol run.

#include <chrono>
#include <cstdio>

#include "pcpo/harness.hpp"

using Clock = std::chrono::high_resolution_clock;

namespace {

template <typename Fn>
double time_seconds(Fn&& fn) {
  const auto t0 = Clock::now();
  fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double>(t1 - t0).count();
}

void report(const char* name, double serial, double parallel) {
  std::printf("%-24s serial %8.3fs   parallel %8.3fs   speedup %.2fx\n", name, serial, parallel,
              serial / parallel);
}

}  // namespace

int main() {
  pcpo::GeneratorParams gp;
  gp.num_agents = 8;
  gp.num_clusters = 2;
  gp.state_dim = 2;
  gp.input_dim = 1;
  gp.heterogeneity = 4.0;
  const pcpo::ClusterScenario scenario = pcpo::generate_scenario(gp, 7);
  const pcpo::SystemTuple& sys = scenario.systems[0];
  const pcpo::Policy K = scenario.initial_policies[0];
  const auto noise = pcpo::NoiseModel::sphere_uniform(sys.n());
  const auto cfg = pcpo::RolloutConfig::for_cost_bound(sys.gamma, 100.0);
  const pcpo::RngStream stream(123, 0, 0, pcpo::Draw::Test);

  const long M = 20000;
  double c_serial = 0, c_parallel = 0;
  report("estimate_cost",
         time_seconds([&] {
           c_serial = pcpo::estimate_cost(sys, K, M, noise, cfg, stream, pcpo::ExecMode::Serial)
                          .value;
         }),
         time_seconds([&] {
           c_parallel = pcpo::estimate_cost(sys, K, M, noise, cfg, stream, pcpo::ExecMode::Parallel)
                            .value;
         }));
  if (c_serial != c_parallel) {
    std::printf("MISMATCH: serial/parallel cost estimates differ\n");
    return 1;
  }

  const pcpo::ZoRequest req{M, 0.1};
  Eigen::MatrixXd g_serial, g_parallel;
  report("zo_gradient",
         time_seconds([&] {
           g_serial =
               pcpo::zo_gradient(sys, K, req, noise, cfg, stream, pcpo::ExecMode::Serial).value;
         }),
         time_seconds([&] {
           g_parallel =
               pcpo::zo_gradient(sys, K, req, noise, cfg, stream, pcpo::ExecMode::Parallel).value;
         }));
  if (g_serial != g_parallel) {
    std::printf("MISMATCH: serial/parallel gradient estimates differ\n");
    return 1;
  }

  pcpo::RunConfig run;
  run.Delta0 = 8.0;
  run.delta = 0.2;
  run.practical = {60, 2, 0.5, 0.04, 0.3, 0.5};
  run.budget = 4000;
  run.seed = 5;
  pcpo::PcpoTrace t_serial, t_parallel;
  report("run_pcpo",
         time_seconds([&] {
           pcpo::RunConfig c = run;
           c.exec = pcpo::ExecMode::Serial;
           t_serial = pcpo::run_pcpo(scenario, c);
         }),
         time_seconds([&] {
           pcpo::RunConfig c = run;
           c.exec = pcpo::ExecMode::Parallel;
           t_parallel = pcpo::run_pcpo(scenario, c);
         }));
  for (std::size_t e = 0; e < t_serial.epochs.size(); ++e) {
    for (int i = 0; i < t_serial.num_agents; ++i) {
      if (t_serial.epochs[e].global_policies[i] != t_parallel.epochs[e].global_policies[i]) {
        std::printf("MISMATCH: serial/parallel traces differ\n");
        return 1;
      }
    }
  }
  std::printf("serial and parallel kernels agree bit-for-bit\n");
  return 0;
}
