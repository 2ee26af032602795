// Command-line front end: scenario generation, experiment runs, metric
// summaries and constant probes, with CSV/JSON outputs.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pcpo/errors.hpp"
#include "pcpo/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_file_atomic(const fs::path& path, const std::string& contents) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw pcpo::ConfigError("cannot open for writing: " + tmp.string());
    out << contents;
  }
  fs::rename(tmp, path);
}

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw pcpo::ConfigError("cannot read: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw pcpo::ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

pcpo::ExecMode parse_exec(const std::string& s) {
  if (s == "serial") return pcpo::ExecMode::Serial;
  if (s == "parallel") return pcpo::ExecMode::Parallel;
  throw pcpo::ConfigError("exec must be serial or parallel");
}

struct RunSpec {
  pcpo::RunConfig config;
  std::vector<std::uint64_t> seeds{1};
  std::vector<std::string> algos{pcpo::kAlgoPcpo};
};

// Config file keys mirror the RunConfig fields; command-line flags override.
RunSpec parse_run_config(const json& j) {
  RunSpec spec;
  pcpo::RunConfig& cfg = spec.config;
  try {
    if (j.contains("mode")) {
      const std::string mode = j.at("mode").get<std::string>();
      if (mode == "theory") {
        cfg.mode = pcpo::ScheduleMode::Theory;
      } else if (mode == "practical") {
        cfg.mode = pcpo::ScheduleMode::Practical;
      } else {
        throw pcpo::ConfigError("mode must be theory or practical");
      }
    }
    if (j.contains("delta0")) cfg.Delta0 = j.at("delta0").get<double>();
    if (j.contains("delta")) cfg.delta = j.at("delta").get<double>();
    if (j.contains("budget")) cfg.budget = j.at("budget").get<long>();
    if (j.contains("truncation_tol")) cfg.truncation_tol = j.at("truncation_tol").get<double>();
    if (j.contains("cost_upper_bound"))
      cfg.cost_upper_bound = j.at("cost_upper_bound").get<double>();
    if (j.contains("blowup_threshold"))
      cfg.blowup_threshold = j.at("blowup_threshold").get<double>();
    if (j.contains("exec")) cfg.exec = parse_exec(j.at("exec").get<std::string>());
    if (j.contains("noise")) {
      const auto& jn = j.at("noise");
      const std::string kind = jn.value("kind", "sphere");
      if (kind == "sphere") {
        cfg.noise_kind = pcpo::NoiseKind::SphereUniform;
      } else if (kind == "truncated_gaussian") {
        cfg.noise_kind = pcpo::NoiseKind::TruncatedGaussian;
        cfg.noise_raw_bound = jn.value("raw_bound", 0.0);
      } else {
        throw pcpo::ConfigError("noise.kind must be sphere or truncated_gaussian");
      }
    }
    if (j.contains("practical")) {
      const auto& jp = j.at("practical");
      cfg.practical.M1 = jp.at("M1").get<long>();
      cfg.practical.R1 = jp.at("R1").get<int>();
      cfg.practical.rho_R = jp.value("rho_R", 0.0);
      cfg.practical.eta = jp.at("eta").get<double>();
      cfg.practical.r1 = jp.at("r1").get<double>();
      cfg.practical.r_max = jp.value("r_max", cfg.practical.r1);
    }
    if (j.contains("theory")) {
      const auto& jt = j.at("theory");
      if (jt.contains("mu")) {
        cfg.theory = pcpo::TheoryConstants::derive(
            jt.at("mu").get<double>(), jt.at("phi").get<double>(), jt.at("lambda").get<double>(),
            jt.at("rho").get<double>(), jt.at("G_inf").get<double>(), cfg.Delta0,
            jt.value("delta0_tilde", cfg.Delta0), jt.at("dim").get<int>());
      } else {
        cfg.theory.c_p1 = jt.at("c_p1").get<double>();
        cfg.theory.c_p2 = jt.at("c_p2").get<double>();
        cfg.theory.c_p3 = jt.at("c_p3").get<double>();
        cfg.theory.c_p4 = jt.at("c_p4").get<double>();
        cfg.theory.c_p5 = jt.at("c_p5").get<double>();
        cfg.theory.c_p6 = jt.at("c_p6").get<double>();
        cfg.theory.Delta0_tilde = jt.value("delta0_tilde", cfg.Delta0);
      }
    }
    if (j.contains("seeds")) spec.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("algos")) spec.algos = j.at("algos").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw pcpo::ConfigError(std::string("run config malformed: ") + e.what());
  }
  return spec;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"clustered multi-agent LQR policy optimization harness"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "generate a cluster scenario JSON");
  std::string gen_out;
  std::uint64_t gen_seed = 1;
  pcpo::GeneratorParams gp;
  gp.num_agents = 12;
  gp.num_clusters = 3;
  gp.heterogeneity = 4.0;
  std::string gen_sizes, gen_mode = "qscale";
  gen->add_option("--out", gen_out, "output scenario path")->required();
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--agents", gp.num_agents, "number of agents");
  gen->add_option("--clusters", gp.num_clusters, "number of clusters");
  gen->add_option("--sizes", gen_sizes, "comma-separated cluster sizes");
  gen->add_option("--state-dim", gp.state_dim, "state dimension n");
  gen->add_option("--input-dim", gp.input_dim, "input dimension m");
  gen->add_option("--gamma", gp.gamma, "discount factor");
  gen->add_option("--het", gp.heterogeneity, "required separation gap");
  gen->add_option("--het-mode", gen_mode, "qscale | aperturb");
  gen->add_option("--policy-spread", gp.initial_policy_spread,
                  "model perturbation behind the initial gains");

  auto* run = app.add_subcommand("run", "run algorithms on a scenario");
  std::string run_scenario, run_config, run_out, run_algos, run_seeds, run_mode, run_exec;
  long run_budget = 0;
  run->add_option("--scenario", run_scenario, "scenario JSON path")->required();
  run->add_option("--config", run_config, "run config JSON path");
  run->add_option("--out", run_out, "output directory")->required();
  run->add_option("--algo", run_algos, "comma-separated algorithms");
  run->add_option("--seed", run_seeds, "comma-separated seeds");
  run->add_option("--budget", run_budget, "per-agent rollout budget");
  run->add_option("--mode", run_mode, "theory | practical");
  run->add_option("--exec", run_exec, "serial | parallel");

  auto* sum = app.add_subcommand("summarize", "summarize metrics CSV files");
  std::vector<std::string> sum_in;
  std::string sum_out;
  sum->add_option("--in", sum_in, "metrics CSV paths")->required()->expected(-1);
  sum->add_option("--out", sum_out, "output directory (summary.csv, summary.txt)");

  auto* probe = app.add_subcommand("probe-constants", "empirical problem-constant probes");
  std::string probe_scenario, probe_out;
  std::uint64_t probe_seed = 1;
  double probe_delta0 = 1.0;
  int probe_trials = 200;
  long probe_minibatch = 200;
  probe->add_option("--scenario", probe_scenario, "scenario JSON path")->required();
  probe->add_option("--out", probe_out, "output directory")->required();
  probe->add_option("--seed", probe_seed, "probe seed");
  probe->add_option("--delta0", probe_delta0, "initial separation estimate");
  probe->add_option("--trials", probe_trials, "concentration probe trials");
  probe->add_option("--minibatch", probe_minibatch, "concentration probe minibatch");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    if (!gen_sizes.empty()) {
      gp.cluster_sizes.clear();
      for (const auto& s : split_csv_list(gen_sizes)) gp.cluster_sizes.push_back(std::stoi(s));
    }
    if (gen_mode == "qscale") {
      gp.mode = pcpo::HeterogeneityMode::QScale;
    } else if (gen_mode == "aperturb") {
      gp.mode = pcpo::HeterogeneityMode::APerturb;
    } else {
      throw pcpo::ConfigError("het-mode must be qscale or aperturb");
    }
    const pcpo::ClusterScenario scenario = pcpo::generate_scenario(gp, gen_seed);
    write_file_atomic(gen_out, scenario.to_json().dump(2) + "\n");
    std::cout << "wrote " << gen_out << " (separation gap "
              << pcpo::format_double(pcpo::scenario_gap(scenario)) << ")\n";
    return 0;
  }

  if (run->parsed()) {
    const pcpo::ClusterScenario scenario =
        pcpo::ClusterScenario::from_json(load_json_file(run_scenario));
    RunSpec spec = run_config.empty() ? RunSpec{} : parse_run_config(load_json_file(run_config));
    if (!run_algos.empty()) spec.algos = split_csv_list(run_algos);
    if (!run_seeds.empty()) {
      spec.seeds.clear();
      for (const auto& s : split_csv_list(run_seeds)) spec.seeds.push_back(std::stoull(s));
    }
    if (run_budget > 0) spec.config.budget = run_budget;
    if (!run_mode.empty()) {
      spec.config.mode =
          run_mode == "theory" ? pcpo::ScheduleMode::Theory : pcpo::ScheduleMode::Practical;
    }
    if (!run_exec.empty()) spec.config.exec = parse_exec(run_exec);

    fs::create_directories(run_out);
    std::vector<pcpo::MetricsRow> all_rows;
    for (const auto& algo : spec.algos) {
      for (std::uint64_t seed : spec.seeds) {
        pcpo::PcpoTrace trace;
        const auto rows = pcpo::run_algorithm(algo, scenario, spec.config, seed, &trace);
        all_rows.insert(all_rows.end(), rows.begin(), rows.end());
        const std::string stem = "trace_" + algo + "_" + std::to_string(seed);
        {
          std::ostringstream os;
          pcpo::write_trace_jsonl(trace, os);
          write_file_atomic(fs::path(run_out) / (stem + ".jsonl"), os.str());
        }
        {
          std::ostringstream os;
          pcpo::write_trace_csv(trace, os);
          write_file_atomic(fs::path(run_out) / (stem + ".csv"), os.str());
        }
        std::cout << algo << " seed " << seed << ": " << trace.last_epoch() << " epochs, "
                  << pcpo::comm_report(trace).rounds << " comm rounds\n";
      }
    }
    std::ostringstream os;
    pcpo::write_metrics_csv(all_rows, os);
    write_file_atomic(fs::path(run_out) / "metrics.csv", os.str());
    std::cout << "wrote " << (fs::path(run_out) / "metrics.csv").string() << "\n";
    return 0;
  }

  if (sum->parsed()) {
    std::vector<pcpo::MetricsRow> rows;
    for (const auto& path : sum_in) {
      std::ifstream in(path);
      if (!in) throw pcpo::ConfigError("cannot read: " + path);
      const auto part = pcpo::read_metrics_csv(in);
      rows.insert(rows.end(), part.begin(), part.end());
    }
    const pcpo::Summary summary = pcpo::summarize(rows);
    std::ostringstream text;
    pcpo::write_summary_text(summary, text);
    std::cout << text.str();
    if (!sum_out.empty()) {
      fs::create_directories(sum_out);
      std::ostringstream csv;
      pcpo::write_summary_csv(summary, csv);
      write_file_atomic(fs::path(sum_out) / "summary.csv", csv.str());
      write_file_atomic(fs::path(sum_out) / "summary.txt", text.str());
      std::cout << "wrote " << (fs::path(sum_out) / "summary.csv").string() << "\n";
    }
    return 0;
  }

  if (probe->parsed()) {
    const pcpo::ClusterScenario scenario =
        pcpo::ClusterScenario::from_json(load_json_file(probe_scenario));
    fs::create_directories(probe_out);

    std::ostringstream constants_csv;
    constants_csv << "cluster,G_inf,lambda,phi,mu,rho\n";
    for (int c = 0; c < scenario.num_clusters(); ++c) {
      const pcpo::SystemTuple& sys = scenario.systems[c];
      const double opt = pcpo::solve_dare(sys).cost;
      double init_gap = 0.0;
      for (int i = 0; i < scenario.num_agents(); ++i) {
        if (scenario.assignment[i] == c) {
          init_gap =
              std::max(init_gap, pcpo::exact_cost(sys, scenario.initial_policies[i]) - opt);
        }
      }
      pcpo::ProbeParams pp;
      pp.Delta0_tilde = std::max(init_gap, probe_delta0);
      const auto noise = pcpo::NoiseModel::sphere_uniform(sys.n());
      const auto rcfg =
          pcpo::RolloutConfig::for_cost_bound(sys.gamma, opt + 10.0 * pp.Delta0_tilde);
      const pcpo::ProbedConstants pc = pcpo::probe_constants(sys, pp, noise, rcfg, probe_seed);
      constants_csv << c << ',' << pcpo::format_double(pc.G_inf) << ','
                    << pcpo::format_double(pc.lambda) << ',' << pcpo::format_double(pc.phi) << ','
                    << pcpo::format_double(pc.mu) << ',' << pcpo::format_double(pc.rho) << "\n";

      if (c == 0) {
        // Concentration diagnostic on the first cluster: per-trial deviation
        // of the gradient estimate against its analytical bound.
        const pcpo::Policy at = pcpo::solve_dare(sys).gain;
        const double radius = std::min(0.5 * pc.rho, 0.1);
        const auto report = pcpo::concentration_probe(
            sys, at, probe_minibatch, radius, probe_trials, 0.1, pc, 1, noise, rcfg, probe_seed);
        std::ostringstream conc;
        conc << "trial,deviation,bound\n";
        for (std::size_t t = 0; t < report.deviations.size(); ++t) {
          conc << t << ',' << pcpo::format_double(report.deviations[t]) << ','
               << pcpo::format_double(report.bound) << "\n";
        }
        write_file_atomic(fs::path(probe_out) / "concentration.csv", conc.str());
        std::cout << "concentration probe: exceed rate "
                  << pcpo::format_double(report.exceed_rate) << " at bound "
                  << pcpo::format_double(report.bound) << "\n";
      }
    }
    write_file_atomic(fs::path(probe_out) / "constants.csv", constants_csv.str());
    std::cout << "wrote " << (fs::path(probe_out) / "constants.csv").string() << "\n";
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const pcpo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const pcpo::BudgetError& e) {
    std::cerr << "budget error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
