#include <json.hpp>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "pcpo/protocol.hpp"

namespace pcpo {

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& M) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

// JSON has no inf/nan literals; encode them as strings.
nlohmann::json finite_or_string(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

}  // namespace

void write_trace_jsonl(const PcpoTrace& trace, std::ostream& out) {
  for (const auto& e : trace.epochs) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["epoch"] = e.schedule.l;
    j["num_agents"] = trace.num_agents;
    j["seed"] = trace.seed;
    j["Delta_l"] = e.schedule.Delta_l;
    j["delta_l"] = e.schedule.delta_l;
    j["eta"] = e.schedule.eta;
    j["R_l"] = e.schedule.R_l;
    j["M_l"] = e.schedule.M_l;
    j["r_tilde"] = e.schedule.r_tilde;
    j["r_local"] = e.schedule.r_local;
    j["neighborhoods"] = e.neighborhoods;
    {
      nlohmann::json costs = nlohmann::json::array();
      for (double c : e.estimated_costs) costs.push_back(finite_or_string(c));
      j["estimated_costs"] = std::move(costs);
    }
    {
      nlohmann::json locals = nlohmann::json::array();
      nlohmann::json globals = nlohmann::json::array();
      for (const auto& K : e.local_policies) locals.push_back(matrix_json(K));
      for (const auto& K : e.global_policies) globals.push_back(matrix_json(K));
      j["local_policies"] = std::move(locals);
      j["global_policies"] = std::move(globals);
    }
    if (!e.exact_gaps.empty()) {
      nlohmann::json gaps = nlohmann::json::array();
      for (double g : e.exact_gaps) gaps.push_back(finite_or_string(g));
      j["exact_gaps"] = std::move(gaps);
    }
    j["rollouts"] = e.rollouts;
    j["comm_rounds"] = e.comm_rounds;
    j["reinitialized"] = e.reinitialized;
    j["divergence_events"] = e.divergence_events;
    {
      nlohmann::json frozen = nlohmann::json::array();
      for (unsigned char f : e.frozen) frozen.push_back(f != 0);
      j["frozen"] = std::move(frozen);
    }
    out << j.dump() << "\n";
  }
}

void write_trace_csv(const PcpoTrace& trace, std::ostream& out) {
  out << "epoch,agent,cluster,neighborhood_size,est_cost,exact_gap,rollouts,comm_rounds,"
         "reinit_flag\n";
  for (const auto& e : trace.epochs) {
    for (int i = 0; i < trace.num_agents; ++i) {
      const double gap = e.exact_gaps.empty() ? std::nan("") : e.exact_gaps[i];
      out << e.schedule.l << ',' << i << ',' << trace.assignment[i] << ','
          << e.neighborhoods[i].size() << ',' << format_double(e.estimated_costs[i]) << ','
          << format_double(gap) << ',' << e.rollouts[i] << ',' << e.comm_rounds << ','
          << (e.reinitialized ? 1 : 0) << "\n";
    }
  }
}

}  // namespace pcpo
