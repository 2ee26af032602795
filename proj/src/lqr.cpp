#include "pcpo/lqr.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>
#include <set>
#include <sstream>

#include "pcpo/errors.hpp"

namespace pcpo {

namespace {

constexpr double kStabilityMargin = 1e-10;
constexpr double kSymmetryTol = 1e-12;
constexpr double kRankTol = 1e-8;
constexpr double kFixedPointTol = 1e-12;
constexpr int kLyapunovBudget = 200;
constexpr int kRiccatiBudget = 200000;

void require_finite(const Eigen::MatrixXd& M, const char* name) {
  if (!M.allFinite()) {
    throw ConfigError(std::string(name) + " contains non-finite entries");
  }
}

void require_spd(const Eigen::MatrixXd& M, const char* name) {
  if (M.rows() != M.cols()) throw ConfigError(std::string(name) + " must be square");
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol) {
    throw ConfigError(std::string(name) + " must be symmetric within 1e-12");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  if (es.eigenvalues().minCoeff() <= 0.0) {
    throw ConfigError(std::string(name) + " must be positive definite");
  }
}

bool is_controllable(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  const int n = static_cast<int>(A.rows());
  const int m = static_cast<int>(B.cols());
  Eigen::MatrixXd ctrb(n, n * m);
  Eigen::MatrixXd power = B;
  for (int k = 0; k < n; ++k) {
    ctrb.middleCols(k * m, m) = power;
    power = A * power;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(ctrb);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return false;
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > kRankTol * sv(0)) ++rank;
  }
  return rank == n;
}

}  // namespace

SystemTuple SystemTuple::validated(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd Q,
                                   Eigen::MatrixXd R, double gamma) {
  if (A.rows() != A.cols()) throw ConfigError("A must be square");
  const Eigen::Index n = A.rows();
  if (B.rows() != n || B.cols() < 1) throw ConfigError("B must be n x m with m >= 1");
  if (Q.rows() != n || Q.cols() != n) throw ConfigError("Q must match the state dimension");
  if (R.rows() != B.cols() || R.cols() != B.cols()) {
    throw ConfigError("R must match the input dimension");
  }
  require_finite(A, "A");
  require_finite(B, "B");
  require_finite(Q, "Q");
  require_finite(R, "R");
  require_spd(Q, "Q");
  require_spd(R, "R");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie strictly inside (0,1)");
  if (!is_controllable(A, B)) throw ConfigError("(A, B) must be controllable");
  return SystemTuple{std::move(A), std::move(B), std::move(Q), std::move(R), gamma};
}

double spectral_radius(const Eigen::MatrixXd& M) {
  if (M.rows() != M.cols() || M.rows() == 0) {
    throw ConfigError("spectral_radius: matrix must be square and non-empty");
  }
  require_finite(M, "spectral_radius input");
  Eigen::EigenSolver<Eigen::MatrixXd> es(M, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) {
    throw ConvergenceError("spectral_radius: eigendecomposition failed");
  }
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

bool is_stabilizing(const Policy& policy, const SystemTuple& sys) {
  if (policy.K.rows() != sys.m() || policy.K.cols() != sys.n()) {
    throw ConfigError("is_stabilizing: policy dimensions do not match the system");
  }
  if (!policy.K.allFinite()) return false;
  return spectral_radius(sys.A - sys.B * policy.K) < 1.0 - kStabilityMargin;
}

double exact_cost(const SystemTuple& sys, const Policy& policy) {
  if (!is_stabilizing(policy, sys)) {
    throw StabilityError("exact_cost: policy is not stabilizing, discounted cost diverges");
  }
  const Eigen::MatrixXd M = sys.A - sys.B * policy.K;

  // X = sum_{s>=0} G^s (G^T)^s with G = sqrt(gamma) M solves X = I + G X G^T.
  // Doubling: X_j covers 2^j terms, G_j = G^(2^j).
  Eigen::MatrixXd X = Eigen::MatrixXd::Identity(sys.n(), sys.n());
  Eigen::MatrixXd G = std::sqrt(sys.gamma) * M;
  bool converged = false;
  for (int iter = 0; iter < kLyapunovBudget; ++iter) {
    const Eigen::MatrixXd next = X + G * X * G.transpose();
    const double delta = (next - X).norm();
    X = next;
    G = (G * G).eval();
    if (delta <= kFixedPointTol * X.norm()) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw ConvergenceError("exact_cost: discounted state-covariance iteration did not converge");
  }
  const Eigen::MatrixXd W = sys.Q + policy.K.transpose() * sys.R * policy.K;
  return sys.gamma / (1.0 - sys.gamma) * (W * X).trace();
}

Eigen::MatrixXd cost_gradient_fd(const SystemTuple& sys, const Policy& policy, double step) {
  Eigen::MatrixXd grad(policy.K.rows(), policy.K.cols());
  Policy probe = policy;
  for (Eigen::Index i = 0; i < policy.K.rows(); ++i) {
    for (Eigen::Index j = 0; j < policy.K.cols(); ++j) {
      probe.K(i, j) = policy.K(i, j) + step;
      const double up = exact_cost(sys, probe);
      probe.K(i, j) = policy.K(i, j) - step;
      const double down = exact_cost(sys, probe);
      probe.K(i, j) = policy.K(i, j);
      grad(i, j) = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

DareSolution solve_dare(const SystemTuple& sys) {
  const double sg = std::sqrt(sys.gamma);
  const Eigen::MatrixXd At = sg * sys.A;
  const Eigen::MatrixXd Bt = sg * sys.B;

  Eigen::MatrixXd P = sys.Q;
  bool converged = false;
  for (int iter = 0; iter < kRiccatiBudget; ++iter) {
    const Eigen::MatrixXd BtP = Bt.transpose() * P;
    const Eigen::MatrixXd gain_lhs = sys.R + BtP * Bt;
    const Eigen::MatrixXd K = gain_lhs.ldlt().solve(BtP * At);
    Eigen::MatrixXd next = sys.Q + At.transpose() * P * At - (BtP * At).transpose() * K;
    next = 0.5 * (next + next.transpose()).eval();
    const double delta = (next - P).norm();
    P = next;
    if (delta <= kFixedPointTol * P.norm()) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw ConvergenceError("solve_dare: value iteration exhausted its budget");
  }
  const Eigen::MatrixXd BtP = Bt.transpose() * P;
  DareSolution sol;
  sol.gain.K = (sys.R + BtP * Bt).ldlt().solve(BtP * At);
  sol.cost = exact_cost(sys, sol.gain);

  if (cost_gradient_fd(sys, sol.gain).norm() >= 1e-6) {
    throw ConvergenceError("solve_dare: stationarity check failed at the computed gain");
  }
  return sol;
}

double separation_gap(std::span<const SystemTuple> systems) {
  if (systems.size() < 2) {
    throw ConfigError("separation_gap: need at least two systems");
  }
  std::vector<double> costs;
  costs.reserve(systems.size());
  for (const auto& sys : systems) costs.push_back(solve_dare(sys).cost);
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < costs.size(); ++a) {
    for (std::size_t b = a + 1; b < costs.size(); ++b) {
      gap = std::min(gap, std::abs(costs[a] - costs[b]));
    }
  }
  return gap;
}

std::vector<std::vector<int>> ClusterScenario::clusters() const {
  std::vector<std::vector<int>> result(systems.size());
  for (int agent = 0; agent < num_agents(); ++agent) {
    result[assignment[agent]].push_back(agent);
  }
  return result;
}

void ClusterScenario::validate() const {
  if (systems.empty()) throw ConfigError("scenario: needs at least one system");
  if (assignment.empty()) throw ConfigError("scenario: needs at least one agent");
  if (initial_policies.size() != assignment.size()) {
    throw ConfigError("scenario: one initial policy per agent required");
  }
  const int n0 = systems[0].n();
  const int m0 = systems[0].m();
  for (const auto& sys : systems) {
    if (sys.n() != n0 || sys.m() != m0) {
      throw ConfigError("scenario: all systems must share state and input dimensions");
    }
  }
  std::set<int> seen;
  for (int agent = 0; agent < num_agents(); ++agent) {
    const int c = assignment[agent];
    if (c < 0 || c >= num_clusters()) {
      throw ConfigError("scenario: agent assigned to an unknown cluster");
    }
    seen.insert(c);
    if (!is_stabilizing(initial_policies[agent], systems[c])) {
      throw ConfigError("scenario: initial policy of agent " + std::to_string(agent) +
                        " is not stabilizing");
    }
  }
  if (static_cast<int>(seen.size()) != num_clusters()) {
    throw ConfigError("scenario: every cluster must be non-empty");
  }
  if (num_clusters() >= 2 && !(separation_gap(systems) > 0.0)) {
    throw ConfigError("scenario: separation gap must be strictly positive");
  }
}

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& M) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw ConfigError("matrix JSON must be a non-empty array");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd M(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j.at(i);
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError("matrix JSON rows have inconsistent lengths");
    }
    for (Eigen::Index c = 0; c < cols; ++c) M(i, c) = row.at(c).get<double>();
  }
  return M;
}

}  // namespace

nlohmann::json ClusterScenario::to_json() const {
  nlohmann::json j;
  j["systems"] = nlohmann::json::array();
  for (const auto& sys : systems) {
    j["systems"].push_back({{"A", matrix_to_json(sys.A)},
                            {"B", matrix_to_json(sys.B)},
                            {"Q", matrix_to_json(sys.Q)},
                            {"R", matrix_to_json(sys.R)},
                            {"gamma", sys.gamma}});
  }
  j["assignment"] = assignment;
  j["initial_policies"] = nlohmann::json::array();
  for (const auto& p : initial_policies) j["initial_policies"].push_back(matrix_to_json(p.K));
  return j;
}

ClusterScenario ClusterScenario::from_json(const nlohmann::json& j) {
  ClusterScenario scenario;
  try {
    for (const auto& js : j.at("systems")) {
      scenario.systems.push_back(SystemTuple::validated(
          matrix_from_json(js.at("A")), matrix_from_json(js.at("B")),
          matrix_from_json(js.at("Q")), matrix_from_json(js.at("R")),
          js.at("gamma").get<double>()));
    }
    scenario.assignment = j.at("assignment").get<std::vector<int>>();
    for (const auto& jp : j.at("initial_policies")) {
      scenario.initial_policies.push_back(Policy{matrix_from_json(jp)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario JSON malformed: ") + e.what());
  }
  scenario.validate();
  return scenario;
}

}  // namespace pcpo
