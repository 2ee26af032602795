#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <span>
#include <vector>

namespace pcpo {

// One cluster's environment: dynamics (A, B), quadratic cost (Q, R) and the
// discount factor. Construction validates symmetry/positive-definiteness of
// the cost matrices, controllability of (A, B), and gamma in (0, 1).
struct SystemTuple {
  Eigen::MatrixXd A;  // n x n
  Eigen::MatrixXd B;  // n x m
  Eigen::MatrixXd Q;  // n x n, symmetric positive definite
  Eigen::MatrixXd R;  // m x m, symmetric positive definite
  double gamma = 0.0;

  int n() const { return static_cast<int>(A.rows()); }
  int m() const { return static_cast<int>(B.cols()); }

  static SystemTuple validated(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd Q,
                               Eigen::MatrixXd R, double gamma);
};

// A linear state-feedback gain; the control law is u = -K x.
struct Policy {
  Eigen::MatrixXd K;  // m x n
};

// Largest absolute eigenvalue of a square matrix (dense eigendecomposition,
// which handles complex-conjugate dominant pairs).
double spectral_radius(const Eigen::MatrixXd& M);

// True iff rho(A - B K) < 1 with a small safety margin, so that downstream
// fixed-point solvers never stall on numerically marginal policies.
bool is_stabilizing(const Policy& policy, const SystemTuple& sys);

// Closed-form discounted cost of a stabilizing policy under unit-covariance
// process noise started from the origin:
//   with M = A - B K and X solving X = I + gamma * M X M^T,
//   cost = gamma / (1 - gamma) * trace((Q + K^T R K) X).
// The fixed point is iterated (with doubling) to relative tolerance 1e-12.
// Throws StabilityError for non-stabilizing K, ConvergenceError if the
// iteration budget is exhausted.
double exact_cost(const SystemTuple& sys, const Policy& policy);

struct DareSolution {
  Policy gain;
  double cost = 0.0;
};

// Optimal discounted-LQR gain and its exact cost. The discounted problem is
// reduced to an undiscounted one through (sqrt(gamma) A, sqrt(gamma) B) and
// solved by Riccati value iteration to relative tolerance 1e-12. The result
// is checked: the central finite-difference gradient of exact_cost at the
// returned gain must have Frobenius norm below 1e-6.
DareSolution solve_dare(const SystemTuple& sys);

// Minimum pairwise difference of optimal costs across a list of systems.
// Requires at least two systems.
double separation_gap(std::span<const SystemTuple> systems);

// Central finite-difference gradient of exact_cost with respect to K.
Eigen::MatrixXd cost_gradient_fd(const SystemTuple& sys, const Policy& policy,
                                 double step = 1e-6);

// A full multi-agent environment: per-cluster systems, the agent-to-cluster
// assignment and one stabilizing initial policy per agent.
struct ClusterScenario {
  std::vector<SystemTuple> systems;
  std::vector<int> assignment;            // agent index -> cluster index
  std::vector<Policy> initial_policies;   // agent index -> initial gain

  int num_agents() const { return static_cast<int>(assignment.size()); }
  int num_clusters() const { return static_cast<int>(systems.size()); }
  const SystemTuple& system_of(int agent) const { return systems[assignment[agent]]; }

  // Agents of each cluster, ascending. Index: cluster.
  std::vector<std::vector<int>> clusters() const;

  // Throws ConfigError if any invariant fails: assignments in range, clusters
  // non-empty, uniform policy dimensions, initial policies stabilizing, and
  // (for two or more clusters) a strictly positive separation gap.
  void validate() const;

  nlohmann::json to_json() const;
  static ClusterScenario from_json(const nlohmann::json& j);
};

}  // namespace pcpo
