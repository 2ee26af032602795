#pragma once

#include <cstdint>
#include <optional>

namespace pcpo {

enum class ScheduleMode { Theory, Practical };

// Problem-dependent constants driving the theory-mode schedules. Either
// derived from the primitive constants (mu, phi, lambda, rho, G_inf) via the
// closed-form ledger, or supplied directly.
struct TheoryConstants {
  double mu = 0.0;
  double phi = 0.0;
  double lambda = 0.0;
  double rho = 0.0;
  double G_inf = 0.0;
  double Delta0_tilde = 0.0;  // max(initial suboptimality gap, Delta0)

  double c_p1 = 0.0;   // step size
  double c_p2 = 0.0;   // iteration-count factor
  double c_p3 = 0.0;   // iteration-count log argument factor
  double c_p4 = 0.0;   // minibatch factor
  double c_p5 = 0.0;   // smoothing-radius factor
  double c_p6 = 0.0;   // smoothing-radius cap
  double c_p8 = 0.0;
  double c_p9 = 0.0;
  double c_p10 = 0.0;

  bool derived_from_primitives = false;

  // Fills c_p1..c_p10 from the primitives:
  //   c_p8  = G_inf + lambda rho / D + phi rho^2 / D
  //   c_p9  = 12 c_p8 / mu * max(sqrt(phi), 1/rho)^2
  //   c_p10 = max(Delta0^2, 256 c_p9^2 D^2, c_p8^2 D^2 Delta0^2, 36 G_inf^2)
  //   c_p1  = min(8/mu, 1/(4 phi), rho / (lambda + 2 max(sqrt(phi), 1/rho)))
  //   c_p2  = 4 / (c_p1 mu)
  //   c_p3  = Delta0_tilde * max(16, 10 c_p10)
  //   c_p4  = c_p10,  c_p5 = c_p8 D / phi,  c_p6 = rho
  static TheoryConstants derive(double mu, double phi, double lambda, double rho, double G_inf,
                                double Delta0, double Delta0_tilde, int D);

  // Positivity, plus consistency of the derived entries when applicable.
  void validate(double Delta0, int D) const;

  // Runtime-dependent tail constants.
  double c_p11(int N, double delta, double Delta0, int D) const;
  double c_p12(int N) const;
  double c_p13(int N, long T, double delta, double Delta0, int D) const;
  double c_p7(int N, long T, double delta, double Delta0, int D) const;
};

// Practical-mode knobs. The structural laws are preserved: the gap estimate
// halves per epoch, minibatches grow geometrically (factor 4), iteration
// counts grow slowly, and smoothing radii shrink like M^(-1/4).
struct PracticalParams {
  long M1 = 0;         // epoch-1 minibatch
  int R1 = 0;          // iteration-count base
  double rho_R = 0.0;  // R_l = R1 + ceil(rho_R * l)
  double eta = 0.0;    // fixed step size
  double r1 = 0.0;     // epoch-1 smoothing radius
  double r_max = 0.0;  // radius cap

  void validate() const;
};

struct ScheduleConfig {
  ScheduleMode mode = ScheduleMode::Practical;
  double Delta0 = 0.0;  // initial separation estimate
  double delta = 0.0;   // overall failure probability
  int num_agents = 0;   // N
  int dim = 0;          // D = m * n
  TheoryConstants theory;
  PracticalParams practical;

  void validate() const;
};

// Per-epoch hyperparameters.
struct EpochSchedule {
  int l = 0;
  double Delta_l = 0.0;
  double delta_l = 0.0;
  double eta = 0.0;
  int R_l = 0;
  long M_l = 0;
  double r_tilde = 0.0;
  double r_local = 0.0;
  double r_cap = 0.0;

  // Collaborative-phase radius; shrinks with the previous neighborhood size.
  double r_global(std::size_t neighborhood_size) const;

  // Rollouts one epoch consumes per agent: local optimization (R_l M_l),
  // cost estimation (M_l) and collaborative rounds (R_l M_l).
  long rollouts_per_agent() const { return 2 * static_cast<long>(R_l) * M_l + M_l; }
};

// Schedule for epoch l >= 1. `previous` must be the epoch l-1 schedule for
// l > 1 and null for l = 1; the gap estimate halves from its predecessor.
EpochSchedule make_schedule(int l, const EpochSchedule* previous, const ScheduleConfig& cfg);

}  // namespace pcpo
