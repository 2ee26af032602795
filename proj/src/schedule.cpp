#include "pcpo/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pcpo/errors.hpp"

namespace pcpo {

namespace {

double max_sqrtphi_invrho(double phi, double rho) {
  return std::max(std::sqrt(phi), 1.0 / rho);
}

}  // namespace

TheoryConstants TheoryConstants::derive(double mu, double phi, double lambda, double rho,
                                        double G_inf, double Delta0, double Delta0_tilde, int D) {
  if (!(mu > 0.0 && phi > 0.0 && lambda > 0.0 && rho > 0.0 && G_inf > 0.0)) {
    throw ConfigError("TheoryConstants: primitives must be strictly positive");
  }
  if (!(Delta0 > 0.0) || !(Delta0_tilde >= Delta0) || D < 1) {
    throw ConfigError("TheoryConstants: need Delta0 > 0, Delta0_tilde >= Delta0, D >= 1");
  }
  TheoryConstants c;
  c.mu = mu;
  c.phi = phi;
  c.lambda = lambda;
  c.rho = rho;
  c.G_inf = G_inf;
  c.Delta0_tilde = Delta0_tilde;
  const double dd = static_cast<double>(D);
  c.c_p8 = G_inf + lambda * rho / dd + phi * rho * rho / dd;
  const double m2 = max_sqrtphi_invrho(phi, rho) * max_sqrtphi_invrho(phi, rho);
  c.c_p9 = 12.0 * c.c_p8 / mu * m2;
  c.c_p10 = std::max({Delta0 * Delta0, 256.0 * c.c_p9 * c.c_p9 * dd * dd,
                      c.c_p8 * c.c_p8 * dd * dd * Delta0 * Delta0, 36.0 * G_inf * G_inf});
  c.c_p1 = std::min({8.0 / mu, 1.0 / (4.0 * phi),
                     rho / (lambda + 2.0 * max_sqrtphi_invrho(phi, rho))});
  c.c_p2 = 4.0 / (c.c_p1 * mu);
  c.c_p3 = Delta0_tilde * std::max(16.0, 10.0 * c.c_p10);
  c.c_p4 = c.c_p10;
  c.c_p5 = c.c_p8 * dd / phi;
  c.c_p6 = rho;
  c.derived_from_primitives = true;
  return c;
}

void TheoryConstants::validate(double Delta0, int D) const {
  for (double v : {c_p1, c_p2, c_p3, c_p4, c_p5, c_p6}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError("TheoryConstants: schedule constants must be strictly positive");
    }
  }
  if (derived_from_primitives) {
    const TheoryConstants again = derive(mu, phi, lambda, rho, G_inf, Delta0, Delta0_tilde, D);
    const auto close = [](double a, double b) {
      return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
    };
    if (!close(c_p9, again.c_p9) || !close(c_p10, again.c_p10) || !close(c_p2, again.c_p2)) {
      throw ConfigError("TheoryConstants: derived entries inconsistent with primitives");
    }
  }
}

double TheoryConstants::c_p11(int N, double delta, double Delta0, int D) const {
  return Delta0 * Delta0 / (c_p10 * std::log(8.0 * D * N / delta));
}

double TheoryConstants::c_p12(int N) const {
  return 4.0 / (c_p1 * mu) *
         (std::log(c_p10 * N * Delta0_tilde * Delta0_tilde) + std::log(4.0));
}

double TheoryConstants::c_p13(int N, long T, double delta, double Delta0, int D) const {
  return 4.0 * std::max(1.0, c_p9) *
         std::sqrt(c_p12(N) * std::log(c_p11(N, delta, Delta0, D) * static_cast<double>(T)));
}

double TheoryConstants::c_p7(int N, long T, double delta, double Delta0, int D) const {
  return static_cast<double>(D) * c_p13(N, T, delta, Delta0, D);
}

void PracticalParams::validate() const {
  if (M1 < 1) throw ConfigError("PracticalParams: M1 must be >= 1");
  if (R1 < 1) throw ConfigError("PracticalParams: R1 must be >= 1");
  if (rho_R < 0.0) throw ConfigError("PracticalParams: rho_R must be >= 0");
  if (!(eta > 0.0)) throw ConfigError("PracticalParams: eta must be positive");
  if (!(r1 > 0.0) || !(r_max > 0.0)) throw ConfigError("PracticalParams: radii must be positive");
}

void ScheduleConfig::validate() const {
  if (!(Delta0 > 0.0)) throw ConfigError("schedule: Delta0 must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("schedule: delta outside (0,1)");
  if (num_agents < 1) throw ConfigError("schedule: need at least one agent");
  if (dim < 1) throw ConfigError("schedule: policy dimension must be >= 1");
  if (mode == ScheduleMode::Theory) {
    theory.validate(Delta0, dim);
  } else {
    practical.validate();
  }
}

double EpochSchedule::r_global(std::size_t neighborhood_size) const {
  const double shrink = std::pow(static_cast<double>(std::max<std::size_t>(neighborhood_size, 1)),
                                 0.25);
  return std::min(r_cap, r_tilde / shrink);
}

EpochSchedule make_schedule(int l, const EpochSchedule* previous, const ScheduleConfig& cfg) {
  cfg.validate();
  if (l < 1) throw ConfigError("make_schedule: epochs start at 1");
  if ((l == 1) != (previous == nullptr)) {
    throw ConfigError("make_schedule: previous schedule required exactly for l > 1");
  }
  if (previous && previous->l != l - 1) {
    throw ConfigError("make_schedule: previous schedule must be epoch l-1");
  }

  EpochSchedule s;
  s.l = l;
  s.Delta_l = previous ? previous->Delta_l / 2.0 : cfg.Delta0 / 2.0;
  s.delta_l = cfg.delta / (2.0 * static_cast<double>(l) * static_cast<double>(l));

  const double N = static_cast<double>(cfg.num_agents);
  const double D = static_cast<double>(cfg.dim);
  if (cfg.mode == ScheduleMode::Theory) {
    const TheoryConstants& c = cfg.theory;
    s.eta = c.c_p1;
    const double r_raw = c.c_p2 * std::log(c.c_p3 * N / (s.Delta_l * s.Delta_l));
    s.R_l = std::max(1, static_cast<int>(std::ceil(r_raw)));
    const double log_term = std::log(8.0 * D * N * s.R_l / s.delta_l);
    const double m_raw = c.c_p4 / (s.Delta_l * s.Delta_l) * log_term;
    s.M_l = std::max<long>(1, static_cast<long>(std::ceil(m_raw)));
    s.r_tilde = std::sqrt(c.c_p5 / std::sqrt(static_cast<double>(s.M_l)) * std::sqrt(log_term));
    s.r_cap = c.c_p6;
  } else {
    const PracticalParams& p = cfg.practical;
    s.eta = p.eta;
    s.R_l = p.R1 + static_cast<int>(std::ceil(p.rho_R * l));
    long m = p.M1;
    for (int k = 1; k < l; ++k) {
      if (m > std::numeric_limits<long>::max() / 4) {
        throw ConfigError("make_schedule: practical minibatch overflow");
      }
      m *= 4;
    }
    s.M_l = m;
    // Radius mirrors the theory shape r ~ M^(-1/4).
    s.r_tilde = p.r1 / std::pow(std::sqrt(2.0), static_cast<double>(l - 1));
    s.r_cap = p.r_max;
  }
  s.r_local = std::min(s.r_cap, s.r_tilde);

  if (previous) {
    if (s.M_l <= previous->M_l) {
      throw ConfigError("make_schedule: minibatch sizes must strictly increase");
    }
    if (s.R_l < previous->R_l) {
      throw ConfigError("make_schedule: iteration counts must be nondecreasing");
    }
  }
  return s;
}

}  // namespace pcpo
