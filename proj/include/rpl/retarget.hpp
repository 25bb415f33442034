#pragma once

#include <iosfwd>

#include "rpl/core.hpp"

namespace rpl {

// Propensities below this floor (but positive) are raised to it before
// inversion; non-positive propensities are a SingularityError.
inline constexpr double kPropensityFloor = 1e-6;

/// Retargeting weights and reference policy evaluated on a finite x-set.
///
/// `weight` is normalized to sample mean 1. `kappa` is the per-x optimal
/// inner value scaled so that Omega(w, rho0) = mean(w^2 * kappa) / 4, and
/// `xi` is the multiplier of the reference-policy KKT solution (0 for m = 2).
struct Retargeting {
  Vector weight;
  Matrix reference;
  Vector kappa;
  Vector xi;
  double omega = 0.0;
  std::size_t clipped = 0;               // propensities raised to kPropensityFloor
  std::size_t reference_violations = 0;  // rows where reference left the simplex
};

/// zeta(a|x) = sigma^2(a|x) / phi(a|x) with the propensity floor applied.
/// Throws SingularityError naming the first row with phi <= 0.
Matrix variance_ratio(const NuisanceValues& nuisance, std::size_t* clipped = nullptr,
                      const Matrix* xs = nullptr);

/// Omega(w, rho) = mean_x w^2 (sum_a zeta rho^2 + max_a zeta (1 - 2 rho)).
double omega_closed_form(const NuisanceValues& nuisance, const Vector& w, const Matrix& rho,
                         const Matrix* xs = nullptr);
double omega_closed_form(const NuisanceModel& nuisance, const Vector& w, const Matrix& rho,
                         const Matrix& xs);

/// Binary case: rho0 = (1/2, 1/2), w0 proportional to
/// (sigma^2(+)/(1+phi) + sigma^2(-)/(1-phi))^-1 with phi = 2 phi(+) - 1.
Retargeting optimal_binary(const NuisanceValues& nuisance);
Retargeting optimal_binary(const NuisanceModel& nuisance, const Matrix& xs);

/// Any m >= 2: xi = (m-2) / sum_a zeta^-1, rho0(a) = (1 - xi / zeta(a)) / 2,
/// kappa = sum_a zeta - (m-2) xi, w0 proportional to 1/kappa.
Retargeting optimal_multi(const NuisanceValues& nuisance);
Retargeting optimal_multi(const NuisanceModel& nuisance, const Matrix& xs);

/// Padded weights w proportional to 1/(kappa + 4 lambda^2); reference stays at rho0.
Retargeting bias_regularized(const NuisanceValues& nuisance, double lambda);
Retargeting bias_regularized(const NuisanceModel& nuisance, const Matrix& xs, double lambda);

/// Worst-case reweighting bias: root-mean-square of (w - 1).
double worst_case_bias(const Vector& w);

/// Binary homoskedastic padding parameter matching bias_regularized(lambda):
/// (kappa + 4 lambda^2)^-1 is proportional to (1-phi^2) / (c + 1 - phi^2) with c = sigma^2 / lambda^2.
double padding_c_from_lambda(double lambda, double sigma2 = 1.0);

// Normalizes to sample mean 1.
Vector normalize_mean_one(const Vector& w);

/// Per-x diagnostics `x1..xd,w,rho_1..rho_m,kappa,xi` and a trailing
/// `# summary` line with Omega and the worst-case bias.
void write_diagnostics_csv(std::ostream& out, const Matrix& xs, const Retargeting& r);

}  // namespace rpl
