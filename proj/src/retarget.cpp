#include "rpl/retarget.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

#include "rpl/errors.hpp"

namespace rpl {

namespace {

std::string describe_row(const Matrix* xs, Eigen::Index i) {
  std::ostringstream os;
  os << "row " << i;
  if (xs != nullptr && i < xs->rows()) {
    os << " (x = ";
    for (Eigen::Index j = 0; j < xs->cols(); ++j) os << (j ? "," : "") << format_double((*xs)(i, j));
    os << ")";
  }
  return os.str();
}

void check_shapes(const NuisanceValues& nv) {
  if (nv.propensity.rows() == 0) throw InputError("nuisance table is empty");
  if (nv.outcome_variance.rows() != nv.propensity.rows() ||
      nv.outcome_variance.cols() != nv.propensity.cols())
    throw InputError("variance table shape does not match propensities");
  if ((nv.outcome_variance.array() < 0.0).any()) throw InputError("negative outcome variance");
}

Retargeting from_kappa(const NuisanceValues& nv, Vector kappa, Vector xi, Matrix reference,
                       std::size_t clipped, double padding) {
  Retargeting r;
  const Vector inv = (kappa.array() + padding).inverse().matrix();
  if (!inv.allFinite() || (inv.array() <= 0.0).any())
    throw SingularityError("retargeting weights are not finite and positive");
  r.weight = normalize_mean_one(inv);
  r.kappa = std::move(kappa);
  r.xi = std::move(xi);
  r.reference = std::move(reference);
  r.clipped = clipped;
  for (Eigen::Index i = 0; i < r.reference.rows(); ++i) {
    if (r.reference.row(i).minCoeff() < -1e-12 ||
        std::abs(r.reference.row(i).sum() - 1.0) > kSimplexTolerance)
      ++r.reference_violations;
  }
  r.omega = omega_closed_form(nv, r.weight, r.reference);
  return r;
}

}  // namespace

Matrix variance_ratio(const NuisanceValues& nv, std::size_t* clipped, const Matrix* xs) {
  check_shapes(nv);
  Matrix zeta(nv.propensity.rows(), nv.propensity.cols());
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < zeta.rows(); ++i) {
    for (Eigen::Index a = 0; a < zeta.cols(); ++a) {
      double p = nv.propensity(i, a);
      if (!(p > 0.0))
        throw SingularityError("propensity of action " + std::to_string(a + 1) + " is " +
                               format_double(p) + " at " + describe_row(xs, i));
      if (p < kPropensityFloor) {
        p = kPropensityFloor;
        ++count;
      }
      zeta(i, a) = nv.outcome_variance(i, a) / p;
    }
  }
  if (clipped != nullptr) *clipped = count;
  return zeta;
}

double omega_closed_form(const NuisanceValues& nv, const Vector& w, const Matrix& rho, const Matrix* xs) {
  const Matrix zeta = variance_ratio(nv, nullptr, xs);
  if (w.size() != zeta.rows() || rho.rows() != zeta.rows() || rho.cols() != zeta.cols())
    throw InputError("weights or reference policy do not match the nuisance table");
  double total = 0.0;
  for (Eigen::Index i = 0; i < zeta.rows(); ++i) {
    const auto z = zeta.row(i).array();
    const auto r = rho.row(i).array();
    const double quad = (z * r.square()).sum();
    const double lin = (z * (1.0 - 2.0 * r)).maxCoeff();
    total += w(i) * w(i) * (quad + lin);
  }
  return total / static_cast<double>(zeta.rows());
}

double omega_closed_form(const NuisanceModel& nuisance, const Vector& w, const Matrix& rho,
                         const Matrix& xs) {
  return omega_closed_form(nuisance.evaluate(xs), w, rho, &xs);
}

Retargeting optimal_binary(const NuisanceValues& nv) {
  if (nv.num_actions() != 2)
    throw ContractError("optimal_binary requires exactly 2 actions, got " +
                        std::to_string(nv.num_actions()));
  std::size_t clipped = 0;
  const Matrix zeta = variance_ratio(nv, &clipped);
  const auto n = zeta.rows();
  // sigma^2(+)/(1+phi) + sigma^2(-)/(1-phi) = (zeta(+) + zeta(-)) / 2; kappa is
  // kept on the multi-action scale (twice the bracket).
  Vector kappa = zeta.rowwise().sum();
  return from_kappa(nv, std::move(kappa), Vector::Zero(n), Matrix::Constant(n, 2, 0.5), clipped, 0.0);
}

Retargeting optimal_binary(const NuisanceModel& nuisance, const Matrix& xs) {
  return optimal_binary(nuisance.evaluate(xs));
}

namespace {

Retargeting multi_with_padding(const NuisanceValues& nv, double padding) {
  const int m = nv.num_actions();
  if (m < 2) throw ContractError("retargeting requires at least 2 actions");
  std::size_t clipped = 0;
  const Matrix zeta = variance_ratio(nv, &clipped);
  const auto n = zeta.rows();
  Vector xi(n), kappa(n);
  Matrix rho(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto z = zeta.row(i).array();
    xi(i) = static_cast<double>(m - 2) / z.inverse().sum();
    rho.row(i) = (0.5 * (1.0 - xi(i) / z)).matrix();
    // Objective value of the KKT point: sum zeta rho^2 + xi = (sum zeta - (m-2) xi) / 4.
    kappa(i) = z.sum() - static_cast<double>(m - 2) * xi(i);
  }
  return from_kappa(nv, std::move(kappa), std::move(xi), std::move(rho), clipped, padding);
}

}  // namespace

Retargeting optimal_multi(const NuisanceValues& nv) { return multi_with_padding(nv, 0.0); }

Retargeting optimal_multi(const NuisanceModel& nuisance, const Matrix& xs) {
  return optimal_multi(nuisance.evaluate(xs));
}

Retargeting bias_regularized(const NuisanceValues& nv, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw ContractError("bias-regularization lambda must be finite and >= 0");
  return multi_with_padding(nv, 4.0 * lambda * lambda);
}

Retargeting bias_regularized(const NuisanceModel& nuisance, const Matrix& xs, double lambda) {
  return bias_regularized(nuisance.evaluate(xs), lambda);
}

double worst_case_bias(const Vector& w) {
  if (w.size() == 0) throw InputError("empty weight vector");
  return std::sqrt((w.array() - 1.0).square().mean());
}

double padding_c_from_lambda(double lambda, double sigma2) {
  if (!(lambda > 0.0)) throw ContractError("lambda must be positive to map to a finite c");
  return sigma2 / (lambda * lambda);
}

Vector normalize_mean_one(const Vector& w) {
  if (w.size() > 0 && w(0) > 0.0 && std::isfinite(w(0)) && (w.array() == w(0)).all()) return Vector::Ones(w.size());
  const double mean = w.mean();
  if (!(mean > 0.0) || !std::isfinite(mean)) throw SingularityError("weights have non-positive mean");
  return w / mean;
}

void write_diagnostics_csv(std::ostream& out, const Matrix& xs, const Retargeting& r) {
  if (xs.rows() != r.weight.size()) throw InputError("diagnostics: covariate rows do not match weights");
  for (Eigen::Index j = 0; j < xs.cols(); ++j) out << 'x' << (j + 1) << ',';
  out << 'w';
  for (Eigen::Index a = 0; a < r.reference.cols(); ++a) out << ",rho_" << (a + 1);
  out << ",kappa,xi\n";
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    for (Eigen::Index j = 0; j < xs.cols(); ++j) out << format_double(xs(i, j)) << ',';
    out << format_double(r.weight(i));
    for (Eigen::Index a = 0; a < r.reference.cols(); ++a) out << ',' << format_double(r.reference(i, a));
    out << ',' << format_double(r.kappa(i)) << ',' << format_double(r.xi(i)) << '\n';
  }
  out << "# summary omega=" << format_double(r.omega)
      << ",worst_case_bias=" << format_double(worst_case_bias(r.weight))
      << ",clipped=" << r.clipped << ",reference_violations=" << r.reference_violations << '\n';
}

}  // namespace rpl
