#include "rpl/nuisance.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

#include "rpl/csv.hpp"
#include "rpl/errors.hpp"
#include "rpl/random.hpp"

namespace rpl {

void DGPConfig::validate() const {
  if (!(q1 > 0.0) || !std::isfinite(q1)) throw InputError("q1 must be positive, got " + format_double(q1));
  if (!(q2 > 0.0) || !std::isfinite(q2)) throw InputError("q2 must be positive, got " + format_double(q2));
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw InputError("beta must be >= 0, got " + format_double(beta));
}

CrossFitPlan CrossFitPlan::make(std::size_t n, int folds, std::uint64_t seed) {
  if (folds < 2) throw ContractError("cross-fitting needs at least 2 folds");
  if (n < static_cast<std::size_t>(folds))
    throw InputError("cannot split " + std::to_string(n) + " records into " + std::to_string(folds) + " folds");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  RandomStream rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  CrossFitPlan plan;
  plan.folds_ = folds;
  plan.assignment_.resize(n);
  for (std::size_t rank = 0; rank < n; ++rank)
    plan.assignment_[perm[rank]] = static_cast<int>(rank % static_cast<std::size_t>(folds));
  return plan;
}

std::vector<std::size_t> CrossFitPlan::members(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment_.size(); ++i)
    if (assignment_[i] == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> CrossFitPlan::complement(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment_.size(); ++i)
    if (assignment_[i] != fold) out.push_back(i);
  return out;
}

PropensityMethod parse_propensity_method(std::string_view name) {
  if (name == "logistic") return PropensityMethod::Logistic;
  if (name == "multinomial-logistic") return PropensityMethod::MultinomialLogistic;
  if (name == "boosted-stumps") return PropensityMethod::BoostedStumps;
  throw InputError("unknown propensity method '" + std::string(name) + "'");
}

OutcomeMethod parse_outcome_method(std::string_view name) {
  if (name == "per-arm-least-squares" || name == "least-squares") return OutcomeMethod::LeastSquares;
  if (name == "per-arm-boosted-stumps" || name == "boosted-stumps") return OutcomeMethod::BoostedStumps;
  throw InputError("unknown outcome method '" + std::string(name) + "'");
}

std::string_view to_string(PropensityMethod m) {
  switch (m) {
    case PropensityMethod::Logistic: return "logistic";
    case PropensityMethod::MultinomialLogistic: return "multinomial-logistic";
    case PropensityMethod::BoostedStumps: return "boosted-stumps";
  }
  return "?";
}

std::string_view to_string(OutcomeMethod m) {
  switch (m) {
    case OutcomeMethod::LeastSquares: return "per-arm-least-squares";
    case OutcomeMethod::BoostedStumps: return "per-arm-boosted-stumps";
  }
  return "?";
}

namespace {

void check_plan(const ObservationSet& data, const CrossFitPlan& plan) {
  if (plan.size() != data.size())
    throw InputError("cross-fit plan covers " + std::to_string(plan.size()) + " records, data has " +
                     std::to_string(data.size()));
}

Matrix rows_of(const Matrix& xs, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), xs.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = xs.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

std::string fold_action(int fold, int action) {
  return "fold " + std::to_string(fold + 1) + ", action " + std::to_string(action);
}

}  // namespace

PropensityFit fit_propensity(const ObservationSet& data, const CrossFitPlan& plan, PropensityMethod method,
                             const NuisanceOptions& options, std::uint64_t seed) {
  check_plan(data, plan);
  const int m = data.num_actions();
  if (method == PropensityMethod::Logistic && m != 2)
    throw ContractError("logistic propensity requires 2 actions; use multinomial-logistic for " + std::to_string(m));
  const Matrix& xs = data.covariates();
  PropensityFit fit;
  fit.probs = Matrix::Zero(xs.rows(), m);
  for (int k = 0; k < plan.folds(); ++k) {
    const auto train = plan.complement(k);
    const auto test = plan.members(k);
    if (test.empty()) continue;
    std::vector<Action> labels;
    labels.reserve(train.size());
    std::vector<std::size_t> counts(static_cast<std::size_t>(m), 0);
    for (auto i : train) {
      labels.push_back(data.actions()[i]);
      ++counts[static_cast<std::size_t>(data.actions()[i] - 1)];
    }
    for (int a = 1; a <= m; ++a)
      if (counts[static_cast<std::size_t>(a - 1)] == 0)
        throw FittingError("propensity: " + fold_action(k, a) + " is absent from the training split");
    const Matrix xtrain = rows_of(xs, train);
    const Matrix xtest = rows_of(xs, test);
    Matrix pred;
    switch (method) {
      case PropensityMethod::Logistic:
      case PropensityMethod::MultinomialLogistic:
        pred = SoftmaxRegression::fit(xtrain, labels, m, options.irls).predict(xtest);
        break;
      case PropensityMethod::BoostedStumps:
        pred = BoostedStumpClassifier::fit(xtrain, labels, m, options.boosting, derive_seed(seed, {0x70, static_cast<std::uint64_t>(k)}))
                   .predict(xtest);
        break;
    }
    for (std::size_t r = 0; r < test.size(); ++r)
      fit.probs.row(static_cast<Eigen::Index>(test[r])) = pred.row(static_cast<Eigen::Index>(r));
  }
  fit.clipped = clip_to_simplex(fit.probs, options.propensity_floor);
  return fit;
}

Matrix fit_outcome(const ObservationSet& data, const CrossFitPlan& plan, OutcomeMethod method,
                   const NuisanceOptions& options, std::uint64_t seed) {
  check_plan(data, plan);
  const int m = data.num_actions();
  const Matrix& xs = data.covariates();
  const std::size_t need =
      method == OutcomeMethod::LeastSquares ? static_cast<std::size_t>(data.dim() + 1) : std::size_t{10};
  Matrix mu = Matrix::Zero(xs.rows(), m);
  for (int k = 0; k < plan.folds(); ++k) {
    const auto test = plan.members(k);
    if (test.empty()) continue;
    const Matrix xtest = rows_of(xs, test);
    for (int a = 1; a <= m; ++a) {
      std::vector<std::size_t> arm;
      for (auto i : plan.complement(k))
        if (data.actions()[i] == a) arm.push_back(i);
      if (arm.size() < need)
        throw FittingError("outcome: " + fold_action(k, a) + " has " + std::to_string(arm.size()) +
                           " training records, need " + std::to_string(need));
      const Matrix xarm = rows_of(xs, arm);
      Vector yarm(static_cast<Eigen::Index>(arm.size()));
      for (std::size_t r = 0; r < arm.size(); ++r) yarm(static_cast<Eigen::Index>(r)) = data.rewards()(static_cast<Eigen::Index>(arm[r]));
      Vector pred;
      if (method == OutcomeMethod::LeastSquares) {
        try {
          pred = LeastSquares::fit(xarm, yarm).predict(xtest);
        } catch (const FittingError& e) {
          throw FittingError("outcome: " + fold_action(k, a) + ": " + e.what());
        }
      } else {
        const auto s = derive_seed(seed, {0x6d, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(a)});
        pred = BoostedStumpRegressor::fit(xarm, yarm, options.boosting, s).predict(xtest);
      }
      for (std::size_t r = 0; r < test.size(); ++r) mu(static_cast<Eigen::Index>(test[r]), a - 1) = pred(static_cast<Eigen::Index>(r));
    }
  }
  return mu;
}

FittedNuisance fit_nuisance(const ObservationSet& data, const CrossFitPlan& plan, PropensityMethod pm,
                            OutcomeMethod om, const NuisanceOptions& options, std::uint64_t seed) {
  auto prop = fit_propensity(data, plan, pm, options, derive_seed(seed, {1}));
  Matrix mu = fit_outcome(data, plan, om, options, derive_seed(seed, {2}));
  FittedNuisance out;
  out.values = with_unit_variance(std::move(prop.probs), std::move(mu));
  out.clipped = prop.clipped;
  return out;
}

Matrix oracle_outcome(const Matrix& xs, double q2) {
  if (xs.cols() != 2) throw InputError("the synthetic design has 2 covariates, got " + std::to_string(xs.cols()));
  Matrix mu(xs.rows(), 2);
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    const double u1 = signed_power(xs(i, 0), 1.0 / q2);
    const double u2 = signed_power(xs(i, 1), 1.0 / q2);
    mu(i, 0) = u1;
    mu(i, 1) = 2.0 * u1 + u2 + 0.25;
  }
  return mu;
}

NuisanceModel oracle_nuisance(const DGPConfig& dgp) {
  dgp.validate();
  NuisanceModel model;
  model.num_actions = 2;
  const double q2 = dgp.q2;
  const double beta = dgp.beta;
  model.propensity = [q2, beta](const Matrix& xs) {
    if (xs.cols() != 2) throw InputError("the synthetic design has 2 covariates");
    Matrix p(xs.rows(), 2);
    for (Eigen::Index i = 0; i < xs.rows(); ++i) {
      const double plus = normal_cdf(beta * signed_power(xs(i, 0), 1.0 / q2));
      p(i, 0) = 1.0 - plus;
      p(i, 1) = plus;
    }
    return p;
  };
  model.outcome_mean = [q2](const Matrix& xs) { return oracle_outcome(xs, q2); };
  model.outcome_variance = [](const Matrix& xs) { return Matrix::Ones(xs.rows(), 2).eval(); };
  return model;
}

void write_nuisance_csv(std::ostream& out, const NuisanceValues& nv) {
  const int m = nv.num_actions();
  out << 'i';
  for (int a = 1; a <= m; ++a) out << ",phi_" << a;
  for (int a = 1; a <= m; ++a) out << ",mu_" << a;
  out << '\n';
  for (Eigen::Index i = 0; i < nv.propensity.rows(); ++i) {
    out << i;
    for (int a = 0; a < m; ++a) out << ',' << format_double(nv.propensity(i, a));
    for (int a = 0; a < m; ++a) out << ',' << format_double(nv.outcome_mean(i, a));
    out << '\n';
  }
}

NuisanceValues read_nuisance_csv(std::istream& in) {
  csv::LineReader reader(in);
  std::vector<std::string> fields;
  if (!reader.next(fields)) throw InputError("nuisance CSV is empty");
  if (fields.size() < 5 || (fields.size() - 1) % 2 != 0 || csv::trim(fields[0]) != "i")
    throw InputError("nuisance CSV line " + std::to_string(reader.line_number()) +
                     ": expected header i,phi_1..phi_m,mu_1..mu_m");
  const auto m = static_cast<Eigen::Index>((fields.size() - 1) / 2);
  std::vector<std::vector<double>> rows;
  while (reader.next(fields)) {
    if (static_cast<Eigen::Index>(fields.size()) != 2 * m + 1)
      throw InputError("nuisance CSV line " + std::to_string(reader.line_number()) + ": expected " +
                       std::to_string(2 * m + 1) + " fields, got " + std::to_string(fields.size()));
    std::vector<double> row;
    for (std::size_t f = 1; f < fields.size(); ++f) {
      try {
        row.push_back(parse_double(fields[f]));
      } catch (const InputError& e) {
        throw InputError("nuisance CSV line " + std::to_string(reader.line_number()) + ": " + e.what());
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError("nuisance CSV has no records");
  Matrix phi(static_cast<Eigen::Index>(rows.size()), m), mu(static_cast<Eigen::Index>(rows.size()), m);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (Eigen::Index a = 0; a < m; ++a) {
      phi(static_cast<Eigen::Index>(r), a) = rows[r][static_cast<std::size_t>(a)];
      mu(static_cast<Eigen::Index>(r), a) = rows[r][static_cast<std::size_t>(m + a)];
    }
  return with_unit_variance(std::move(phi), std::move(mu));
}

}  // namespace rpl
