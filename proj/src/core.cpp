#include "rpl/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "rpl/csv.hpp"
#include "rpl/errors.hpp"

namespace rpl {

namespace {

void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw InputError(std::string(what) + " contains non-finite values");
}

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

// ---------------------------------------------------------------------------
// ObservationSet

ObservationSet::ObservationSet(Matrix covariates, std::vector<Action> actions, Vector rewards,
                               int num_actions)
    : covariates_(std::move(covariates)),
      actions_(std::move(actions)),
      rewards_(std::move(rewards)),
      num_actions_(num_actions) {
  const auto n = actions_.size();
  if (n == 0) throw InputError("observation set must contain at least one record");
  if (static_cast<std::size_t>(covariates_.rows()) != n ||
      static_cast<std::size_t>(rewards_.size()) != n)
    throw InputError("covariates, actions and rewards disagree on record count");
  if (num_actions_ < 1) throw InputError("action count must be at least 1");
  for (std::size_t i = 0; i < n; ++i) {
    if (actions_[i] < 1 || actions_[i] > num_actions_)
      throw InputError("record " + std::to_string(i) + " has action " +
                       std::to_string(actions_[i]) + " outside 1.." +
                       std::to_string(num_actions_));
  }
  check_finite(covariates_, "covariates");
  check_finite(rewards_, "rewards");
}

ObservationSet ObservationSet::read_csv(std::istream& in, int num_actions) {
  csv::LineReader reader(in);
  std::vector<std::string> fields;
  if (!reader.next(fields)) throw InputError("line 1: missing header");
  if (fields.size() < 2 || fields[fields.size() - 2] != "action" || fields.back() != "reward")
    throw InputError("line " + std::to_string(reader.line_number()) +
                     ": header must be x1,...,xd,action,reward");
  const std::size_t d = fields.size() - 2;
  for (std::size_t j = 0; j < d; ++j) {
    if (fields[j] != "x" + std::to_string(j + 1))
      throw InputError("line " + std::to_string(reader.line_number()) + ": expected column x" +
                       std::to_string(j + 1) + ", found '" + fields[j] + "'");
  }

  std::vector<double> xs;
  std::vector<Action> actions;
  std::vector<double> rewards;
  while (reader.next(fields)) {
    const auto line = reader.line_number();
    if (fields.size() != d + 2)
      throw InputError("line " + std::to_string(line) + ": expected " + std::to_string(d + 2) +
                       " fields, found " + std::to_string(fields.size()));
    try {
      for (std::size_t j = 0; j < d; ++j) xs.push_back(parse_double(fields[j]));
      const double a = parse_double(fields[d]);
      if (a != std::floor(a)) throw InputError("action is not an integer");
      actions.push_back(static_cast<Action>(a));
      rewards.push_back(parse_double(fields[d + 1]));
    } catch (const InputError& e) {
      throw InputError("line " + std::to_string(line) + ": " + e.what());
    }
    if (!std::isfinite(rewards.back()) ||
        !std::all_of(xs.end() - static_cast<long>(d), xs.end(),
                     [](double v) { return std::isfinite(v); }))
      throw InputError("line " + std::to_string(line) + ": non-finite value");
    if (actions.back() < 1 || (num_actions > 0 && actions.back() > num_actions))
      throw InputError("line " + std::to_string(line) + ": action " +
                       std::to_string(actions.back()) + " out of range");
  }
  if (actions.empty()) throw InputError("no records after header");

  const auto n = actions.size();
  Matrix cov(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = xs[i * d + j];
  const int m = num_actions > 0 ? num_actions : *std::max_element(actions.begin(), actions.end());
  return ObservationSet(std::move(cov), std::move(actions),
                        Eigen::Map<const Vector>(rewards.data(), static_cast<Eigen::Index>(n)),
                        m);
}

ObservationSet ObservationSet::load_csv(const std::filesystem::path& path, int num_actions) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return read_csv(in, num_actions);
}

void ObservationSet::write_csv(std::ostream& out) const {
  for (int j = 0; j < dim(); ++j) out << 'x' << (j + 1) << ',';
  out << "action,reward\n";
  for (Eigen::Index i = 0; i < covariates_.rows(); ++i) {
    for (Eigen::Index j = 0; j < covariates_.cols(); ++j) out << format_double(covariates_(i, j)) << ',';
    out << actions_[static_cast<std::size_t>(i)] << ',' << format_double(rewards_(i)) << '\n';
  }
}

void ObservationSet::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  write_csv(out);
}

ObservationSet ObservationSet::subset(std::span<const std::size_t> rows) const {
  Matrix cov(static_cast<Eigen::Index>(rows.size()), covariates_.cols());
  std::vector<Action> acts;
  Vector rew(static_cast<Eigen::Index>(rows.size()));
  acts.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(rows[k]);
    cov.row(static_cast<Eigen::Index>(k)) = covariates_.row(i);
    acts.push_back(actions_[rows[k]]);
    rew(static_cast<Eigen::Index>(k)) = rewards_(i);
  }
  return ObservationSet(std::move(cov), std::move(acts), std::move(rew), num_actions_);
}

ObservationSet ObservationSet::with_rewards(Vector rewards) const {
  return ObservationSet(covariates_, actions_, std::move(rewards), num_actions_);
}

// ---------------------------------------------------------------------------
// PolicyDistribution

PolicyDistribution::PolicyDistribution(int num_actions, BatchFn probs)
    : num_actions_(num_actions), probs_(std::move(probs)) {
  if (num_actions_ < 1) throw InputError("policy needs at least one action");
}

PolicyDistribution PolicyDistribution::from_actions(
    int num_actions, std::function<std::vector<Action>(const Matrix&)> choose) {
  return PolicyDistribution(num_actions, [num_actions, choose = std::move(choose)](const Matrix& xs) {
    return one_hot(choose(xs), num_actions);
  });
}

PolicyDistribution PolicyDistribution::greedy(int num_actions, BatchFn values) {
  return PolicyDistribution(num_actions, [num_actions, values = std::move(values)](const Matrix& xs) {
    const Matrix v = values(xs);
    Matrix p = Matrix::Zero(v.rows(), num_actions);
    for (Eigen::Index i = 0; i < v.rows(); ++i) p(i, argmax_row(v.row(i).transpose())) = 1.0;
    return p;
  });
}

Matrix PolicyDistribution::probs(const Matrix& xs) const {
  Matrix p = probs_(xs);
  if (p.rows() != xs.rows() || p.cols() != num_actions_)
    throw InputError("policy returned " + shape(p) + " for " + std::to_string(xs.rows()) +
                     " rows and " + std::to_string(num_actions_) + " actions");
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    if ((p.row(i).array() < 0.0).any() || std::abs(p.row(i).sum() - 1.0) > kSimplexTolerance)
      throw InputError("policy row " + std::to_string(i) + " is not a probability distribution");
  }
  return p;
}

// ---------------------------------------------------------------------------
// LinearPolicy

LinearPolicy::LinearPolicy(Vector intercepts, Matrix slopes)
    : intercepts_(std::move(intercepts)), slopes_(std::move(slopes)) {
  if (intercepts_.size() < 1 || slopes_.rows() != intercepts_.size())
    throw InputError("linear policy needs one intercept and one slope row per action");
  if (!slopes_.allFinite()) throw InputError("linear policy slopes must be finite");
  if (intercepts_.array().isNaN().any()) throw InputError("linear policy intercept is NaN");
}

LinearPolicy LinearPolicy::from_angle(double theta, double offset) {
  Vector b(2);
  b << 0.0, -offset;
  Matrix s(2, 2);
  s << 0.0, 0.0, std::cos(theta), std::sin(theta);
  LinearPolicy p(std::move(b), std::move(s));
  p.angle_ = AngleForm{theta, offset};
  return p;
}

LinearPolicy LinearPolicy::constant(int num_actions, int dim, Action action) {
  if (action < 1 || action > num_actions) throw InputError("constant policy action out of range");
  Vector b = Vector::Zero(num_actions);
  b(action - 1) = 1.0;
  return LinearPolicy(std::move(b), Matrix::Zero(num_actions, dim));
}

Action LinearPolicy::action_at(const Eigen::Ref<const Vector>& x) const {
  if (x.size() != slopes_.cols()) throw InputError("covariate dimension mismatch");
  if (angle_) return angle_treats(slopes_(1, 0), slopes_(1, 1), angle_->offset, x(0), x(1)) ? 2 : 1;
  const Vector scores = intercepts_ + slopes_ * x;
  return static_cast<Action>(argmax_row(scores)) + 1;
}

std::vector<Action> LinearPolicy::actions(const Matrix& xs) const {
  if (xs.cols() != slopes_.cols()) throw InputError("covariate dimension mismatch");
  std::vector<Action> out(static_cast<std::size_t>(xs.rows()));
  if (angle_) {
    for (Eigen::Index i = 0; i < xs.rows(); ++i)
      out[static_cast<std::size_t>(i)] =
          angle_treats(slopes_(1, 0), slopes_(1, 1), angle_->offset, xs(i, 0), xs(i, 1)) ? 2 : 1;
    return out;
  }
  const Matrix scores = (xs * slopes_.transpose()).rowwise() + intercepts_.transpose();
  for (Eigen::Index i = 0; i < xs.rows(); ++i)
    out[static_cast<std::size_t>(i)] = static_cast<Action>(argmax_row(scores.row(i).transpose())) + 1;
  return out;
}

Matrix LinearPolicy::one_hot(const Matrix& xs) const {
  return rpl::one_hot(actions(xs), num_actions());
}

PolicyDistribution LinearPolicy::distribution() const {
  return PolicyDistribution(num_actions(), [self = *this](const Matrix& xs) { return self.one_hot(xs); });
}

void LinearPolicy::write(std::ostream& out) const {
  out << "action,intercept";
  for (int j = 0; j < dim(); ++j) out << ",slope_" << (j + 1);
  out << '\n';
  for (int a = 0; a < num_actions(); ++a) {
    out << (a + 1) << ',' << format_double(intercepts_(a));
    for (int j = 0; j < dim(); ++j) out << ',' << format_double(slopes_(a, j));
    out << '\n';
  }
}

LinearPolicy LinearPolicy::read(std::istream& in) {
  csv::LineReader reader(in);
  std::vector<std::string> fields;
  if (!reader.next(fields) || fields.size() < 2 || fields[0] != "action" || fields[1] != "intercept")
    throw InputError("policy header must be action,intercept,slope_1,...");
  const std::size_t d = fields.size() - 2;
  std::vector<double> b;
  std::vector<double> s;
  while (reader.next(fields)) {
    if (fields.size() != d + 2)
      throw InputError("line " + std::to_string(reader.line_number()) + ": wrong field count");
    if (static_cast<std::size_t>(parse_double(fields[0])) != b.size() + 1)
      throw InputError("line " + std::to_string(reader.line_number()) + ": actions must be 1..m in order");
    b.push_back(parse_double(fields[1]));
    for (std::size_t j = 0; j < d; ++j) s.push_back(parse_double(fields[2 + j]));
  }
  const auto m = static_cast<Eigen::Index>(b.size());
  Matrix slopes(m, static_cast<Eigen::Index>(d));
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d); ++j)
      slopes(a, j) = s[static_cast<std::size_t>(a) * d + static_cast<std::size_t>(j)];
  return LinearPolicy(Eigen::Map<const Vector>(b.data(), m), std::move(slopes));
}

bool LinearPolicy::operator==(const LinearPolicy& other) const {
  return intercepts_.size() == other.intercepts_.size() && slopes_.cols() == other.slopes_.cols() &&
         intercepts_ == other.intercepts_ && slopes_ == other.slopes_;
}

// ---------------------------------------------------------------------------
// Nuisance containers

NuisanceValues NuisanceModel::evaluate(const Matrix& xs) const {
  if (!propensity || !outcome_mean) throw InputError("nuisance model is missing a component");
  NuisanceValues v;
  v.propensity = propensity(xs);
  v.outcome_mean = outcome_mean(xs);
  v.outcome_variance =
      outcome_variance ? outcome_variance(xs) : Matrix::Ones(xs.rows(), num_actions);
  for (const Matrix* m : {&v.propensity, &v.outcome_mean, &v.outcome_variance}) {
    if (m->rows() != xs.rows() || m->cols() != num_actions)
      throw InputError("nuisance component returned " + shape(*m) + ", expected " +
                       std::to_string(xs.rows()) + "x" + std::to_string(num_actions));
  }
  if ((v.outcome_variance.array() < 0.0).any()) throw InputError("negative outcome variance");
  return v;
}

NuisanceValues with_unit_variance(Matrix propensity, Matrix outcome_mean) {
  if (propensity.rows() != outcome_mean.rows() || propensity.cols() != outcome_mean.cols())
    throw InputError("propensity and outcome tables disagree in shape");
  NuisanceValues v;
  v.outcome_variance = Matrix::Ones(propensity.rows(), propensity.cols());
  v.propensity = std::move(propensity);
  v.outcome_mean = std::move(outcome_mean);
  return v;
}

// ---------------------------------------------------------------------------
// Value and regret

double policy_value(const Matrix& policy_probs, const Matrix& mu, const std::optional<Vector>& weights) {
  if (policy_probs.rows() == 0) throw InputError("policy value needs at least one test point");
  if (policy_probs.rows() != mu.rows() || policy_probs.cols() != mu.cols())
    throw InputError("policy is " + shape(policy_probs) + " but outcome table is " + shape(mu));
  const Vector per_x = policy_probs.cwiseProduct(mu).rowwise().sum();
  if (!weights) return per_x.mean();
  if (weights->size() != per_x.size()) throw InputError("weight count does not match test points");
  if ((weights->array() <= 0.0).any()) throw InputError("weights must be positive");
  return weights->dot(per_x) / weights->sum();
}

double policy_value(const PolicyDistribution& policy, const BatchFn& mu, const Matrix& test_xs,
                    const std::optional<Vector>& weights) {
  if (test_xs.rows() == 0) throw InputError("policy value needs at least one test point");
  return policy_value(policy.probs(test_xs), mu(test_xs), weights);
}

double regret(const Matrix& policy_probs, const Matrix& mu) {
  if (policy_probs.rows() == 0) throw InputError("regret needs at least one test point");
  if (policy_probs.rows() != mu.rows() || policy_probs.cols() != mu.cols())
    throw InputError("policy is " + shape(policy_probs) + " but outcome table is " + shape(mu));
  const Vector best = mu.rowwise().maxCoeff();
  const Vector got = policy_probs.cwiseProduct(mu).rowwise().sum();
  return (best - got).mean();
}

double regret(const PolicyDistribution& policy, const BatchFn& mu, const Matrix& test_xs) {
  if (test_xs.rows() == 0) throw InputError("regret needs at least one test point");
  return regret(policy.probs(test_xs), mu(test_xs));
}

double regret(std::span<const Action> chosen, const Matrix& mu) {
  if (chosen.empty()) throw InputError("regret needs at least one test point");
  if (static_cast<Eigen::Index>(chosen.size()) != mu.rows())
    throw InputError("action count does not match outcome rows");
  double total = 0.0;
  for (Eigen::Index i = 0; i < mu.rows(); ++i) {
    const Action a = chosen[static_cast<std::size_t>(i)];
    if (a < 1 || a > mu.cols()) throw InputError("action out of range");
    total += mu.row(i).maxCoeff() - mu(i, a - 1);
  }
  return total / static_cast<double>(mu.rows());
}

Eigen::Index argmax_row(const Eigen::Ref<const Vector>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index a = 1; a < row.size(); ++a)
    if (row(a) > row(best)) best = a;
  return best;
}

Matrix one_hot(std::span<const Action> actions, int num_actions) {
  Matrix p = Matrix::Zero(static_cast<Eigen::Index>(actions.size()), num_actions);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (actions[i] < 1 || actions[i] > num_actions) throw InputError("action out of range");
    p(static_cast<Eigen::Index>(i), actions[i] - 1) = 1.0;
  }
  return p;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  text = csv::trim(text);
  if (text == "inf" || text == "+inf" || text == "Inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf" || text == "-Inf") return -std::numeric_limits<double>::infinity();
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty())
    throw InputError("cannot parse number '" + std::string(text) + "'");
  return v;
}

}  // namespace rpl
