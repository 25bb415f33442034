#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rpl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Actions are 1-based: {1, ..., m}. Column a-1 of any n x m matrix holds action a.
using Action = int;

// Evaluates a per-x quantity on every row of an n x d matrix, returning n x m.
using BatchFn = std::function<Matrix(const Matrix&)>;

inline constexpr double kSimplexTolerance = 1e-10;

/// Logged data: n records of (covariates, action, reward). Immutable after
/// construction.
class ObservationSet {
 public:
  ObservationSet(Matrix covariates, std::vector<Action> actions, Vector rewards, int num_actions);

  // Header `x1,...,xd,action,reward`. num_actions = 0 infers m from the data.
  static ObservationSet load_csv(const std::filesystem::path& path, int num_actions = 0);
  static ObservationSet read_csv(std::istream& in, int num_actions = 0);
  void write_csv(std::ostream& out) const;
  void save_csv(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return actions_.size(); }
  int num_actions() const noexcept { return num_actions_; }
  int dim() const noexcept { return static_cast<int>(covariates_.cols()); }

  const Matrix& covariates() const noexcept { return covariates_; }
  const std::vector<Action>& actions() const noexcept { return actions_; }
  const Vector& rewards() const noexcept { return rewards_; }

  ObservationSet subset(std::span<const std::size_t> rows) const;
  ObservationSet with_rewards(Vector rewards) const;

 private:
  Matrix covariates_;
  std::vector<Action> actions_;
  Vector rewards_;
  int num_actions_;
};

/// A stochastic policy x -> Delta^m, evaluated in batches.
class PolicyDistribution {
 public:
  PolicyDistribution(int num_actions, BatchFn probs);

  static PolicyDistribution from_actions(int num_actions,
                                         std::function<std::vector<Action>(const Matrix&)> choose);
  // Pointwise argmax of a per-x value function (lowest index on ties).
  static PolicyDistribution greedy(int num_actions, BatchFn values);

  int num_actions() const noexcept { return num_actions_; }

  // Returns n x m probabilities; throws InputError if a row is not a distribution.
  Matrix probs(const Matrix& xs) const;

 private:
  int num_actions_;
  BatchFn probs_;
};

// Projection used by every angle-form computation, so solver and policy agree bit for bit.
inline double angle_projection(double c, double s, double x1, double x2) { return c * x1 + s * x2; }
inline bool angle_treats(double c, double s, double offset, double x1, double x2) {
  return angle_projection(c, s, x1, x2) > offset;
}

struct AngleForm {
  double theta;   // in [0, 2pi)
  double offset;  // b; may be +-infinity
};

/// Deterministic linear rule: action at x is argmax_a (b_a + beta_a^T x), ties to
/// the lowest action index.
class LinearPolicy {
 public:
  LinearPolicy(Vector intercepts, Matrix slopes);

  // Binary, two-covariate form: treat (action 2) iff cos(theta) x1 + sin(theta) x2 > b.
  static LinearPolicy from_angle(double theta, double offset);
  static LinearPolicy constant(int num_actions, int dim, Action action);

  int num_actions() const noexcept { return static_cast<int>(intercepts_.size()); }
  int dim() const noexcept { return static_cast<int>(slopes_.cols()); }
  const Vector& intercepts() const noexcept { return intercepts_; }
  const Matrix& slopes() const noexcept { return slopes_; }
  const std::optional<AngleForm>& angle_form() const noexcept { return angle_; }

  Action action_at(const Eigen::Ref<const Vector>& x) const;
  std::vector<Action> actions(const Matrix& xs) const;
  Matrix one_hot(const Matrix& xs) const;
  PolicyDistribution distribution() const;

  // `action,intercept,slope_1,...,slope_d`, one row per action.
  void write(std::ostream& out) const;
  static LinearPolicy read(std::istream& in);

  bool operator==(const LinearPolicy& other) const;

 private:
  Vector intercepts_;
  Matrix slopes_;
  std::optional<AngleForm> angle_;
};

/// phi(a|x), mu(a|x), sigma^2(a|x) evaluated on a fixed set of rows.
struct NuisanceValues {
  Matrix propensity;
  Matrix outcome_mean;
  Matrix outcome_variance;

  std::size_t size() const noexcept { return static_cast<std::size_t>(propensity.rows()); }
  int num_actions() const noexcept { return static_cast<int>(propensity.cols()); }
};

/// Closed-form (oracle) or user-provided nuisance functions. An empty
/// outcome_variance means homoskedastic sigma^2 = 1.
struct NuisanceModel {
  int num_actions = 0;
  BatchFn propensity;
  BatchFn outcome_mean;
  BatchFn outcome_variance;

  NuisanceValues evaluate(const Matrix& xs) const;
};

// Fills a missing variance block with the homoskedastic default.
NuisanceValues with_unit_variance(Matrix propensity, Matrix outcome_mean);

double policy_value(const Matrix& policy_probs, const Matrix& mu,
                    const std::optional<Vector>& weights = std::nullopt);
double policy_value(const PolicyDistribution& policy, const BatchFn& mu, const Matrix& test_xs,
                    const std::optional<Vector>& weights = std::nullopt);

double regret(const Matrix& policy_probs, const Matrix& mu);
double regret(const PolicyDistribution& policy, const BatchFn& mu, const Matrix& test_xs);
// Fast path for deterministic rules on a precomputed outcome table.
double regret(std::span<const Action> chosen, const Matrix& mu);

// Index of the row maximum, lowest index on ties (0-based).
Eigen::Index argmax_row(const Eigen::Ref<const Vector>& row);
Matrix one_hot(std::span<const Action> actions, int num_actions);

// Shortest round-trip text for a double ("inf", "-inf", "nan" for non-finite).
std::string format_double(double v);
double parse_double(std::string_view text);

}  // namespace rpl
