#include "rpl/policyopt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "rpl/errors.hpp"
#include "rpl/random.hpp"

namespace rpl {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kRelativeTie = 1e-9;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Ties between candidate objectives are resolved in favor of the first one
// found. The tolerance scales with the total score spread, so it is unchanged
// by per-record centering and scales with any positive rescaling.
double tie_tolerance(const Matrix& gamma) {
  return kRelativeTie * (gamma.rowwise().maxCoeff() - gamma.rowwise().minCoeff()).sum();
}

std::vector<double> search_angles(const Matrix& xs, const GridSearchConfig& config) {
  std::vector<double> thetas;
  thetas.reserve(static_cast<std::size_t>(config.theta_steps));
  for (int t = 0; t < config.theta_steps; ++t) thetas.push_back(kTwoPi * t / config.theta_steps);
  const auto n = static_cast<std::size_t>(xs.rows());
  if (n > config.critical_angle_limit || n < 2) return thetas;

  std::vector<double> critical;
  auto wrap = [](double a) {
    a = std::fmod(a, kTwoPi);
    return a < 0.0 ? a + kTwoPi : a;
  };
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < xs.rows(); ++j) {
      const double dx = xs(j, 0) - xs(i, 0);
      const double dy = xs(j, 1) - xs(i, 1);
      if (dx == 0.0 && dy == 0.0) continue;
      const double base = wrap(std::atan2(dx, -dy));
      critical.push_back(base);
      critical.push_back(wrap(base + std::numbers::pi));
    }
  }
  if (critical.empty()) return thetas;
  std::sort(critical.begin(), critical.end());
  critical.erase(std::unique(critical.begin(), critical.end()), critical.end());
  for (std::size_t k = 0; k + 1 < critical.size(); ++k) thetas.push_back(0.5 * (critical[k] + critical[k + 1]));
  thetas.push_back(wrap(0.5 * (critical.back() + critical.front() + kTwoPi)));
  return thetas;
}

struct BinaryState {
  double best = -kInf;
  double theta = 0.0;
  double offset = -kInf;
  double tol = 0.0;
  double total = 0.0;
};

}  // namespace

void GridSearchConfig::validate() const {
  if (theta_steps < 4) throw ContractError("theta_steps must be at least 4, got " + std::to_string(theta_steps));
}

double binary_objective(const Vector& diff, const Matrix& xs, const LinearPolicy& policy) {
  const auto actions = policy.actions(xs);
  double total = 0.0;
  for (Eigen::Index i = 0; i < diff.size(); ++i) total += (actions[static_cast<std::size_t>(i)] == 2 ? 1.0 : -1.0) * diff(i);
  return total;
}

std::vector<BinarySolution> solve_binary_linear_batch(const std::vector<Vector>& diffs, const Matrix& xs,
                                                      const GridSearchConfig& config) {
  config.validate();
  const Eigen::Index n = xs.rows();
  if (n == 0) throw InputError("binary policy search needs at least one record");
  if (xs.cols() != 2) throw ContractError("binary grid search needs 2 covariates, got " + std::to_string(xs.cols()));
  std::vector<BinaryState> states(diffs.size());
  for (std::size_t k = 0; k < diffs.size(); ++k) {
    if (diffs[k].size() != n) throw InputError("score difference length does not match covariates");
    if (!diffs[k].allFinite()) throw InputError("score differences must be finite");
    states[k].tol = kRelativeTie * diffs[k].cwiseAbs().sum();
    states[k].total = diffs[k].sum();
  }

  const auto thetas = search_angles(xs, config);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::vector<double> proj(static_cast<std::size_t>(n));
  auto before = [&](Eigen::Index a, Eigen::Index b) {
    const double pa = proj[static_cast<std::size_t>(a)], pb = proj[static_cast<std::size_t>(b)];
    return pa < pb || (pa == pb && a < b);
  };

  bool first = true;
  for (const double theta : thetas) {
    const double c = std::cos(theta), s = std::sin(theta);
    for (Eigen::Index i = 0; i < n; ++i) proj[static_cast<std::size_t>(i)] = angle_projection(c, s, xs(i, 0), xs(i, 1));
    if (first) {
      std::sort(order.begin(), order.end(), before);
      first = false;
    } else {
      // Consecutive angles leave the order nearly sorted.
      for (std::size_t k = 1; k < order.size(); ++k) {
        const Eigen::Index v = order[k];
        std::size_t j = k;
        while (j > 0 && before(v, order[j - 1])) {
          order[j] = order[j - 1];
          --j;
        }
        order[j] = v;
      }
    }
    for (std::size_t k = 0; k < diffs.size(); ++k) {
      const Vector& d = diffs[k];
      BinaryState& st = states[k];
      auto offer = [&](double value, double offset) {
        if (value > st.best + st.tol) {
          st.best = value;
          st.theta = theta;
          st.offset = offset;
        }
      };
      if (config.include_infinite_intercepts) offer(st.total, -kInf);
      double prefix = 0.0;
      for (std::size_t split = 1; split <= order.size(); ++split) {
        prefix += d(order[split - 1]);
        if (split == order.size()) {
          if (config.include_infinite_intercepts) offer(st.total - 2.0 * prefix, kInf);
          break;
        }
        const double lo = proj[static_cast<std::size_t>(order[split - 1])];
        const double hi = proj[static_cast<std::size_t>(order[split])];
        if (!(lo < hi)) continue;
        double mid = 0.5 * (lo + hi);
        if (!(mid < hi)) mid = lo;
        offer(st.total - 2.0 * prefix, mid);
      }
    }
  }

  std::vector<BinarySolution> out;
  out.reserve(diffs.size());
  for (std::size_t k = 0; k < diffs.size(); ++k) {
    BinarySolution sol;
    sol.theta = states[k].theta;
    sol.offset = states[k].offset;
    sol.policy = LinearPolicy::from_angle(sol.theta, sol.offset);
    sol.objective = binary_objective(diffs[k], xs, sol.policy);
    out.push_back(std::move(sol));
  }
  return out;
}

BinarySolution solve_binary_linear(const Vector& diff, const Matrix& xs, const GridSearchConfig& config) {
  return solve_binary_linear_batch({diff}, xs, config).front();
}

BinarySolution solve_binary_linear(const ScoreMatrix& scores, const Matrix& xs, const GridSearchConfig& config) {
  if (scores.num_actions() != 2)
    throw ContractError("binary grid search needs 2 actions, got " + std::to_string(scores.num_actions()));
  if (scores.size() != xs.rows()) throw InputError("score rows do not match covariates");
  return solve_binary_linear(Vector(scores.gamma.col(1) - scores.gamma.col(0)), xs, config);
}

double assignment_objective(const Matrix& gamma, std::span<const Action> assignment) {
  if (static_cast<Eigen::Index>(assignment.size()) != gamma.rows()) throw InputError("assignment length mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < gamma.rows(); ++i) total += gamma(i, assignment[static_cast<std::size_t>(i)] - 1);
  return total;
}

// ---------------------------------------------------------------------------
// Realizability: find theta_2..theta_m (theta_1 = 0) with
// (theta_z - theta_a) . (1, x_i) >= 1 for every record i and a != z_i.

namespace {

// Phase-I simplex with Bland's rule for A v >= 1, v free.
std::optional<Vector> feasible_point(const Matrix& a) {
  const Eigen::Index rows = a.rows(), p = a.cols();
  if (rows == 0) return Vector::Zero(p);
  const Eigen::Index cols = 2 * p + 2 * rows;  // v+, v-, surplus, artificial
  Matrix t = Matrix::Zero(rows, cols + 1);
  t.leftCols(p) = a;
  t.middleCols(p, p) = -a;
  for (Eigen::Index r = 0; r < rows; ++r) {
    t(r, 2 * p + r) = -1.0;
    t(r, 2 * p + rows + r) = 1.0;
    t(r, cols) = 1.0;
  }
  std::vector<Eigen::Index> basis(static_cast<std::size_t>(rows));
  for (Eigen::Index r = 0; r < rows; ++r) basis[static_cast<std::size_t>(r)] = 2 * p + rows + r;
  Vector cost = Vector::Zero(cols + 1);
  for (Eigen::Index r = 0; r < rows; ++r) cost -= t.row(r).transpose();
  for (Eigen::Index r = 0; r < rows; ++r) cost(2 * p + rows + r) = 0.0;

  constexpr double eps = 1e-11;
  for (int iter = 0; iter < 50000; ++iter) {
    Eigen::Index enter = -1;
    for (Eigen::Index j = 0; j < cols; ++j)
      if (cost(j) < -eps) {
        enter = j;
        break;
      }
    if (enter < 0) break;
    Eigen::Index leave = -1;
    double best_ratio = kInf;
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (t(r, enter) <= eps) continue;
      const double ratio = t(r, cols) / t(r, enter);
      if (ratio < best_ratio - 1e-14 ||
          (ratio <= best_ratio + 1e-14 && leave >= 0 &&
           basis[static_cast<std::size_t>(r)] < basis[static_cast<std::size_t>(leave)])) {
        best_ratio = std::min(best_ratio, ratio);
        leave = r;
      }
    }
    if (leave < 0) break;  // cannot happen in phase I
    t.row(leave) /= t(leave, enter);
    for (Eigen::Index r = 0; r < rows; ++r)
      if (r != leave && t(r, enter) != 0.0) t.row(r) -= t(r, enter) * t.row(leave);
    cost -= cost(enter) * t.row(leave).transpose();
    basis[static_cast<std::size_t>(leave)] = enter;
  }
  double infeasibility = 0.0;
  Vector v = Vector::Zero(p);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Eigen::Index b = basis[static_cast<std::size_t>(r)];
    if (b >= 2 * p + rows) infeasibility += t(r, cols);
    else if (b < p) v(b) += t(r, cols);
    else if (b < 2 * p) v(b - p) -= t(r, cols);
  }
  if (infeasibility > 1e-9) return std::nullopt;
  return v;
}

Matrix margin_constraints(const Matrix& xs, std::span<const Action> z, std::size_t count, int m) {
  const Eigen::Index d1 = xs.cols() + 1;
  Matrix a = Matrix::Zero(static_cast<Eigen::Index>(count) * (m - 1), (m - 1) * d1);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < count; ++i) {
    Vector f(d1);
    f(0) = 1.0;
    f.tail(d1 - 1) = xs.row(static_cast<Eigen::Index>(i)).transpose();
    const int label = z[i];
    for (int other = 1; other <= m; ++other) {
      if (other == label) continue;
      if (label >= 2) a.row(row).segment((label - 2) * d1, d1) += f.transpose();
      if (other >= 2) a.row(row).segment((other - 2) * d1, d1) -= f.transpose();
      ++row;
    }
  }
  return a;
}

bool prefix_realizable(const Matrix& xs, std::span<const Action> z, std::size_t count, int m) {
  return feasible_point(margin_constraints(xs, z, count, m)).has_value();
}

// Power-of-two rescaling so every slope lies in [-1, 1]; leaves the argmax
// at every x unchanged bit for bit.
void bound_slopes(Vector& b, Matrix& beta) {
  const double top = beta.size() ? beta.cwiseAbs().maxCoeff() : 0.0;
  if (!(top > 1.0) || !std::isfinite(top)) return;
  const double scale = std::ldexp(1.0, -static_cast<int>(std::ceil(std::log2(top))));
  b *= scale;
  beta *= scale;
  if (beta.cwiseAbs().maxCoeff() > 1.0) {
    b *= 0.5;
    beta *= 0.5;
  }
}

}  // namespace

std::optional<LinearPolicy> realize_assignment(const Matrix& xs, std::span<const Action> z, int m) {
  if (static_cast<Eigen::Index>(z.size()) != xs.rows()) throw InputError("assignment length mismatch");
  if (m < 1) throw ContractError("need at least one action");
  for (Action a : z)
    if (a < 1 || a > m) throw InputError("assignment action out of range");
  if (m == 1) return LinearPolicy::constant(1, static_cast<int>(xs.cols()), 1);
  const auto v = feasible_point(margin_constraints(xs, z, z.size(), m));
  if (!v) return std::nullopt;
  const Eigen::Index d1 = xs.cols() + 1;
  Vector b = Vector::Zero(m);
  Matrix beta = Matrix::Zero(m, xs.cols());
  for (int a = 2; a <= m; ++a) {
    b(a - 1) = (*v)((a - 2) * d1);
    beta.row(a - 1) = v->segment((a - 2) * d1 + 1, d1 - 1).transpose();
  }
  bound_slopes(b, beta);
  LinearPolicy policy(std::move(b), std::move(beta));
  const auto got = policy.actions(xs);
  if (!std::equal(got.begin(), got.end(), z.begin())) return std::nullopt;
  return policy;
}

bool linearly_realizable(const Matrix& xs, std::span<const Action> z, int m) {
  return realize_assignment(xs, z, m).has_value();
}

ExactSolution exact_multi_linear(const Matrix& gamma, const Matrix& xs, const std::optional<ExactSolution>& incumbent) {
  const Eigen::Index n = gamma.rows();
  const int m = static_cast<int>(gamma.cols());
  if (n == 0 || xs.rows() != n) throw InputError("exact search: scores and covariates disagree");
  const double tol = tie_tolerance(gamma);
  Vector suffix = Vector::Zero(n + 1);
  for (Eigen::Index i = n - 1; i >= 0; --i) suffix(i) = suffix(i + 1) + gamma.row(i).maxCoeff();
  std::vector<std::vector<Action>> preference(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& pref = preference[static_cast<std::size_t>(i)];
    pref.resize(static_cast<std::size_t>(m));
    std::iota(pref.begin(), pref.end(), 1);
    std::stable_sort(pref.begin(), pref.end(), [&](Action a, Action b) { return gamma(i, a - 1) > gamma(i, b - 1); });
  }

  ExactSolution best;
  best.objective = -kInf;
  if (incumbent) best = *incumbent;
  std::vector<Action> z(static_cast<std::size_t>(n), 1);
  auto dfs = [&](auto&& self, Eigen::Index i, double value) -> void {
    if (i == n) {
      if (value > best.objective + tol || best.assignment.empty()) {
        best.objective = value;
        best.assignment = z;
      }
      return;
    }
    if (!best.assignment.empty() && value + suffix(i) <= best.objective + tol) return;
    for (Action a : preference[static_cast<std::size_t>(i)]) {
      z[static_cast<std::size_t>(i)] = a;
      if (!prefix_realizable(xs, z, static_cast<std::size_t>(i) + 1, m)) continue;
      self(self, i + 1, value + gamma(i, a - 1));
    }
  };
  dfs(dfs, 0, 0.0);
  return best;
}

std::vector<std::vector<Action>> enumerate_linear_assignments(const Matrix& xs, int m) {
  if (m < 1) throw ContractError("need at least one action");
  const auto n = static_cast<std::size_t>(xs.rows());
  std::vector<std::vector<Action>> out;
  std::vector<Action> z(n, 1);
  auto dfs = [&](auto&& self, std::size_t i) -> void {
    if (i == n) {
      out.push_back(z);
      return;
    }
    for (Action a = 1; a <= m; ++a) {
      z[i] = a;
      if (m > 1 && !prefix_realizable(xs, z, i + 1, m)) continue;
      self(self, i + 1);
    }
  };
  dfs(dfs, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Multi-action local search

namespace {

struct Candidate {
  Vector b;
  Matrix beta;
  std::vector<Action> assignment;
  double value = -kInf;
};

Candidate evaluate(const Matrix& gamma, const Matrix& xs, Vector b, Matrix beta) {
  Candidate c;
  const LinearPolicy policy(b, beta);
  c.assignment = policy.actions(xs);
  c.value = assignment_objective(gamma, c.assignment);
  c.b = std::move(b);
  c.beta = std::move(beta);
  return c;
}

// Exact search along one coordinate: the chosen action at record i changes at
// most once as the coordinate moves, so the objective is piecewise constant
// with at most n breakpoints.
std::optional<double> best_coordinate_value(const Matrix& gamma, const Matrix& xs, const Candidate& cur, int action,
                                            int coord, double tol) {
  const Eigen::Index n = xs.rows();
  const int m = static_cast<int>(gamma.cols());
  const Matrix s = (xs * cur.beta.transpose()).rowwise() + cur.b.transpose();
  const double p_cur = coord < 0 ? cur.b(action) : cur.beta(action, coord);

  struct Event {
    double t;
    double delta;
  };
  std::vector<Event> events;
  events.reserve(static_cast<std::size_t>(n));
  double base = 0.0;  // objective as t -> -infinity
  for (Eigen::Index i = 0; i < n; ++i) {
    int other = -1;
    for (int a = 0; a < m; ++a) {
      if (a == action) continue;
      if (other < 0 || s(i, a) > s(i, other)) other = a;
    }
    const double u = coord < 0 ? 1.0 : xs(i, coord);
    const double g_self = gamma(i, action), g_other = gamma(i, other);
    if (u == 0.0) {
      const bool self = s(i, action) > s(i, other) || (s(i, action) == s(i, other) && action < other);
      base += self ? g_self : g_other;
      continue;
    }
    const double t = p_cur + (s(i, other) - s(i, action)) / u;
    if (!std::isfinite(t)) {
      base += cur.assignment[static_cast<std::size_t>(i)] - 1 == action ? g_self : g_other;
      continue;
    }
    if (u > 0.0) {
      base += g_other;
      events.push_back({t, g_self - g_other});
    } else {
      base += g_self;
      events.push_back({t, g_other - g_self});
    }
  }
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });

  const double target = cur.value + tol;
  std::optional<double> best_t;
  double best_v = target;
  auto offer = [&](double v, double t) {
    if (v > best_v) {
      best_v = v;
      best_t = t;
    }
  };
  if (events.empty()) return std::nullopt;
  offer(base, events.front().t - std::max(1.0, std::abs(events.front().t)));
  double v = base;
  for (std::size_t k = 0; k < events.size();) {
    const double t = events[k].t;
    while (k < events.size() && events[k].t == t) v += events[k++].delta;
    const double next = k < events.size() ? events[k].t : t + 2.0 * std::max(1.0, std::abs(t));
    double mid = 0.5 * (t + next);
    if (!(mid > t && mid < next)) continue;
    offer(v, mid);
  }
  return best_t;
}

Candidate local_search(const Matrix& gamma, const Matrix& xs, Candidate cur, int max_sweeps, double tol) {
  const int m = static_cast<int>(gamma.cols());
  const int d = static_cast<int>(xs.cols());
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool improved = false;
    for (int a = 0; a < m; ++a) {
      for (int coord = -1; coord < d; ++coord) {
        const auto t = best_coordinate_value(gamma, xs, cur, a, coord, tol);
        if (!t) continue;
        Vector b = cur.b;
        Matrix beta = cur.beta;
        (coord < 0 ? b(a) : beta(a, coord)) = *t;
        bound_slopes(b, beta);
        Candidate next = evaluate(gamma, xs, std::move(b), std::move(beta));
        if (next.value > cur.value + tol) {
          cur = std::move(next);
          improved = true;
        }
      }
    }
    if (!improved) break;
  }
  return cur;
}

}  // namespace

MultiSolution solve_multi_linear(const Matrix& gamma, const Matrix& xs, const MultiSearchConfig& config) {
  const Eigen::Index n = gamma.rows();
  const int m = static_cast<int>(gamma.cols());
  const int d = static_cast<int>(xs.cols());
  if (n == 0) throw InputError("policy search needs at least one record");
  if (xs.rows() != n) throw InputError("score rows do not match covariates");
  if (m < 1) throw ContractError("need at least one action");
  if (!gamma.allFinite() || !xs.allFinite()) throw InputError("scores and covariates must be finite");
  const double tol = tie_tolerance(gamma);

  std::vector<Candidate> starts;
  for (int a = 0; a < m; ++a) {
    Vector b = Vector::Zero(m);
    b(a) = 1.0;
    starts.push_back(evaluate(gamma, xs, std::move(b), Matrix::Zero(m, d)));
  }
  if (d == 2 && m >= 2) {
    for (int a = 0; a < m; ++a) {
      for (int other = a + 1; other < m; ++other) {
        const Vector diff = gamma.col(other) - gamma.col(a);
        const auto lift = solve_binary_linear(diff, xs, config.lift_grid);
        if (!std::isfinite(lift.offset)) continue;
        Vector b = Vector::Constant(m, -1.0);
        Matrix beta = Matrix::Zero(m, d);
        b(a) = 0.0;
        b(other) = -lift.offset;
        beta(other, 0) = std::cos(lift.theta);
        beta(other, 1) = std::sin(lift.theta);
        starts.push_back(evaluate(gamma, xs, std::move(b), std::move(beta)));
      }
    }
  }
  const double radius = 1.0 + xs.cwiseAbs().maxCoeff();
  for (int r = 0; r < config.random_starts; ++r) {
    RandomStream rng(derive_seed(config.seed, {0x6d756c7469, static_cast<std::uint64_t>(r)}));
    Vector b(m);
    Matrix beta(m, d);
    for (int a = 0; a < m; ++a) {
      b(a) = rng.uniform(-radius, radius);
      for (int j = 0; j < d; ++j) beta(a, j) = rng.uniform(-1.0, 1.0);
    }
    starts.push_back(evaluate(gamma, xs, std::move(b), std::move(beta)));
  }

  Candidate best;
  for (auto& s : starts) {
    Candidate c = m > 1 ? local_search(gamma, xs, std::move(s), config.max_sweeps, tol) : std::move(s);
    if (c.value > best.value + tol) best = std::move(c);
  }

  MultiSolution sol;
  sol.policy = LinearPolicy(best.b, best.beta);
  sol.assignment = best.assignment;
  sol.objective = best.value;
  if (static_cast<std::size_t>(n) <= config.exact_limit && m > 1) {
    const auto exact = exact_multi_linear(gamma, xs, ExactSolution{best.assignment, best.value});
    sol.certified = true;
    sol.search_optimal = !(exact.objective > best.value + tol);
    if (!sol.search_optimal) {
      if (auto policy = realize_assignment(xs, exact.assignment, m)) {
        sol.policy = *policy;
        sol.assignment = policy->actions(xs);
        sol.objective = assignment_objective(gamma, sol.assignment);
      }
    }
  }
  return sol;
}

MultiSolution solve_multi_linear(const ScoreMatrix& scores, const Matrix& xs, const MultiSearchConfig& config) {
  return solve_multi_linear(scores.gamma, xs, config);
}

}  // namespace rpl
