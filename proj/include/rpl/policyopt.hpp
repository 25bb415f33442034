#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rpl/core.hpp"
#include "rpl/scores.hpp"

namespace rpl {

struct GridSearchConfig {
  int theta_steps = 720;
  bool include_infinite_intercepts = true;
  // Up to this many records, the midpoints of every cell between critical
  // angles are searched as well, which makes the search exact.
  std::size_t critical_angle_limit = 64;

  void validate() const;
};

/// Binary, two-covariate solution. `objective` is
/// sum_i sign(cos(theta) x_i1 + sin(theta) x_i2 - b) (gamma_i2 - gamma_i1).
struct BinarySolution {
  LinearPolicy policy = LinearPolicy::from_angle(0.0, 0.0);
  double objective = 0.0;
  double theta = 0.0;
  double offset = 0.0;
};

BinarySolution solve_binary_linear(const ScoreMatrix& scores, const Matrix& xs, const GridSearchConfig& config = {});
BinarySolution solve_binary_linear(const Vector& diff, const Matrix& xs, const GridSearchConfig& config = {});

// One pass over the angle grid shared by several score differences.
std::vector<BinarySolution> solve_binary_linear_batch(const std::vector<Vector>& diffs, const Matrix& xs,
                                                      const GridSearchConfig& config = {});

// sum_i sign(...) diff_i for a binary policy (sign 0 never occurs off ties).
double binary_objective(const Vector& diff, const Matrix& xs, const LinearPolicy& policy);

struct MultiSearchConfig {
  int random_starts = 50;
  std::uint64_t seed = 0;
  int max_sweeps = 200;
  // Instances with at most this many records are also solved by exact
  // branch and bound over assignments.
  std::size_t exact_limit = 12;
  GridSearchConfig lift_grid{};
};

struct MultiSolution {
  LinearPolicy policy = LinearPolicy::constant(1, 0, 1);
  std::vector<Action> assignment;
  double objective = 0.0;        // sum_i gamma_{i, policy(x_i)}
  bool certified = false;        // exact branch and bound was run
  bool search_optimal = false;   // local search alone reached the certified optimum
};

/// Linear argmax policy maximizing sum_i gamma_{i, pi(x_i)} with slopes in [-1, 1].
MultiSolution solve_multi_linear(const ScoreMatrix& scores, const Matrix& xs, const MultiSearchConfig& config = {});
MultiSolution solve_multi_linear(const Matrix& gamma, const Matrix& xs, const MultiSearchConfig& config = {});

double assignment_objective(const Matrix& gamma, std::span<const Action> assignment);

/// Parameters realizing `assignment` with unit margin, if any exist.
std::optional<LinearPolicy> realize_assignment(const Matrix& xs, std::span<const Action> assignment, int num_actions);
bool linearly_realizable(const Matrix& xs, std::span<const Action> assignment, int num_actions);

struct ExactSolution {
  std::vector<Action> assignment;
  double objective = 0.0;
};

/// Exact maximum over linearly realizable assignments by depth-first branch
/// and bound. Exponential; meant for small n.
ExactSolution exact_multi_linear(const Matrix& gamma, const Matrix& xs,
                                 const std::optional<ExactSolution>& incumbent = std::nullopt);

/// Every assignment of the rows of xs to m actions realizable by a linear
/// argmax rule (with unit margin). Exponential; meant for small n.
std::vector<std::vector<Action>> enumerate_linear_assignments(const Matrix& xs, int num_actions);

}  // namespace rpl
