#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rpl/core.hpp"
#include "rpl/dgp.hpp"
#include "rpl/nuisance.hpp"
#include "rpl/policyopt.hpp"
#include "rpl/scores.hpp"

namespace rpl {

/// n records from the synthetic design with covariate power config.q1.
/// Action 2 ("+") is taken with probability Phi(beta X'_1).
ObservationSet draw_training(const DGPConfig& config);

struct TestSet {
  Matrix xs;
  Matrix mu;  // oracle mu(-), mu(+) at each row
};

TestSet draw_test(double q1, double q2, std::size_t size, std::uint64_t seed);

/// One of {well, mis} x {stationary, inward, outward}, e.g. "well-stationary".
struct ScenarioSpec {
  std::string name;
  double q1_test = 1.0;
  double q2 = 1.0;

  static ScenarioSpec parse(std::string_view name);
};

/// A score construction plus optional retargeting. Labels: "dr", "dr+rt"
/// (full retargeting), "dr+c" (bias-regularized, one result per c value).
struct MethodSpec {
  ScoreMethod score = ScoreMethod::DR;
  enum class Weighting { None, Full, Padded } weighting = Weighting::None;

  static MethodSpec parse(std::string_view label);
  std::string label() const;
};

struct NuisanceSpec {
  bool oracle = false;
  PropensityMethod propensity = PropensityMethod::BoostedStumps;
  OutcomeMethod outcome = OutcomeMethod::BoostedStumps;
  int folds = 5;
  NuisanceOptions options{};
};

struct SimulationConfig {
  std::vector<ScenarioSpec> scenarios;
  std::vector<MethodSpec> methods;
  std::vector<std::size_t> n_grid;
  std::vector<double> beta_grid;
  std::vector<double> c_grid;
  std::size_t replicates = 200;
  std::size_t test_size = 100000;
  NuisanceSpec nuisance{};
  GridSearchConfig grid{};
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::function<void(const std::string&)> progress;
  // Sees every score matrix before normalization (replicate seed, method
  // label, c). Called from worker threads.
  std::function<void(std::uint64_t, const std::string&, std::optional<double>, const ScoreMatrix&)> on_scores;

  void validate() const;
};

struct ScenarioResult {
  std::string scenario;
  std::string method;
  bool retargeted = false;
  std::size_t n = 0;
  double beta = 0.0;
  std::optional<double> c;
  double q1_test = 1.0;
  double q2 = 1.0;
  double mean_regret = 0.0;
  double se = 0.0;
  std::size_t replicates = 0;  // successful replicates
  std::size_t failures = 0;
  std::vector<double> regrets;              // per successful replicate, in replicate order
  std::vector<std::uint64_t> failed_seeds;  // training seeds of failed replicates
  std::vector<std::string> failure_messages;
};

// Seed of replicate r at one grid point.
std::uint64_t replicate_seed(std::uint64_t master, const ScenarioSpec& scenario, std::size_t n, double beta,
                             std::size_t replicate);

/// Runs every (scenario, n, beta, method[, c]) combination. Results are
/// ordered by scenario, n, beta, method, c and do not depend on `workers`.
std::vector<ScenarioResult> run_simulation(const SimulationConfig& config);

// Single scenario convenience wrapper.
std::vector<ScenarioResult> run_scenario(const ScenarioSpec& scenario, SimulationConfig config);

/// Log-spaced grid with `count` points from lo to hi inclusive.
std::vector<double> log_grid(double lo, double hi, std::size_t count);
std::vector<std::size_t> log_grid_sizes(std::size_t lo, std::size_t hi, std::size_t count);

// `scenario,method,retargeted,n,beta,c,q1_test,q2,mean_regret,se,replicates,failures`
void write_results_csv(std::ostream& out, const std::vector<ScenarioResult>& results);

}  // namespace rpl
