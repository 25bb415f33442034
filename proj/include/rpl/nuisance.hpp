#pragma once

#include <cstdint>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "rpl/core.hpp"
#include "rpl/dgp.hpp"
#include "rpl/learners.hpp"

namespace rpl {

/// Random assignment of n records to K folds; fold sizes differ by at most one.
class CrossFitPlan {
 public:
  static CrossFitPlan make(std::size_t n, int folds, std::uint64_t seed);

  int folds() const noexcept { return folds_; }
  std::size_t size() const noexcept { return assignment_.size(); }
  const std::vector<int>& assignment() const noexcept { return assignment_; }

  std::vector<std::size_t> members(int fold) const;
  std::vector<std::size_t> complement(int fold) const;

 private:
  int folds_ = 0;
  std::vector<int> assignment_;
};

enum class PropensityMethod { Logistic, MultinomialLogistic, BoostedStumps };
enum class OutcomeMethod { LeastSquares, BoostedStumps };

PropensityMethod parse_propensity_method(std::string_view name);
OutcomeMethod parse_outcome_method(std::string_view name);
std::string_view to_string(PropensityMethod m);
std::string_view to_string(OutcomeMethod m);

struct NuisanceOptions {
  IrlsOptions irls;
  BoostingOptions boosting;
  double propensity_floor = 1e-6;
};

struct PropensityFit {
  Matrix probs;             // n x m, out-of-fold
  std::size_t clipped = 0;  // entries raised to the floor
};

/// Out-of-fold propensities. Each record is scored by a model trained on the
/// other folds; rows are clipped to [floor, 1] and renormalized.
PropensityFit fit_propensity(const ObservationSet& data, const CrossFitPlan& plan, PropensityMethod method,
                             const NuisanceOptions& options = {}, std::uint64_t seed = 0);

/// Out-of-fold per-arm outcome regressions, n x m.
Matrix fit_outcome(const ObservationSet& data, const CrossFitPlan& plan, OutcomeMethod method,
                   const NuisanceOptions& options = {}, std::uint64_t seed = 0);

struct FittedNuisance {
  NuisanceValues values;  // unit variance
  std::size_t clipped = 0;
};

FittedNuisance fit_nuisance(const ObservationSet& data, const CrossFitPlan& plan, PropensityMethod pm,
                            OutcomeMethod om, const NuisanceOptions& options = {}, std::uint64_t seed = 0);

/// Closed-form nuisances of the synthetic design in terms of observed x, with
/// x'_j = sign(x_j)|x_j|^(1/q2). Action 1 is "-", action 2 is "+".
NuisanceModel oracle_nuisance(const DGPConfig& dgp);

// Oracle outcome table mu(-), mu(+) at each row of xs.
Matrix oracle_outcome(const Matrix& xs, double q2);

/// `i,phi_1..phi_m,mu_1..mu_m` (i is 0-based).
void write_nuisance_csv(std::ostream& out, const NuisanceValues& nv);
NuisanceValues read_nuisance_csv(std::istream& in);

}  // namespace rpl
