#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

#include "rpl/core.hpp"

namespace rpl {

enum class ScoreMethod { Unweighted, IPW, DM, DR };

ScoreMethod parse_score_method(std::string_view name);
std::string_view to_string(ScoreMethod m);

enum class RetargetMode {
  None,
  BinaryHomoskedastic,  // 1 - phi^2 with phi = phi(+) - phi(-)
  MultiHomoskedastic,   // (sum_a 1/phi(a) - (m-2)^2)^-1
  Optimal,              // optimal_multi weights under the supplied variances
  BiasLambda,           // bias_regularized(lambda)
  BiasC,                // padding parameter c: 0 is no retargeting, +inf is full
};

struct RetargetSpec {
  RetargetMode mode = RetargetMode::None;
  double parameter = 0.0;  // lambda or c
};

RetargetMode parse_retarget_mode(std::string_view name);
std::string_view to_string(RetargetMode m);

/// Per-record, per-action scores. The learning objective of a policy z is
/// sum_i sum_a z_ia gamma_ia.
struct ScoreMatrix {
  Matrix gamma;
  ScoreMethod method = ScoreMethod::DR;
  bool retargeted = false;
  std::optional<double> padding;  // c, when bias-regularized
  Vector multiplier;              // row scaling applied by retargeting (ones if none)
  double divisor = 1.0;           // normalization constant applied so far
  std::size_t clipped = 0;        // propensities raised to the floor while building

  Eigen::Index size() const noexcept { return gamma.rows(); }
  int num_actions() const noexcept { return static_cast<int>(gamma.cols()); }
};

/// IPW 1{A=a}Y/phi, DM mu, DR mu + 1{A=a}(Y-mu)/phi, and for m = 2 the
/// unweighted 1{A=a}Y (whose action difference is the +-1 coded A*Y).
ScoreMatrix build_scores(const ObservationSet& data, const NuisanceValues& nuisance, ScoreMethod method);

/// Row multipliers computed from the supplied (typically fitted) nuisances.
Vector retargeting_multiplier(const NuisanceValues& nuisance, const RetargetSpec& spec);

ScoreMatrix apply_retargeting(const ScoreMatrix& scores, const NuisanceValues& nuisance, const RetargetSpec& spec);

/// Divides by the mean per-record score range (for m = 2, mean |gamma_2 - gamma_1|).
ScoreMatrix normalize(const ScoreMatrix& scores);

/// (1/n) sum_i sum_a pi(a|x_i) gamma_ia.
double estimate_value(const ScoreMatrix& scores, const Matrix& policy_probs);
double estimate_value(const ScoreMatrix& scores, const PolicyDistribution& policy, const ObservationSet& data);

/// `i,gamma_1..gamma_m,weight_multiplier`.
void write_scores_csv(std::ostream& out, const ScoreMatrix& scores);

}  // namespace rpl
