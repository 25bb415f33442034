#pragma once

#include <cmath>
#include <cstdint>

namespace rpl {

/// Two-action, two-covariate synthetic design.
///   X'' ~ Unif[-1,1]^2,  X'_j = sign(X''_j)|X''_j|^q1,  X_j = sign(X'_j)|X'_j|^q2
///   Y(-) = X'_1 + eps,  Y(+) = Y(-) + X'_1 + X'_2 + 1/4,  A = + w.p. Phi(beta X'_1)
/// Only X is observed. q1 shifts the covariate distribution, q2 controls how
/// far a linear rule in X is from the optimal rule, beta controls overlap.
struct DGPConfig {
  double q1 = 1.0;
  double q2 = 1.0;
  double beta = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

inline double signed_power(double v, double p) { return std::copysign(std::pow(std::abs(v), p), v); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace rpl
