#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rpl/core.hpp"

namespace rpl {

struct IrlsOptions {
  int max_iterations = 100;
  double tolerance = 1e-8;  // max absolute coefficient change
  double ridge = 1e-8;
};

/// Multinomial logistic regression on [1, x], fitted by Newton/IRLS with
/// class 1 as the reference. With m = 2 this is ordinary logistic regression.
class SoftmaxRegression {
 public:
  static SoftmaxRegression fit(const Matrix& xs, std::span<const Action> labels, int num_classes,
                               const IrlsOptions& options = {});
  Matrix predict(const Matrix& xs) const;

  const Matrix& coefficients() const noexcept { return coef_; }  // (m-1) x (d+1)
  int iterations() const noexcept { return iterations_; }

 private:
  Matrix coef_;
  int iterations_ = 0;
};

struct BoostingOptions {
  int rounds = 200;
  double shrinkage = 0.1;
  double subsample = 0.5;
  std::size_t min_leaf = 10;
};

struct Stump {
  int feature = -1;  // -1: no split, both sides share `left`
  double threshold = 0.0;
  double left = 0.0;   // x[feature] <= threshold
  double right = 0.0;  // x[feature] >  threshold
  double eval(const Eigen::Ref<const Vector>& x) const {
    return (feature < 0 || x(feature) <= threshold) ? left : right;
  }
};

/// Gradient boosting with depth-1 trees on squared loss.
class BoostedStumpRegressor {
 public:
  static BoostedStumpRegressor fit(const Matrix& xs, const Vector& ys, const BoostingOptions& options,
                                   std::uint64_t seed);
  Vector predict(const Matrix& xs) const;

  double base() const noexcept { return base_; }
  const std::vector<Stump>& stumps() const noexcept { return stumps_; }

 private:
  double base_ = 0.0;
  double shrinkage_ = 0.0;
  std::vector<Stump> stumps_;
};

/// Multiclass gradient boosting (softmax deviance, one stump per class per
/// round, Newton leaf values).
class BoostedStumpClassifier {
 public:
  static BoostedStumpClassifier fit(const Matrix& xs, std::span<const Action> labels, int num_classes,
                                    const BoostingOptions& options, std::uint64_t seed);
  Matrix predict(const Matrix& xs) const;

 private:
  Vector base_;
  double shrinkage_ = 0.0;
  std::vector<std::vector<Stump>> stumps_;  // [round][class]
};

/// Ordinary least squares on [1, x]. Throws FittingError when rank-deficient.
class LeastSquares {
 public:
  static LeastSquares fit(const Matrix& xs, const Vector& ys);
  Vector predict(const Matrix& xs) const;
  const Vector& coefficients() const noexcept { return coef_; }

 private:
  Vector coef_;
};

// Clips each row to [floor, 1] and renormalizes so rows sum to 1 while every
// entry stays >= floor. Returns the number of entries raised to the floor.
std::size_t clip_to_simplex(Matrix& probs, double floor);

}  // namespace rpl
