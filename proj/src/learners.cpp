#include "rpl/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rpl/errors.hpp"
#include "rpl/random.hpp"

namespace rpl {

namespace {

Matrix with_intercept(const Matrix& xs) {
  Matrix design(xs.rows(), xs.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(xs.cols()) = xs;
  return design;
}

// Row-wise softmax of [0, logits].
Matrix softmax_with_reference(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols() + 1);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = std::max(0.0, logits.row(i).maxCoeff());
    p(i, 0) = std::exp(-top);
    for (Eigen::Index k = 0; k < logits.cols(); ++k) p(i, k + 1) = std::exp(logits(i, k) - top);
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Matrix softmax_rows(const Matrix& f) {
  Matrix p(f.rows(), f.cols());
  if (f.cols() == 2) {
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
      p(i, 1) = 1.0 / (1.0 + std::exp(f(i, 0) - f(i, 1)));
      p(i, 0) = 1.0 - p(i, 1);
    }
    return p;
  }
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    const double top = f.row(i).maxCoeff();
    p.row(i) = (f.row(i).array() - top).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double log_likelihood(const Matrix& probs, std::span<const Action> labels) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    ll += std::log(std::max(probs(i, labels[static_cast<std::size_t>(i)] - 1), 1e-300));
  return ll;
}

// Sorted row order per feature; computed once per training set.
std::vector<std::vector<Eigen::Index>> presort(const Matrix& xs) {
  std::vector<std::vector<Eigen::Index>> order(static_cast<std::size_t>(xs.cols()));
  for (Eigen::Index j = 0; j < xs.cols(); ++j) {
    auto& o = order[static_cast<std::size_t>(j)];
    o.resize(static_cast<std::size_t>(xs.rows()));
    std::iota(o.begin(), o.end(), Eigen::Index{0});
    std::stable_sort(o.begin(), o.end(), [&](Eigen::Index a, Eigen::Index b) { return xs(a, j) < xs(b, j); });
  }
  return order;
}

std::vector<char> draw_subsample(std::size_t n, double fraction, RandomStream& rng) {
  std::vector<char> mask(n, 1);
  if (fraction >= 1.0) return mask;
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n))));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t k = 0; k < keep; ++k) {
    const auto pick = k + static_cast<std::size_t>(rng.next() % (n - k));
    std::swap(idx[k], idx[pick]);
  }
  std::fill(mask.begin(), mask.end(), 0);
  for (std::size_t k = 0; k < keep; ++k) mask[idx[k]] = 1;
  return mask;
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gain = -1.0;
};

// Sampled rows of one feature in ascending order, with their values.
struct SortedSample {
  std::vector<Eigen::Index> rows;
  std::vector<double> values;
};

std::vector<SortedSample> sample_sorted(const Matrix& xs, const std::vector<std::vector<Eigen::Index>>& order,
                                        const std::vector<char>& mask) {
  std::vector<SortedSample> out(order.size());
  for (std::size_t j = 0; j < order.size(); ++j) {
    auto& s = out[j];
    s.rows.reserve(order[j].size());
    s.values.reserve(order[j].size());
    for (const Eigen::Index i : order[j]) {
      if (!mask[static_cast<std::size_t>(i)]) continue;
      s.rows.push_back(i);
      s.values.push_back(xs(i, static_cast<Eigen::Index>(j)));
    }
  }
  return out;
}

// Least-squares best split of `target` over the sampled rows.
Split best_split(const std::vector<SortedSample>& sample, const Vector& target, std::size_t min_leaf) {
  Split best;
  if (sample.empty()) return best;
  const std::size_t count = sample.front().rows.size();
  if (count < 2 * std::max<std::size_t>(min_leaf, 1)) return best;
  double total = 0.0;
  for (const Eigen::Index i : sample.front().rows) total += target(i);
  for (std::size_t j = 0; j < sample.size(); ++j) {
    const auto& rows = sample[j].rows;
    const auto& vals = sample[j].values;
    double left_sum = 0.0;
    for (std::size_t k = 0; k + 1 < count; ++k) {
      left_sum += target(rows[k]);
      const std::size_t left_n = k + 1;
      if (left_n < min_leaf || count - left_n < min_leaf || !(vals[k] < vals[k + 1])) continue;
      const double right_sum = total - left_sum;
      const double gain = left_sum * left_sum / static_cast<double>(left_n) +
                          right_sum * right_sum / static_cast<double>(count - left_n);
      if (gain > best.gain) {
        best.gain = gain;
        best.feature = static_cast<int>(j);
        best.threshold = 0.5 * (vals[k] + vals[k + 1]);
      }
    }
  }
  return best;
}

double stump_at(const Stump& s, const Matrix& xs, Eigen::Index i) {
  return (s.feature < 0 || xs(i, s.feature) <= s.threshold) ? s.left : s.right;
}

}  // namespace

// ---------------------------------------------------------------------------

SoftmaxRegression SoftmaxRegression::fit(const Matrix& xs, std::span<const Action> labels, int num_classes,
                                         const IrlsOptions& options) {
  if (num_classes < 2) throw FittingError("softmax regression needs at least 2 classes");
  if (static_cast<Eigen::Index>(labels.size()) != xs.rows() || xs.rows() == 0)
    throw FittingError("softmax regression: label count does not match rows");
  const Matrix design = with_intercept(xs);
  const Eigen::Index p = design.cols();
  const Eigen::Index k = num_classes - 1;
  const Eigen::Index dim = k * p;

  SoftmaxRegression model;
  model.coef_ = Matrix::Zero(k, p);
  auto probs_for = [&](const Matrix& coef) { return softmax_with_reference(design * coef.transpose()); };

  Matrix probs = probs_for(model.coef_);
  double ll = log_likelihood(probs, labels);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    model.iterations_ = iter + 1;
    Vector grad = Vector::Zero(dim);
    Matrix hess = Matrix::Zero(dim, dim);
    for (Eigen::Index i = 0; i < design.rows(); ++i) {
      const auto x = design.row(i).transpose();
      const Matrix xxt = x * x.transpose();
      const int y = labels[static_cast<std::size_t>(i)];
      for (Eigen::Index a = 0; a < k; ++a) {
        const double pa = probs(i, a + 1);
        grad.segment(a * p, p) += ((y == a + 2 ? 1.0 : 0.0) - pa) * x;
        for (Eigen::Index b = 0; b < k; ++b) {
          const double w = pa * ((a == b ? 1.0 : 0.0) - probs(i, b + 1));
          hess.block(a * p, b * p, p, p) += w * xxt;
        }
      }
    }
    hess.diagonal().array() += options.ridge;
    const Vector step = hess.ldlt().solve(grad);
    if (!step.allFinite()) throw FittingError("softmax regression: Newton step is not finite");
    Eigen::Map<const Matrix> step_mat(step.data(), p, k);
    double scale = 1.0;
    Matrix trial;
    Matrix trial_probs;
    double trial_ll = 0.0;
    while (true) {
      trial = model.coef_ + scale * step_mat.transpose();
      trial_probs = probs_for(trial);
      trial_ll = log_likelihood(trial_probs, labels);
      if (trial_ll >= ll - 1e-12 * std::abs(ll) || scale < 1e-6) break;
      scale *= 0.5;
    }
    const double change = scale * step.cwiseAbs().maxCoeff();
    model.coef_ = trial;
    probs = trial_probs;
    ll = trial_ll;
    if (change < options.tolerance) break;
  }
  if (!model.coef_.allFinite()) throw FittingError("softmax regression diverged");
  return model;
}

Matrix SoftmaxRegression::predict(const Matrix& xs) const {
  if (xs.cols() + 1 != coef_.cols()) throw InputError("softmax regression: covariate dimension mismatch");
  return softmax_with_reference(with_intercept(xs) * coef_.transpose());
}

// ---------------------------------------------------------------------------

BoostedStumpRegressor BoostedStumpRegressor::fit(const Matrix& xs, const Vector& ys, const BoostingOptions& options,
                                                 std::uint64_t seed) {
  if (xs.rows() == 0 || ys.size() != xs.rows()) throw FittingError("boosting: empty or mismatched data");
  BoostedStumpRegressor model;
  model.base_ = ys.sum() / static_cast<double>(ys.size());
  model.shrinkage_ = options.shrinkage;
  if (options.rounds <= 0) return model;

  const auto order = presort(xs);
  RandomStream rng(seed);
  Vector fitted = Vector::Constant(ys.size(), model.base_);
  model.stumps_.reserve(static_cast<std::size_t>(options.rounds));
  for (int round = 0; round < options.rounds; ++round) {
    const auto mask = draw_subsample(static_cast<std::size_t>(xs.rows()), options.subsample, rng);
    const Vector resid = ys - fitted;
    const Split split = best_split(sample_sorted(xs, order, mask), resid, options.min_leaf);
    Stump stump;
    double ls = 0.0, rs = 0.0;
    std::size_t ln = 0, rn = 0;
    for (Eigen::Index i = 0; i < xs.rows(); ++i) {
      if (!mask[static_cast<std::size_t>(i)]) continue;
      if (split.feature < 0 || xs(i, split.feature) <= split.threshold) {
        ls += resid(i);
        ++ln;
      } else {
        rs += resid(i);
        ++rn;
      }
    }
    stump.feature = split.feature;
    stump.threshold = split.threshold;
    stump.left = ln ? ls / static_cast<double>(ln) : 0.0;
    stump.right = rn ? rs / static_cast<double>(rn) : stump.left;
    for (Eigen::Index i = 0; i < xs.rows(); ++i) fitted(i) += options.shrinkage * stump_at(stump, xs, i);
    model.stumps_.push_back(stump);
  }
  return model;
}

Vector BoostedStumpRegressor::predict(const Matrix& xs) const {
  Vector out = Vector::Constant(xs.rows(), base_);
  for (const auto& s : stumps_)
    for (Eigen::Index i = 0; i < xs.rows(); ++i) out(i) += shrinkage_ * stump_at(s, xs, i);
  return out;
}

// ---------------------------------------------------------------------------

BoostedStumpClassifier BoostedStumpClassifier::fit(const Matrix& xs, std::span<const Action> labels,
                                                   int num_classes, const BoostingOptions& options,
                                                   std::uint64_t seed) {
  if (num_classes < 2) throw FittingError("boosted classifier needs at least 2 classes");
  if (xs.rows() == 0 || static_cast<Eigen::Index>(labels.size()) != xs.rows())
    throw FittingError("boosted classifier: empty or mismatched data");
  const Eigen::Index n = xs.rows();
  const Eigen::Index k = num_classes;

  BoostedStumpClassifier model;
  model.shrinkage_ = options.shrinkage;
  model.base_ = Vector::Zero(k);
  Matrix onehot = Matrix::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, labels[static_cast<std::size_t>(i)] - 1) = 1.0;
  for (Eigen::Index a = 0; a < k; ++a)
    model.base_(a) = std::log(std::max(onehot.col(a).mean(), 1e-6));
  if (options.rounds <= 0) return model;

  const auto order = presort(xs);
  RandomStream rng(seed);
  Matrix f = model.base_.transpose().replicate(n, 1);
  const double newton_scale = static_cast<double>(k - 1) / static_cast<double>(k);
  model.stumps_.reserve(static_cast<std::size_t>(options.rounds));
  for (int round = 0; round < options.rounds; ++round) {
    const auto mask = draw_subsample(static_cast<std::size_t>(n), options.subsample, rng);
    const auto sample = sample_sorted(xs, order, mask);
    const auto& rows = sample.front().rows;
    const Matrix probs = softmax_rows(f);
    std::vector<Stump> layer(static_cast<std::size_t>(k));
    // With two classes the second residual is the negated first, so its
    // stump is the mirror image.
    const Eigen::Index fitted_classes = k == 2 ? 1 : k;
    for (Eigen::Index a = 0; a < fitted_classes; ++a) {
      const Vector resid = onehot.col(a) - probs.col(a);
      const Split split = best_split(sample, resid, options.min_leaf);
      double lnum = 0.0, lden = 0.0, rnum = 0.0, rden = 0.0;
      for (const Eigen::Index i : rows) {
        const double r = resid(i);
        const double h = std::abs(r) * (1.0 - std::abs(r));
        if (split.feature < 0 || xs(i, split.feature) <= split.threshold) {
          lnum += r;
          lden += h;
        } else {
          rnum += r;
          rden += h;
        }
      }
      auto leaf = [&](double num, double den) {
        return newton_scale * num / std::max(den, 1e-12);
      };
      Stump& s = layer[static_cast<std::size_t>(a)];
      s.feature = split.feature;
      s.threshold = split.threshold;
      s.left = leaf(lnum, lden);
      s.right = split.feature < 0 ? s.left : leaf(rnum, rden);
    }
    if (k == 2) {
      layer[1] = layer[0];
      layer[1].left = -layer[0].left;
      layer[1].right = -layer[0].right;
    }
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index a = 0; a < k; ++a)
        f(i, a) += options.shrinkage * stump_at(layer[static_cast<std::size_t>(a)], xs, i);
    model.stumps_.push_back(std::move(layer));
  }
  return model;
}

Matrix BoostedStumpClassifier::predict(const Matrix& xs) const {
  Matrix f = base_.transpose().replicate(xs.rows(), 1);
  for (const auto& layer : stumps_)
    for (Eigen::Index i = 0; i < xs.rows(); ++i)
      for (std::size_t a = 0; a < layer.size(); ++a)
        f(i, static_cast<Eigen::Index>(a)) += shrinkage_ * stump_at(layer[a], xs, i);
  return softmax_rows(f);
}

// ---------------------------------------------------------------------------

LeastSquares LeastSquares::fit(const Matrix& xs, const Vector& ys) {
  const Matrix design = with_intercept(xs);
  if (design.rows() < design.cols())
    throw FittingError("least squares needs at least " + std::to_string(design.cols()) + " rows, got " +
                       std::to_string(design.rows()));
  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < design.cols()) throw FittingError("least squares design is rank-deficient");
  LeastSquares model;
  model.coef_ = qr.solve(ys);
  return model;
}

Vector LeastSquares::predict(const Matrix& xs) const {
  if (xs.cols() + 1 != coef_.size()) throw InputError("least squares: covariate dimension mismatch");
  return (xs * coef_.tail(coef_.size() - 1)).array() + coef_(0);
}

// ---------------------------------------------------------------------------

std::size_t clip_to_simplex(Matrix& probs, double floor) {
  std::size_t clipped = 0;
  const Eigen::Index m = probs.cols();
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    std::vector<char> fixed(static_cast<std::size_t>(m), 0);
    Vector raw = probs.row(i).transpose().cwiseMax(0.0);
    if (!raw.allFinite()) raw.setConstant(1.0);
    while (true) {
      double free_sum = 0.0;
      Eigen::Index n_fixed = 0;
      for (Eigen::Index a = 0; a < m; ++a) {
        if (fixed[static_cast<std::size_t>(a)]) ++n_fixed;
        else free_sum += raw(a);
      }
      const double budget = 1.0 - floor * static_cast<double>(n_fixed);
      bool changed = false;
      for (Eigen::Index a = 0; a < m; ++a) {
        if (fixed[static_cast<std::size_t>(a)]) {
          probs(i, a) = floor;
          continue;
        }
        const double v = free_sum > 0.0 ? budget * raw(a) / free_sum
                                        : budget / static_cast<double>(m - n_fixed);
        if (v < floor) {
          fixed[static_cast<std::size_t>(a)] = 1;
          changed = true;
        }
        probs(i, a) = v;
      }
      if (!changed) break;
    }
    for (char f : fixed) clipped += static_cast<std::size_t>(f);
  }
  return clipped;
}

}  // namespace rpl
