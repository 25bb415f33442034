#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <sstream>

#include "oracles.hpp"
#include "rpl/errors.hpp"
#include "rpl/nuisance.hpp"
#include "rpl/random.hpp"
#include "rpl/retarget.hpp"
#include "rpl/scores.hpp"
#include "rpl/simulate.hpp"

using namespace rpl;

namespace {

Matrix optimal_rule(const Matrix& xs) {
  Matrix p = Matrix::Zero(xs.rows(), 2);
  for (Eigen::Index i = 0; i < xs.rows(); ++i) p(i, xs(i, 0) + xs(i, 1) + 0.25 > 0 ? 1 : 0) = 1.0;
  return p;
}

Matrix fixed_rule(const Matrix& xs) {
  Matrix p = Matrix::Zero(xs.rows(), 2);
  for (Eigen::Index i = 0; i < xs.rows(); ++i) p(i, xs(i, 1) > 0.2 ? 1 : 0) = 1.0;
  return p;
}

std::set<std::vector<int>> argmax_set(const Matrix& gamma, const std::vector<std::vector<int>>& candidates) {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& z : candidates) best = std::max(best, oracle::assignment_value(gamma, z));
  const double tol = 1e-12 * (1.0 + gamma.cwiseAbs().sum());
  std::set<std::vector<int>> out;
  for (const auto& z : candidates)
    if (oracle::assignment_value(gamma, z) >= best - tol) out.insert(z);
  return out;
}

}  // namespace

TEST_CASE("DR collapses to DM when residuals vanish") {
  const DGPConfig dgp{1.0, 1.0, 2.0, 200, 3};
  const auto data = draw_training(dgp);
  const auto nv = oracle_nuisance(dgp).evaluate(data.covariates());
  Vector y(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) y(i) = nv.outcome_mean(i, data.actions()[i] - 1);
  const auto s = build_scores(data.with_rewards(y), nv, ScoreMethod::DR);
  CHECK(s.gamma == nv.outcome_mean);
}

TEST_CASE("IPW arithmetic and unweighted form") {
  Matrix xs = Matrix::Zero(1, 2);
  const ObservationSet data(xs, {2}, Vector::Constant(1, 3.0), 2);
  Matrix p(1, 2);
  p << 0.25, 0.75;
  const auto nv = with_unit_variance(p, Matrix::Zero(1, 2));
  const auto s = build_scores(data, nv, ScoreMethod::IPW);
  CHECK(s.gamma(0, 0) == 0.0);
  CHECK(s.gamma(0, 1) == doctest::Approx(4.0));
  const auto u = build_scores(data, nv, ScoreMethod::Unweighted);
  // difference is the +-1 coded A * Y
  CHECK(u.gamma(0, 1) - u.gamma(0, 0) == 3.0);
  const ObservationSet three(xs, {2}, Vector::Constant(1, 3.0), 3);
  CHECK_THROWS_AS(build_scores(three, with_unit_variance(Matrix::Constant(1, 3, 1.0 / 3), Matrix::Zero(1, 3)),
                               ScoreMethod::Unweighted),
                  ContractError);
}

TEST_CASE("propensities below the floor are counted and clipped") {
  Matrix xs = Matrix::Zero(2, 1);
  const ObservationSet data(xs, {1, 2}, Vector::Ones(2), 2);
  Matrix p(2, 2);
  p << 1e-9, 1 - 1e-9, 0.5, 0.5;
  const auto s = build_scores(data, with_unit_variance(p, Matrix::Zero(2, 2)), ScoreMethod::IPW);
  CHECK(s.clipped == 1);
  CHECK(s.gamma(0, 0) == doctest::Approx(1e6));
}

TEST_CASE("estimate_value: DM collapse and IPW unrolled") {
  const DGPConfig dgp{1.0, 1.0, 1.0, 300, 4};
  const auto data = draw_training(dgp);
  const auto nv = oracle_nuisance(dgp).evaluate(data.covariates());
  const Matrix pi = optimal_rule(data.covariates());
  const auto dm = build_scores(data, nv, ScoreMethod::DM);
  double expect = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) expect += pi(i, 1) > 0 ? nv.outcome_mean(i, 1) : nv.outcome_mean(i, 0);
  CHECK(estimate_value(dm, pi) == doctest::Approx(expect / data.size()).epsilon(1e-12));

  const Matrix observed = one_hot(data.actions(), 2);
  const auto ipw = build_scores(data, nv, ScoreMethod::IPW);
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) s += data.rewards()(i) / nv.propensity(i, data.actions()[i] - 1);
  CHECK(estimate_value(ipw, observed) == doctest::Approx(s / data.size()).epsilon(1e-12));
}

TEST_CASE("DR with oracle nuisances is unbiased for the policy value") {
  const DGPConfig base{1.0, 1.0, 2.0, 500, 0};
  const TestSet test = draw_test(1.0, 1.0, 100000, 17);
  const double truth = policy_value(fixed_rule(test.xs), test.mu);
  std::vector<double> est;
  for (int r = 0; r < 1000; ++r) {
    DGPConfig dgp = base;
    dgp.seed = 1000 + r;
    const auto data = draw_training(dgp);
    const auto nv = oracle_nuisance(dgp).evaluate(data.covariates());
    est.push_back(estimate_value(build_scores(data, nv, ScoreMethod::DR), fixed_rule(data.covariates())));
  }
  const double se = std::sqrt(oracle::sample_var(est) / est.size());
  CHECK(std::abs(oracle::mean(est) - truth) < 3 * se);
}

TEST_CASE("IPW, DR and DM agree in expectation under oracle nuisances") {
  const DGPConfig base{1.0, 1.0, 1.0, 200, 0};
  std::vector<double> ipw, dr, dm;
  for (int r = 0; r < 2000; ++r) {
    DGPConfig dgp = base;
    dgp.seed = 50000 + r;
    const auto data = draw_training(dgp);
    const auto nv = oracle_nuisance(dgp).evaluate(data.covariates());
    const Matrix pi = fixed_rule(data.covariates());
    ipw.push_back(estimate_value(build_scores(data, nv, ScoreMethod::IPW), pi));
    dr.push_back(estimate_value(build_scores(data, nv, ScoreMethod::DR), pi));
    dm.push_back(estimate_value(build_scores(data, nv, ScoreMethod::DM), pi));
  }
  auto se = [](const std::vector<double>& v) { return std::sqrt(oracle::sample_var(v) / v.size()); };
  auto close = [&](const std::vector<double>& a, const std::vector<double>& b) {
    return std::abs(oracle::mean(a) - oracle::mean(b)) < 3 * std::hypot(se(a), se(b));
  };
  CHECK(close(ipw, dr));
  CHECK(close(ipw, dm));
  CHECK(close(dr, dm));
}

TEST_CASE("retargeting multipliers") {
  Matrix p(3, 2);
  p << 0.5, 0.5, 0.5, 0.5, 0.5, 0.5;
  auto nv = with_unit_variance(p, Matrix::Zero(3, 2));
  const Vector w = retargeting_multiplier(nv, {RetargetMode::BinaryHomoskedastic, 0.0});
  CHECK((w.array() == w(0)).all());

  auto nv3 = with_unit_variance(Matrix::Constant(4, 3, 1.0 / 3), Matrix::Zero(4, 3));
  const Vector w3 = retargeting_multiplier(nv3, {RetargetMode::MultiHomoskedastic, 0.0});
  CHECK(w3(0) == doctest::Approx(1.0 / 8.0));
  CHECK((w3.array() == w3(0)).all());

  RandomStream rng(3);
  Matrix q(50, 2);
  for (int i = 0; i < 50; ++i) {
    const double t = rng.uniform(0.01, 0.99);
    q.row(i) << 1 - t, t;
  }
  auto nvq = with_unit_variance(q, Matrix::Zero(50, 2));
  const Vector b = retargeting_multiplier(nvq, {RetargetMode::BinaryHomoskedastic, 0.0});
  const Vector mh = retargeting_multiplier(nvq, {RetargetMode::MultiHomoskedastic, 0.0});
  const Vector opt = retargeting_multiplier(nvq, {RetargetMode::Optimal, 0.0});
  const Vector ratio = b.cwiseQuotient(mh);
  CHECK((ratio.array() - 4.0).abs().maxCoeff() <= 1e-12);
  CHECK((normalize_mean_one(b) - opt).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK_THROWS_AS(retargeting_multiplier(nv3, {RetargetMode::BinaryHomoskedastic, 0.0}), ContractError);
}

TEST_CASE("padding parameter c runs from no retargeting to full retargeting") {
  RandomStream rng(5);
  Matrix q(40, 2);
  for (int i = 0; i < 40; ++i) {
    const double t = rng.uniform(0.02, 0.98);
    q.row(i) << 1 - t, t;
  }
  const auto nv = with_unit_variance(q, Matrix::Zero(40, 2));
  const Vector none = retargeting_multiplier(nv, {RetargetMode::BiasC, 0.0});
  CHECK((none.array() == 1.0).all());
  const Vector full = retargeting_multiplier(nv, {RetargetMode::BinaryHomoskedastic, 0.0});
  const Vector inf = retargeting_multiplier(nv, {RetargetMode::BiasC, std::numeric_limits<double>::infinity()});
  CHECK(inf == full);
  double prev = 0.0;
  for (double c : {1e-3, 1e-1, 1.0, 10.0, 1e3, 1e6}) {
    const Vector w = retargeting_multiplier(nv, {RetargetMode::BiasC, c});
    // distance of the shape from full retargeting shrinks as c grows
    const double dist = (normalize_mean_one(w) - normalize_mean_one(full)).cwiseAbs().maxCoeff();
    if (c > 1e-3) CHECK(dist <= prev + 1e-15);
    prev = dist;
    // c-form equals lambda padding with c = 1/lambda^2
    const Vector lam = retargeting_multiplier(nv, {RetargetMode::BiasLambda, 1.0 / std::sqrt(c)});
    CHECK((normalize_mean_one(w) - lam).cwiseAbs().maxCoeff() <= 1e-10);
  }
  CHECK(prev < 1e-5);
}

TEST_CASE("retargeting scales rows and never mixes records") {
  const DGPConfig dgp{1.0, 1.0, 3.0, 200, 9};
  const auto data = draw_training(dgp);
  const auto nv = oracle_nuisance(dgp).evaluate(data.covariates());
  const auto s = build_scores(data, nv, ScoreMethod::DR);
  for (auto mode : {RetargetMode::BinaryHomoskedastic, RetargetMode::Optimal, RetargetMode::BiasC}) {
    const auto r = apply_retargeting(s, nv, {mode, 2.0});
    CHECK(r.retargeted);
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double k = r.gamma(i, 0) / s.gamma(i, 0);
      CHECK(r.gamma(i, 1) / s.gamma(i, 1) == doctest::Approx(k).epsilon(1e-12));
      CHECK(k == doctest::Approx(r.multiplier(i)).epsilon(1e-12));
    }
  }
  const auto c = apply_retargeting(s, nv, {RetargetMode::BiasC, 2.0});
  REQUIRE(c.padding.has_value());
  CHECK(*c.padding == 2.0);
}

TEST_CASE("normalize: arithmetic, idempotence and zero scores") {
  ScoreMatrix s;
  s.gamma.resize(2, 2);
  s.gamma << 0, 2, 4, 0;
  s.multiplier = Vector::Ones(2);
  const auto n = normalize(s);
  CHECK(n.divisor == 3.0);
  const auto nn = normalize(n);
  CHECK((nn.gamma - n.gamma).cwiseAbs().maxCoeff() <= 1e-12);
  ScoreMatrix z;
  z.gamma = Matrix::Constant(3, 2, 1.5);
  z.multiplier = Vector::Ones(3);
  CHECK_THROWS_AS(normalize(z), DegenerateInputError);
}

TEST_CASE("normalization and centering leave the best halfplane policy unchanged") {
  RandomStream rng(21);
  for (int t = 0; t < 100; ++t) {
    const int n = 3 + t % 6;
    Matrix xs(n, 2), g(n, 2);
    for (int i = 0; i < n; ++i) {
      xs.row(i) << rng.uniform(-1, 1), rng.uniform(-1, 1);
      g.row(i) << rng.uniform(-2, 2), rng.uniform(-2, 2);
    }
    const auto labelings = oracle::halfplane_labelings(xs);
    ScoreMatrix s;
    s.gamma = g;
    s.multiplier = Vector::Ones(n);
    const auto base = argmax_set(g, labelings);
    CHECK(argmax_set(normalize(s).gamma, labelings) == base);
    Matrix centered = g;
    for (int i = 0; i < n; ++i) centered.row(i).array() += rng.uniform(-5, 5);
    CHECK(argmax_set(centered, labelings) == base);
  }
}

TEST_CASE("scores CSV layout") {
  ScoreMatrix s;
  s.gamma.resize(1, 3);
  s.gamma << 1, 2, 3;
  s.multiplier = Vector::Constant(1, 0.5);
  std::stringstream ss;
  write_scores_csv(ss, s);
  CHECK(ss.str() == "i,gamma_1,gamma_2,gamma_3,weight_multiplier\n0,1,2,3,0.5\n");
}
