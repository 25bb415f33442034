#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "rpl/errors.hpp"
#include "rpl/nuisance.hpp"
#include "rpl/random.hpp"
#include "rpl/retarget.hpp"

using namespace rpl;

namespace {

NuisanceValues random_nuisance(RandomStream& rng, int n, int m, bool hetero, double spread = 1.0) {
  Matrix p(n, m);
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < m; ++a) p(i, a) = std::exp(spread * rng.normal());
    p.row(i) /= p.row(i).sum();
  }
  NuisanceValues nv = with_unit_variance(p, Matrix::Zero(n, m));
  if (hetero)
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < m; ++a) nv.outcome_variance(i, a) = rng.uniform(0.2, 3.0);
  return nv;
}

NuisanceValues binary_nuisance(const std::vector<double>& phi_plus) {
  Matrix p(phi_plus.size(), 2);
  for (std::size_t i = 0; i < phi_plus.size(); ++i) p.row(i) << 1 - phi_plus[i], phi_plus[i];
  return with_unit_variance(p, Matrix::Zero(phi_plus.size(), 2));
}

}  // namespace

TEST_CASE("omega: direct arithmetic and single action") {
  const auto nv = binary_nuisance({0.5});
  CHECK(omega_closed_form(nv, Vector::Ones(1), Matrix::Constant(1, 2, 0.5)) == doctest::Approx(1.0));

  NuisanceValues one = with_unit_variance(Matrix::Ones(3, 1), Matrix::Zero(3, 1));
  CHECK(omega_closed_form(one, Vector::Ones(3), Matrix::Ones(3, 1)) == 0.0);
}

TEST_CASE("omega: one-hot reference gives its own zeta plus the largest rival zeta") {
  RandomStream rng(2);
  const auto nv = random_nuisance(rng, 6, 3, true);
  const Matrix zeta = variance_ratio(nv);
  Matrix rho = Matrix::Zero(6, 3);
  double expect = 0.0;
  for (int i = 0; i < 6; ++i) {
    rho(i, i % 3) = 1.0;
    double rival = 0.0;
    for (int a = 0; a < 3; ++a)
      if (a != i % 3) rival = std::max(rival, zeta(i, a));
    expect += zeta(i, i % 3) + rival;
  }
  const double got = omega_closed_form(nv, Vector::Ones(6), rho);
  CHECK(got == doctest::Approx(expect / 6).epsilon(1e-12));
  CHECK(got >= 0.0);
}

TEST_CASE("omega closed form equals the vertex-policy supremum") {
  RandomStream rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const int m = 2 + trial % 3;
    const int k = 1 + trial % 6;
    const auto nv = random_nuisance(rng, k, m, true);
    Vector w(k);
    Matrix rho(k, m);
    for (int i = 0; i < k; ++i) {
      w(i) = rng.uniform(0.2, 2.0);
      for (int a = 0; a < m; ++a) rho(i, a) = rng.uniform(-0.5, 1.5);
    }
    const double closed = omega_closed_form(nv, w, rho);
    const double brute = oracle::vertex_sup(variance_ratio(nv), w, rho);
    CHECK(std::abs(closed - brute) <= 1e-10 * std::max(1.0, std::abs(brute)));
  }
}

TEST_CASE("omega: zero propensity is a singularity naming the row") {
  NuisanceValues nv = binary_nuisance({0.5, 1.0});
  Matrix xs(2, 1);
  xs << 0.25, 0.75;
  try {
    omega_closed_form(nv, Vector::Ones(2), Matrix::Constant(2, 2, 0.5), &xs);
    FAIL("expected singularity");
  } catch (const SingularityError& e) {
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
    CHECK(std::string(e.what()).find("0.75") != std::string::npos);
  }
}

TEST_CASE("optimal_binary: perfect overlap") {
  const auto r = optimal_binary(binary_nuisance({0.5, 0.5, 0.5}));
  CHECK(r.weight.isApprox(Vector::Ones(3)));
  CHECK(r.omega == doctest::Approx(1.0));
  CHECK(r.reference.isApprox(Matrix::Constant(3, 2, 0.5)));
}

TEST_CASE("optimal_binary: homoskedastic weights follow 1 - phi^2") {
  const auto r = optimal_binary(binary_nuisance({0.9, 0.5}));
  CHECK(r.weight(0) / r.weight(1) == doctest::Approx(0.36).epsilon(1e-12));
  // Omega = sigma^2 / (1 - E phi^2)
  CHECK(r.omega == doctest::Approx(1.0 / (1.0 - 0.5 * 0.64)).epsilon(1e-12));
}

TEST_CASE("optimal_binary: reference is exactly one half and m != 2 is a contract error") {
  RandomStream rng(8);
  const auto r = optimal_binary(random_nuisance(rng, 50, 2, true, 2.0));
  CHECK((r.reference.array() == 0.5).all());
  CHECK_THROWS_AS(optimal_binary(random_nuisance(rng, 5, 3, false)), ContractError);
}

TEST_CASE("optimal_binary: Omega formula and random-search optimality") {
  RandomStream rng(13);
  const auto nv = random_nuisance(rng, 40, 2, true, 1.5);
  const auto r = optimal_binary(nv);
  double inv = 0.0;
  for (int i = 0; i < 40; ++i) {
    const double phi = nv.propensity(i, 1) - nv.propensity(i, 0);
    inv += 1.0 / (nv.outcome_variance(i, 1) / (1 + phi) + nv.outcome_variance(i, 0) / (1 - phi));
  }
  CHECK(r.omega == doctest::Approx(0.5 / (inv / 40)).epsilon(1e-10));
  for (int t = 0; t < 100; ++t) {
    Vector w(40);
    for (int i = 0; i < 40; ++i) w(i) = std::exp(rng.normal());
    w = normalize_mean_one(w);
    CHECK(r.omega <= omega_closed_form(nv, w, r.reference) + 1e-12);
  }
}

TEST_CASE("optimal_multi: m = 3 uniform homoskedastic") {
  NuisanceValues nv = with_unit_variance(Matrix::Constant(1, 3, 1.0 / 3), Matrix::Zero(1, 3));
  const auto r = optimal_multi(nv);
  CHECK(r.xi(0) == doctest::Approx(1.0));
  CHECK(r.reference.isApprox(Matrix::Constant(1, 3, 1.0 / 3)));
  // sum zeta - (m-2) xi = 9 - 1
  CHECK(r.kappa(0) == doctest::Approx(8.0));
  CHECK(r.omega == doctest::Approx(2.0));
  // and it is the true minimum: Omega at the uniform reference by vertex enumeration
  CHECK(oracle::vertex_sup(variance_ratio(nv), Vector::Ones(1), r.reference) == doctest::Approx(2.0));
}

TEST_CASE("optimal_multi: m = 2 reduces to the binary result") {
  RandomStream rng(21);
  const auto nv = random_nuisance(rng, 30, 2, true, 1.5);
  const auto a = optimal_multi(nv);
  const auto b = optimal_binary(nv);
  CHECK((a.xi.array() == 0.0).all());
  CHECK((a.weight - b.weight).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((a.reference.array() == 0.5).all());
  const Matrix zeta = variance_ratio(nv);
  CHECK(a.kappa.isApprox(zeta.rowwise().sum()));
}

TEST_CASE("optimal_multi: Omega equals one quarter of the inverse mean inverse kappa") {
  RandomStream rng(34);
  for (int m : {2, 3, 5}) {
    const auto nv = random_nuisance(rng, 25, m, true);
    const auto r = optimal_multi(nv);
    const double expect = 0.25 / r.kappa.cwiseInverse().mean();
    CHECK(std::abs(r.omega - expect) <= 1e-10 * expect);
  }
}

TEST_CASE("optimal_multi: reference minimizes f on a grid (m = 3)") {
  RandomStream rng(55);
  for (int t = 0; t < 3; ++t) {
    const auto nv = random_nuisance(rng, 1, 3, true);
    const Matrix zeta = variance_ratio(nv);
    const auto r = optimal_multi(nv);
    const double z[3] = {zeta(0, 0), zeta(0, 1), zeta(0, 2)};
    const double rho[3] = {r.reference(0, 0), r.reference(0, 1), r.reference(0, 2)};
    const double at_rho = oracle::f3(z, rho);
    CHECK(at_rho == doctest::Approx(r.kappa(0) / 4).epsilon(1e-12));
    // no grid point does better (the grid cannot hit the kink exactly, so it is
    // only checked one-sided here)
    CHECK(at_rho <= oracle::grid_min_f3(z, 1e-2) + 1e-12);
  }
}

TEST_CASE("optimal_multi: reference is a distribution for m <= 3; violations are counted for larger m") {
  RandomStream rng(89);
  const auto r3 = optimal_multi(random_nuisance(rng, 200, 3, true, 2.0));
  CHECK(r3.reference.minCoeff() >= -1e-12);
  CHECK((r3.reference.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-10);
  CHECK(r3.reference_violations == 0);

  // zeta = (1, 1, 1, 100): xi = 2 / 3.01, rho(4) = (1 - 2/3.01 / 100)/2 ... but rho(1..3) stay positive;
  // zeta = (1, 100, 100, 100) pushes rho(1) below zero.
  NuisanceValues nv = with_unit_variance(Matrix::Constant(1, 4, 0.25), Matrix::Zero(1, 4));
  nv.outcome_variance.row(0) << 0.25, 25, 25, 25;
  const auto r4 = optimal_multi(nv);
  CHECK(r4.reference(0, 0) < 0.0);
  CHECK(r4.reference_violations == 1);
  CHECK(std::abs(r4.reference.row(0).sum() - 1.0) < 1e-12);
}

TEST_CASE("optimal_multi: nonpositive propensity is a singularity; tiny ones are clipped") {
  NuisanceValues nv = with_unit_variance(Matrix::Constant(2, 3, 1.0 / 3), Matrix::Zero(2, 3));
  nv.propensity.row(1) << 0.0, 0.5, 0.5;
  CHECK_THROWS_AS(optimal_multi(nv), SingularityError);
  nv.propensity.row(1) << 1e-9, 0.5, 0.5 - 1e-9;
  const auto r = optimal_multi(nv);
  CHECK(r.clipped == 1);
  CHECK(r.weight.allFinite());
}

TEST_CASE("Jensen: optimal weights beat uniform weights") {
  RandomStream rng(144);
  for (int t = 0; t < 20; ++t) {
    const auto nv = random_nuisance(rng, 30, 2 + t % 4, t % 2 == 0);
    const auto r = optimal_multi(nv);
    const double uniform = omega_closed_form(nv, Vector::Ones(30), r.reference);
    CHECK(r.omega < uniform - 1e-9);
  }
  NuisanceValues flat = with_unit_variance(Matrix::Constant(5, 3, 1.0 / 3), Matrix::Zero(5, 3));
  const auto r = optimal_multi(flat);
  CHECK(r.omega == doctest::Approx(omega_closed_form(flat, Vector::Ones(5), r.reference)));
}

TEST_CASE("bias_regularized: zero and huge padding") {
  RandomStream rng(233);
  const auto nv = random_nuisance(rng, 40, 3, true, 1.5);
  const auto base = optimal_multi(nv);
  const auto zero = bias_regularized(nv, 0.0);
  CHECK((zero.weight - base.weight).cwiseAbs().maxCoeff() <= 1e-12);
  const auto huge = bias_regularized(nv, 1e6);
  CHECK((huge.weight.array() - 1.0).abs().maxCoeff() <= 1e-6);
  CHECK(huge.reference.isApprox(base.reference));
  CHECK_THROWS_AS(bias_regularized(nv, -1.0), ContractError);
}

TEST_CASE("bias_regularized: binary c-form") {
  // phi(+) = 0.9 -> phi = 0.8, c = 2: (1 - phi^2) / (c + 1 - phi^2)
  const auto nv = binary_nuisance({0.9, 0.5});
  const double c = 2.0;
  const double lambda = std::sqrt(1.0 / c);
  CHECK(padding_c_from_lambda(lambda) == doctest::Approx(c));
  const auto r = bias_regularized(nv, lambda);
  const double w0 = 0.36 / 2.36, w1 = 1.0 / 3.0;
  CHECK(0.36 / 2.36 == doctest::Approx(0.15254).epsilon(1e-4));
  CHECK(r.weight(0) / r.weight(1) == doctest::Approx(w0 / w1).epsilon(1e-12));
}

TEST_CASE("bias_regularized: bias shrinks and Omega grows with lambda") {
  RandomStream rng(377);
  const auto nv = random_nuisance(rng, 60, 3, true, 1.5);
  double prev_b = std::numeric_limits<double>::infinity(), prev_o = 0.0;
  for (double lambda : {0.0, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0}) {
    const auto r = bias_regularized(nv, lambda);
    const double b = worst_case_bias(r.weight);
    CHECK(b <= prev_b + 1e-15);
    CHECK(r.omega >= prev_o - 1e-12);
    prev_b = b;
    prev_o = r.omega;
  }
}

TEST_CASE("worst_case_bias: arithmetic and duality probe") {
  CHECK(worst_case_bias(Vector::Ones(4)) == 0.0);
  Vector w(2);
  w << 0.5, 1.5;
  CHECK(worst_case_bias(w) == doctest::Approx(0.5));

  // |mean((w - 1) g)| <= B(w) for every g with mean(g^2) = 1, and g = (w - 1)/B attains it
  RandomStream rng(610);
  Vector v(20);
  for (int i = 0; i < 20; ++i) v(i) = std::exp(rng.normal());
  v = normalize_mean_one(v);
  const double b = worst_case_bias(v);
  double best = 0.0;
  for (int t = 0; t < 2000; ++t) {
    Vector g(20);
    for (int i = 0; i < 20; ++i) g(i) = rng.normal();
    g /= std::sqrt(g.squaredNorm() / 20);
    const double gap = std::abs((v.array() - 1.0).matrix().dot(g) / 20);
    CHECK(gap <= b + 1e-12);
    best = std::max(best, gap);
  }
  const Vector g = (v.array() - 1.0).matrix() / b;
  CHECK(std::abs((v.array() - 1.0).matrix().dot(g) / 20) == doctest::Approx(b).epsilon(1e-12));
  CHECK(best > 0.3 * b);
}

TEST_CASE("normalize_mean_one keeps constant vectors exact") {
  const Vector w = normalize_mean_one(Vector::Constant(7, 0.3));
  CHECK((w.array() == 1.0).all());
  CHECK_THROWS(normalize_mean_one(Vector::Constant(3, -1.0)));
}

TEST_CASE("diagnostics CSV layout") {
  const auto nv = binary_nuisance({0.5, 0.8});
  const auto r = optimal_multi(nv);
  Matrix xs(2, 2);
  xs << 0, 1, 2, 3;
  std::stringstream ss;
  write_diagnostics_csv(ss, xs, r);
  std::string header;
  std::getline(ss, header);
  CHECK(header == "x1,x2,w,rho_1,rho_2,kappa,xi");
  std::string line, last;
  int rows = 0;
  while (std::getline(ss, line)) {
    if (line.rfind("#", 0) == 0) last = line;
    else ++rows;
  }
  CHECK(rows == 2);
  CHECK(last.find("omega=") != std::string::npos);
  CHECK(last.find("worst_case_bias=") != std::string::npos);
}

TEST_CASE("oracle nuisance weights for the synthetic design") {
  DGPConfig dgp{1.0, 1.0, 3.5, 0, 0};
  Matrix xs(2, 2);
  xs << 0.0, 0.0, 0.5, -0.2;
  const auto nv = oracle_nuisance(dgp).evaluate(xs);
  const auto r = optimal_binary(nv);
  const double phi = 2 * normal_cdf(1.75) - 1;
  CHECK(r.weight(1) / r.weight(0) == doctest::Approx(1 - phi * phi).epsilon(1e-12));
}
