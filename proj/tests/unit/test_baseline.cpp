#include "hhrf/baseline.hpp"
#include "hhrf/infer.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace hhrf;

TEST_CASE("OLS recovers an exact multiple of the regressor") {
  std::mt19937_64 rng(1);
  const int T = 100;
  MatrixXd reg(T, 2);
  reg.col(0) = oracle::random_vector(T, rng);
  reg.col(1) = oracle::random_vector(T, rng);
  const MatrixXd Phi = build_nuisance(T, 1.0, 1);
  const OlsModel m = make_ols_model(reg, Phi);
  REQUIRE_FALSE(m.collinear);
  const VectorXd y = 2.5 * reg.col(0) - 0.5 * reg.col(1) + Phi * VectorXd::Constant(2, 4.0);
  const VectorXd b = glm_ols_subject(m, y);
  CHECK(b[0] == doctest::Approx(2.5).epsilon(1e-10));
  CHECK(b[1] == doctest::Approx(-0.5).epsilon(1e-10));
  // Data orthogonal to the partialled regressors gives zero.
  const MatrixXd Z = m.Z;
  VectorXd r = oracle::random_vector(T, rng);
  r -= Z * (Z.transpose() * Z).ldlt().solve(Z.transpose() * r);
  r = r - Phi * (Phi.transpose() * r);
  CHECK(glm_ols_subject(m, r).norm() < 1e-10);
}

TEST_CASE("collinear regressors are flagged") {
  const int T = 50;
  MatrixXd reg = MatrixXd::Ones(T, 1);
  const MatrixXd Phi = build_nuisance(T, 1.0, 1);
  const OlsModel m = make_ols_model(reg, Phi);
  CHECK(m.collinear);
  CHECK(std::isnan(glm_ols_subject(m, VectorXd::Ones(T))[0]));
}

TEST_CASE("group t-test") {
  std::vector<double> b;
  for (int j = 0; j < 15; ++j) b.push_back(0.1 * j - 0.3);
  const GroupTTest t = group_ttest(b);
  CHECK(t.df == 14);
  double mean = 0, ss = 0;
  for (double v : b) mean += v;
  mean /= 15;
  for (double v : b) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / 14);
  CHECK(t.mean == doctest::Approx(mean));
  CHECK(t.sd == doctest::Approx(sd));
  CHECK(t.t == doctest::Approx(mean / (sd / std::sqrt(15.0))));
  CHECK(t.p == doctest::Approx(student_t_upper_tail(t.t, 14)));
  const GroupTTest d = group_ttest(std::vector<double>(15, 0.7));
  CHECK(d.degenerate);
  CHECK(std::isinf(d.t));
  CHECK(d.p == 0.0);
  CHECK_THROWS(group_ttest({1.0}));
}

TEST_CASE("canonical regressors are the design times the canonical weights") {
  std::mt19937_64 rng(3);
  MatrixXd X(20, 6);
  for (int c = 0; c < 6; ++c) X.col(c) = oracle::random_vector(20, rng);
  const VectorXd w = oracle::random_vector(3, rng);
  const MatrixXd R = canonical_regressors(X, w, 2);
  CHECK((R.col(0) - X.leftCols(3) * w).norm() < 1e-12);
  CHECK((R.col(1) - X.rightCols(3) * w).norm() < 1e-12);
}
