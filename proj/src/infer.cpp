#include "hhrf/infer.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace hhrf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

MatrixXd inverse_spd(const MatrixXd& A, bool* ok) {
  Eigen::LLT<MatrixXd> llt(symmetrize(A));
  const bool good = llt.info() == Eigen::Success && A.size() > 0 && A.diagonal().minCoeff() > 0.0;
  if (ok) *ok = good;
  if (!good) return MatrixXd::Constant(A.rows(), A.cols(), kNaN);
  return symmetrize(llt.solve(MatrixXd::Identity(A.rows(), A.cols())));
}

TestResult missing_result() {
  TestResult r;
  r.stat = kNaN;
  r.p = kNaN;
  r.missing = true;
  return r;
}

}  // namespace

double normal_upper_tail(double z) {
  if (std::isnan(z)) return kNaN;
  if (z == std::numeric_limits<double>::infinity()) return 0.0;
  if (z == -std::numeric_limits<double>::infinity()) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>(), z));
}

double chi2_upper_tail(double x, double df) {
  if (std::isnan(x)) return kNaN;
  if (x <= 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(df), x));
}

double student_t_upper_tail(double t, double df) {
  if (std::isnan(t)) return kNaN;
  if (t == std::numeric_limits<double>::infinity()) return 0.0;
  if (t == -std::numeric_limits<double>::infinity()) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::students_t_distribution<double>(df), t));
}

MatrixXd beta_covariance(const MatrixXd& M, const VectorXd& gamma, bool* ok) {
  const int L = static_cast<int>(M.rows() / gamma.size());
  const MatrixXd IG = kron_identity_left(L, gamma);
  return inverse_spd(IG.transpose() * M * IG, ok);
}

MatrixXd gamma_covariance(const MatrixXd& M, const VectorXd& beta, bool* ok) {
  const int K = static_cast<int>(M.rows() / beta.size());
  const MatrixXd BI = kron_identity_right(beta, K);
  return inverse_spd(BI.transpose() * M * BI, ok);
}

MatrixXd beta_covariance(const VoxelFit& fit, bool* ok) { return beta_covariance(fit.M, fit.gamma, ok); }
MatrixXd gamma_covariance(const VoxelFit& fit, bool* ok) { return gamma_covariance(fit.M, fit.beta, ok); }

TestResult contrast_test(const VectorXd& beta, const MatrixXd& cov, const VectorXd& c) {
  if (c.size() != beta.size()) throw std::invalid_argument("contrast length must equal the condition count");
  if (!(c.norm() > 0.0)) throw std::invalid_argument("contrast must be nonzero");
  const double var = c.dot(cov * c);
  if (!(var > 0.0) || !std::isfinite(var) || !beta.allFinite()) return missing_result();
  TestResult r;
  r.stat = c.dot(beta) / std::sqrt(var);
  r.p = normal_upper_tail(r.stat);
  return r;
}

TestResult contrast_test(const VoxelFit& fit, const VectorXd& c) {
  if (fit.status != FitStatus::ok) return missing_result();
  bool ok = false;
  const MatrixXd cov = beta_covariance(fit, &ok);
  if (!ok) return missing_result();
  return contrast_test(fit.beta, cov, c);
}

TestResult shape_chi2(const MatrixXd& M, const VectorXd& beta, const VectorXd& gamma, const VectorXd& gamma_ref) {
  const auto K = gamma.size();
  if (gamma_ref.size() != K) throw std::invalid_argument("reference shape has the wrong length");
  const MatrixXd BI = kron_identity_right(beta, static_cast<int>(K));
  const MatrixXd prec = BI.transpose() * M * BI;
  if (!beta.allFinite() || !(prec.diagonal().minCoeff() > 0.0)) return missing_result();
  const VectorXd diff = gamma - gamma_ref;
  TestResult r;
  r.df = static_cast<double>(K);
  r.stat = diff.dot(prec * diff);
  r.p = chi2_upper_tail(r.stat, r.df);
  return r;
}

TestResult shape_chi2(const VoxelFit& fit, const VectorXd& gamma_ref) {
  if (fit.status != FitStatus::ok) return missing_result();
  return shape_chi2(fit.M, fit.beta, fit.gamma, gamma_ref);
}

TestResult shape_chi2_penalized(const MatrixXd& M, const VectorXd& beta, const VectorXd& gamma, double C,
                                const MatrixXd& P, double n_lambda, const VectorXd& gamma_ref) {
  const auto K = gamma.size();
  if (gamma_ref.size() != K) throw std::invalid_argument("reference shape has the wrong length");
  const MatrixXd BI = kron_identity_right(beta, static_cast<int>(K));
  const MatrixXd A = symmetrize(BI.transpose() * M * BI);
  if (!beta.allFinite() || !gamma.allFinite() || !(A.diagonal().minCoeff() > 0.0)) return missing_result();
  const MatrixXd Q = MatrixXd::Identity(K, K) - gamma * gamma.transpose();
  const MatrixXd H = symmetrize(Q * (A + n_lambda * P + C * MatrixXd::Identity(K, K)) * Q);
  const MatrixXd J = pinv_symmetric(H, 1e-12);
  const MatrixXd cov = symmetrize(J * Q * A * Q * J);
  int rank = 0;
  const MatrixXd prec = pinv_symmetric(cov, 1e-10, &rank);
  if (rank == 0) return missing_result();
  const VectorXd diff = Q * (gamma - gamma_ref);
  TestResult r;
  r.df = rank;
  r.stat = std::max(diff.dot(prec * diff), 0.0);
  r.p = chi2_upper_tail(r.stat, r.df);
  return r;
}

TestResult pilot_wald(const VectorXd& score, const MatrixXd& middle) {
  TestResult r;
  const MatrixXd mid = symmetrize(middle);
  int rank = 0;
  const MatrixXd pinv = pinv_symmetric(mid, 1e-10, &rank);
  if (rank == 0) return missing_result();
  r.stat = score.dot(pinv * score);
  r.df = rank;
  r.pseudo_inverse = rank < score.size();
  r.stat = std::max(r.stat, 0.0);
  r.p = chi2_upper_tail(r.stat, r.df);
  return r;
}

TestResult pilot_activation_test(const PilotFit& pilot, const std::vector<SubjectDesign>& designs,
                                 const std::vector<MatrixXd>& V_hat, const MatrixXd& P) {
  if (designs.size() != V_hat.size()) throw std::invalid_argument("need one covariance per subject");
  const auto KL = pilot.h_hat.size();
  const int L = static_cast<int>(KL / P.rows());
  const int n = static_cast<int>(designs.size());
  MatrixXd bread = n * pilot.lambda0 * penalty_blocks(P, L);
  MatrixXd middle = MatrixXd::Zero(KL, KL);
  for (std::size_t j = 0; j < designs.size(); ++j) {
    const MatrixXd R = projector(designs[j].Phi);
    const MatrixXd RX = R * designs[j].X;
    bread += designs[j].X.transpose() * RX;
    middle += RX.transpose() * V_hat[j] * RX;
  }
  // h' (B^-1 Mid B^-1)^-1 h = (B h)' Mid^-1 (B h)
  return pilot_wald(symmetrize(bread) * pilot.h_hat, middle);
}

FdrResult fdr_mask(const std::vector<double>& pvals, double q) {
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("q must lie in (0, 1)");
  FdrResult res;
  res.mask.assign(pvals.size(), false);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < pvals.size(); ++i)
    if (!std::isnan(pvals[i])) idx.push_back(i);
  res.n_tested = static_cast<int>(idx.size());
  if (idx.empty()) return res;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return pvals[a] < pvals[b]; });
  const double m = static_cast<double>(idx.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (pvals[idx[i]] <= q * static_cast<double>(i + 1) / m) k = i + 1;
  }
  if (k == 0) return res;
  res.p_star = pvals[idx[k - 1]];
  for (std::size_t i = 0; i < pvals.size(); ++i) {
    if (!std::isnan(pvals[i]) && pvals[i] <= res.p_star) {
      res.mask[i] = true;
      ++res.n_rejected;
    }
  }
  return res;
}

}  // namespace hhrf
