#include "hhrf/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hhrf {

Eigen::Index argmax_abs(const VectorXd& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  }
  return best;
}

bool orient(VectorXd& v) {
  if (v.size() == 0) return false;
  if (v[argmax_abs(v)] < 0.0) {
    v = -v;
    return true;
  }
  return false;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

MatrixXd symmetrize(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

double min_eigenvalue(const MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(a), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

bool is_positive_definite(const MatrixXd& a, double floor) {
  MatrixXd shifted = a;
  shifted.diagonal().array() -= floor;
  Eigen::LLT<MatrixXd> llt(shifted);
  return llt.info() == Eigen::Success;
}

MatrixXd pinv_symmetric(const MatrixXd& a, double rel_tol, int* rank) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(a));
  const VectorXd& ev = es.eigenvalues();
  const double cut = rel_tol * std::max(ev.cwiseAbs().maxCoeff(), 0.0);
  VectorXd inv = VectorXd::Zero(ev.size());
  int kept = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] > cut && ev[i] > 0.0) {
      inv[i] = 1.0 / ev[i];
      ++kept;
    }
  }
  if (rank) *rank = kept;
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

MatrixXd gram_pinv(const MatrixXd& X, double rel_tol, int* rank) {
  Eigen::BDCSVD<MatrixXd> svd(X, Eigen::ComputeThinV);
  const VectorXd& s = svd.singularValues();
  const double cut = s.size() > 0 ? rel_tol * s[0] : 0.0;
  VectorXd inv = VectorXd::Zero(s.size());
  int kept = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s[i] > cut && s[i] > 0.0) {
      inv[i] = 1.0 / (s[i] * s[i]);
      ++kept;
    }
  }
  if (rank) *rank = kept;
  return svd.matrixV() * inv.asDiagonal() * svd.matrixV().transpose();
}

MatrixXd block_diagonal(const std::vector<MatrixXd>& blocks) {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.rows();
  MatrixXd out = MatrixXd::Zero(n, n);
  Eigen::Index off = 0;
  for (const auto& b : blocks) {
    out.block(off, off, b.rows(), b.cols()) = b;
    off += b.rows();
  }
  return out;
}

MatrixXd kron_identity_right(const VectorXd& beta, int k) {
  const auto l = beta.size();
  MatrixXd out = MatrixXd::Zero(l * k, k);
  for (Eigen::Index i = 0; i < l; ++i) out.block(i * k, 0, k, k).diagonal().setConstant(beta[i]);
  return out;
}

MatrixXd kron_identity_left(int l, const VectorXd& gamma) {
  const auto k = gamma.size();
  MatrixXd out = MatrixXd::Zero(l * k, l);
  for (int i = 0; i < l; ++i) out.block(i * k, i, k, 1) = gamma;
  return out;
}

VectorXd kron(const VectorXd& a, const VectorXd& b) {
  VectorXd out(a.size() * b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a[i] * b;
  return out;
}

}  // namespace hhrf
