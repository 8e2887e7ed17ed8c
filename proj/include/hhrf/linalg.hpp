#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

namespace hhrf {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Flips the sign of `v` so that its largest-magnitude entry is positive.
/// Ties resolve to the first index. Returns true when a flip happened.
bool orient(VectorXd& v);

/// Index of the largest-magnitude entry (first on ties).
Eigen::Index argmax_abs(const VectorXd& v);

double median(std::vector<double> values);

/// (A + A') / 2
MatrixXd symmetrize(const MatrixXd& a);

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const MatrixXd& a);

/// True when A - floor*I admits a Cholesky factorization.
bool is_positive_definite(const MatrixXd& a, double floor = 0.0);

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix; eigenvalues below
/// rel_tol * max eigenvalue are treated as zero. `rank` receives the kept count.
MatrixXd pinv_symmetric(const MatrixXd& a, double rel_tol, int* rank = nullptr);

/// Singular values of a design below this fraction of the largest count as zero.
inline constexpr double kRankTol = 1e-8;

/// (X'X)^+ from the SVD of X. `rank` receives the kept count.
MatrixXd gram_pinv(const MatrixXd& X, double rel_tol = kRankTol, int* rank = nullptr);

/// Block-diagonal assembly of square blocks.
MatrixXd block_diagonal(const std::vector<MatrixXd>& blocks);

/// Kronecker products with an identity, used for beta (x) I_K and I_L (x) gamma.
MatrixXd kron_identity_right(const VectorXd& beta, int k);  // beta (x) I_K : (L*K) x K
MatrixXd kron_identity_left(int l, const VectorXd& gamma);  // I_L (x) gamma : (L*K) x L

/// vec(beta (x) gamma)
VectorXd kron(const VectorXd& a, const VectorXd& b);

inline std::span<const double> as_span(const VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

}  // namespace hhrf
