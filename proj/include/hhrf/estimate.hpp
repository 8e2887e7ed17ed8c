#pragma once

#include "hhrf/design.hpp"
#include "hhrf/noise.hpp"

#include <memory>
#include <vector>

namespace hhrf {

// ---------------------------------------------------------------------------
// Pilot fit

struct PilotFit {
  VectorXd h_hat;               // K*L
  std::vector<VectorXd> d_hat;  // per subject
  VectorXd beta0;               // per-condition norms of h_hat
  VectorXd beta0_signed;        // norms signed by agreement with gamma0
  VectorXd gamma0;              // unit, oriented
  double lambda0 = 0.0;
  bool has_shape = true;
};

/// Penalized least squares over subjects with the penalty n * lambda0 * (I_L (x) P).
/// `lambda0` is used as given.
PilotFit pls_pilot(const std::vector<VectorXd>& y, const std::vector<SubjectDesign>& designs, const MatrixXd& P,
                   double lambda0);

/// Splits h into per-condition norms and a common unit shape.
void pilot_shape(const VectorXd& h, int K, int L, PilotFit& out);

/// I_L (x) P
MatrixXd penalty_blocks(const MatrixXd& P, int L);

struct EffectPrediction {
  VectorXd xi;
  VectorXd eps;
};

/// Least-squares random-effect prediction with a pseudoinverse fallback.
EffectPrediction predict_effects(const VectorXd& r, const MatrixXd& X);

// ---------------------------------------------------------------------------
// Random-effect covariance

/// Voxel-independent quantities for subjects that share a design and AR model.
struct GroupGeometry {
  int n_subjects = 1;
  int T = 0;
  MatrixXd XtWX;      // X' V_eps^-1 X
  MatrixXd XtX;
  MatrixXd XtX_pinv;
  MatrixXd XtVX;      // X' V_eps X
  double logdet_veps = 0.0;
};

/// Per-voxel sufficient statistics of the residuals r_j within one group.
struct EffectGroup {
  std::shared_ptr<const GroupGeometry> geo;
  MatrixXd U;      // sum_j (X'W r_j)(X'W r_j)'
  MatrixXd Z;      // sum_j (X' r_j)(X' r_j)'
  double c = 0.0;  // sum_j r_j' W r_j
};

std::shared_ptr<GroupGeometry> make_group_geometry(const MatrixXd& X, const ArParams& noise, int T, int n_subjects);

/// One group per subject, for callers holding raw residuals.
std::vector<EffectGroup> effect_groups(const std::vector<VectorXd>& residuals, const std::vector<MatrixXd>& X,
                                       const std::vector<ArParams>& noise);

struct EffectParams {
  VectorXd sigma2;             // per condition
  std::vector<VectorXd> rho;   // per condition, lags 0..K-1

  int L() const { return static_cast<int>(sigma2.size()); }
};

EffectParams independent_effects(const VectorXd& sigma2, int K);

/// blockdiag(sigma2_l T_l)
MatrixXd effect_covariance(const EffectParams& params);

/// -2 log-likelihood of the residuals under V = X G X' + V_eps, including n T ln(2 pi).
double neg2_loglik(const std::vector<EffectGroup>& groups, const EffectParams& params);

struct LoglikGradient {
  VectorXd d_sigma2;              // per condition
  std::vector<VectorXd> d_rho;    // per condition, lags 1..K-1
};

LoglikGradient neg2_loglik_gradient(const std::vector<EffectGroup>& groups, const EffectParams& params);

/// Profiled EM objective for one condition and its gradient in rho(1..K-1).
double profiled_q(const VectorXd& rho, const MatrixXd& C, int n, double floor = kPdFloor);
VectorXd profiled_q_gradient(const VectorXd& rho, const MatrixXd& C, int n);

/// Working-independence start: sigma2_l = sum_j |xi_jl|^2 / (nK), rho = e_0.
EffectParams em_initial(const std::vector<EffectGroup>& groups, int K, int L);

struct EmResult {
  EffectParams params;
  std::vector<double> neg2ll_trace;  // at the start and after each iteration
};

EmResult em_warmstart(const std::vector<EffectGroup>& groups, const EffectParams& init, int n_iters);

struct MlResult {
  EffectParams params;
  double neg2ll_start = 0.0;
  double neg2ll = 0.0;
  int iterations = 0;
  bool improved = false;
};

MlResult ml_effect_correlation(const std::vector<EffectGroup>& groups, const EffectParams& warm, int max_iters = 200,
                               double tol = 1e-10);

/// Elementwise median over voxels, repaired into PD Toeplitz matrices.
std::vector<ToeplitzCorrelation> aggregate_rho(const std::vector<std::vector<VectorXd>>& per_voxel_rho);

// ---------------------------------------------------------------------------
// Variance components

struct NnqpResult {
  VectorXd x;
  bool ridge = false;
  int iterations = 0;
};

/// min x'Ax - 2b'x subject to x >= 0, by an active-set method.
NnqpResult solve_nnqp(const MatrixXd& A, const VectorXd& b);

/// Voxel-independent VLS matrix for a set of groups.
MatrixXd vls_matrix(const std::vector<std::shared_ptr<const GroupGeometry>>& geos, const std::vector<MatrixXd>& Txi);
VectorXd vls_rhs(const std::vector<EffectGroup>& groups, const std::vector<MatrixXd>& Txi);

struct EffectVariance {
  VectorXd sigma2_xi;
  bool ridge = false;
};

EffectVariance vls_variance(const std::vector<EffectGroup>& groups, const std::vector<MatrixXd>& Txi);

// ---------------------------------------------------------------------------
// Constrained GLS

/// Profiled normal equations: objective(h) = yQy - 2 eta'h + h'M h.
struct GlsSystem {
  MatrixXd M;
  VectorXd eta;
  double yQy = 0.0;
  int n_subjects = 0;
};

/// Direct construction from dense inverse covariances.
GlsSystem gls_system_dense(const std::vector<VectorXd>& y, const std::vector<SubjectDesign>& designs,
                           const std::vector<MatrixXd>& Vinv);

struct SecularResult {
  VectorXd gamma;
  double C = 0.0;
  bool hard_case = false;
  bool bracket_failed = false;
};

/// Global minimizer of g'Hg - 2 b'g on the unit sphere: (H + C I) g = b.
SecularResult solve_secular(const MatrixXd& H, const VectorXd& b, double tol = 1e-12);

enum class FitStatus : int { ok = 0, no_pilot_shape = 1, unidentified = 2 };

struct VoxelFit {
  VectorXd beta;
  VectorXd gamma;
  std::vector<VectorXd> d;
  double C_lagrange = 0.0;
  std::vector<double> objective_trace;
  MatrixXd M;
  VectorXd eta;
  bool converged = false;
  bool bracket_failed = false;
  int iterations = 0;
  FitStatus status = FitStatus::ok;
};

/// Converged when the relative objective change is at most `tol` and the
/// shape moved by at most `step_tol` in the last update.
struct GlsOptions {
  double tol = 1e-8;
  int max_iters = 200;
  double step_tol = 1e-6;
};

/// Alternating beta / gamma updates. `n_lambda` multiplies gamma'P gamma.
VoxelFit gls_solve(const GlsSystem& sys, const MatrixXd& P, double n_lambda, const VectorXd& gamma_init, int K,
                   const GlsOptions& opt = {});

/// Objective value at (beta, gamma).
double gls_objective(const GlsSystem& sys, const MatrixXd& P, double n_lambda, const VectorXd& beta,
                     const VectorXd& gamma);

/// Dense route: builds the system from V_hat, solves, and recovers d_j.
VoxelFit gls_fit(const std::vector<VectorXd>& y, const std::vector<SubjectDesign>& designs,
                 const std::vector<MatrixXd>& V_hat, const MatrixXd& P, double lambda, const VectorXd& gamma_init,
                 const GlsOptions& opt = {});

}  // namespace hhrf
