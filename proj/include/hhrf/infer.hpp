#pragma once

#include "hhrf/estimate.hpp"

#include <vector>

namespace hhrf {

double normal_upper_tail(double z);
double chi2_upper_tail(double x, double df);
double student_t_upper_tail(double t, double df);

/// [(I_L (x) gamma)' M (I_L (x) gamma)]^-1. `ok` is false when the inner matrix is singular.
MatrixXd beta_covariance(const MatrixXd& M, const VectorXd& gamma, bool* ok = nullptr);
/// [(beta (x) I_K)' M (beta (x) I_K)]^-1
MatrixXd gamma_covariance(const MatrixXd& M, const VectorXd& beta, bool* ok = nullptr);

MatrixXd beta_covariance(const VoxelFit& fit, bool* ok = nullptr);
MatrixXd gamma_covariance(const VoxelFit& fit, bool* ok = nullptr);

struct TestResult {
  double stat = 0.0;
  double p = 1.0;  // NaN when missing
  double df = 0.0;
  bool missing = false;
  bool pseudo_inverse = false;
};

/// z = c'beta / sqrt(c' cov c) with an upper-tail normal p-value.
TestResult contrast_test(const VectorXd& beta, const MatrixXd& cov, const VectorXd& c);
TestResult contrast_test(const VoxelFit& fit, const VectorXd& c);

/// (gamma - ref)' [(beta (x) I)' M (beta (x) I)] (gamma - ref) against chi2 with K df.
TestResult shape_chi2(const MatrixXd& M, const VectorXd& beta, const VectorXd& gamma, const VectorXd& gamma_ref);
TestResult shape_chi2(const VoxelFit& fit, const VectorXd& gamma_ref);

/// Shape test that accounts for the shrinkage of the penalized, unit-norm gamma
/// update: the delta-method covariance J Q A Q J' with A = (beta (x) I)' M (beta (x) I),
/// Q = I - gamma gamma' and J = [Q (A + n_lambda P + C I) Q]^+, compared against
/// chi2 with its rank (K - 1) as df. With n_lambda = 0 it is the precision form
/// restricted to the tangent space of the sphere.
TestResult shape_chi2_penalized(const MatrixXd& M, const VectorXd& beta, const VectorXd& gamma, double C,
                                const MatrixXd& P, double n_lambda, const VectorXd& gamma_ref);

/// Wald test of h = 0 from the score s = sum_j X'R y_j and the middle term
/// sum_j X'R V_j R X of the sandwich; equals h' Sigma^-1 h for any bread.
TestResult pilot_wald(const VectorXd& score, const MatrixXd& middle);

/// Dense route: sandwich built from full covariance matrices V_hat (one per subject).
TestResult pilot_activation_test(const PilotFit& pilot, const std::vector<SubjectDesign>& designs,
                                 const std::vector<MatrixXd>& V_hat, const MatrixXd& P);

struct FdrResult {
  std::vector<bool> mask;
  double p_star = 0.0;
  int n_tested = 0;
  int n_rejected = 0;
};

/// Benjamini-Hochberg step-up; NaN p-values are skipped and never rejected.
FdrResult fdr_mask(const std::vector<double>& pvals, double q);

}  // namespace hhrf
