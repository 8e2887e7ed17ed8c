#pragma once

#include "hhrf/basis.hpp"
#include "hhrf/dataset.hpp"
#include "hhrf/design.hpp"

#include <vector>

namespace hhrf {

/// Canonical regressors for each condition: X_l * canonical coefficients (T x L).
MatrixXd canonical_regressors(const MatrixXd& X, const VectorXd& canonical_coeffs, int L);

/// OLS fit of the canonical regressors with the nuisance columns partialled out.
struct OlsModel {
  MatrixXd Z;          // R * regressors
  Eigen::LDLT<MatrixXd> gram;
  MatrixXd Phi;
  MatrixXd phi_solve;  // (Phi'Phi)^-1 Phi'
  bool collinear = false;
};

OlsModel make_ols_model(const MatrixXd& regressors, const MatrixXd& Phi);

/// Per-condition OLS coefficients for one subject's voxel series.
VectorXd glm_ols_subject(const OlsModel& model, const VectorXd& y);

struct GroupTTest {
  double mean = 0.0;
  double sd = 0.0;
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
  bool degenerate = false;  // zero spread across subjects
};

/// One-sample, upper-tailed t-test with n - 1 degrees of freedom.
GroupTTest group_ttest(const std::vector<double>& beta_hats);

struct OlsVoxel {
  std::vector<VectorXd> beta_subject;  // per subject, length L
  GroupTTest test;
  bool rejected_model = false;
};

struct OlsResult {
  int nx = 0;
  int ny = 0;
  int L = 1;
  std::vector<OlsVoxel> voxels;
};

/// Two-stage baseline on a whole dataset; `contrast` weights the conditions.
OlsResult run_baseline(const Dataset& data, const VectorXd& contrast, int K = 20, int order = 6, double T_hrf = 30.0,
                       double grid_dt = 0.1, int drift_order = 1);

}  // namespace hhrf
