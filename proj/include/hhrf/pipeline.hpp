#pragma once

#include "hhrf/basis.hpp"
#include "hhrf/dataset.hpp"
#include "hhrf/estimate.hpp"
#include "hhrf/infer.hpp"

#include <cstdint>
#include <vector>

namespace hhrf {

struct PipelineConfig {
  int K = 20;
  int order = 6;
  double T_hrf = 30.0;
  double grid_dt = 0.1;
  int p = 1;               // AR order of the noise
  double lambda0 = 1.0;    // pilot penalty, relative to the mean diagonal of sum_j X'RX / n
  double lambda = 1.0;     // shape penalty, in units of noise variance times the mean diagonal of the whitened information
  bool penalize_derivative = true;  // reference set holds the canonical derivative too
  int em_iters = 5;
  int ml_voxels = 1000;
  int ml_max_iters = 200;
  double ml_tol = 1e-10;
  bool estimate_correlation = true;  // false keeps T_xi = I
  double gls_tol = 1e-8;
  int gls_max_iters = 200;
  int drift_order = 1;
  double cosine_cutoff = 0.0;  // seconds; 0 disables the cosine drift set
  bool cv_lambda0 = false;
  int cv_folds = 5;
  std::vector<double> cv_grid{0.01, 0.1, 1.0, 10.0, 100.0};
  std::uint64_t seed = 0;
};

struct VoxelResult {
  FitStatus status = FitStatus::ok;
  VectorXd h_hat;
  VectorXd beta;
  VectorXd gamma;
  VectorXd sigma2_xi;
  double C_lagrange = 0.0;
  double n_lambda = 0.0;  // penalty weight used in the shape update
  MatrixXd M;
  VectorXd eta;
  bool converged = false;
  bool vls_ridge = false;
  bool bracket_failed = false;
  int iterations = 0;
  double pilot_stat = 0.0;
  double pilot_p = 1.0;
  double pilot_df = 0.0;
};

struct FitResult {
  PipelineConfig config;
  int n_subjects = 0;
  int V = 0;
  int T = 0;
  int L = 1;
  int nx = 0;
  int ny = 0;
  double tr = 1.0;
  double lambda0_eff = 0.0;
  std::vector<int> parcel_ids;
  std::vector<ArParams> parcel_noise;      // aligned with parcel_ids
  std::vector<double> lambda_eff;          // aligned with parcel_ids
  std::vector<VectorXd> rho;               // per condition
  bool rho_repaired = false;
  std::vector<int> ml_sample;
  int ml_improved = 0;
  std::vector<VoxelResult> voxels;
};

struct ModelSetup {
  BasisSystem basis;
  CanonicalHrf canonical;
  PenaltyProjection penalty;
  SubjectDesign design;
};

/// Basis, reference shapes, penalty and the shared subject design for a dataset.
ModelSetup model_setup(const Dataset& data, const PipelineConfig& cfg);

FitResult fit_all(const Dataset& data, const PipelineConfig& cfg);

/// Converts a stored voxel result back to the estimator's fit type.
VoxelFit to_voxel_fit(const VoxelResult& v);

}  // namespace hhrf
