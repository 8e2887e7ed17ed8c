#pragma once

#include "hhrf/linalg.hpp"

#include <vector>

namespace hhrf {

inline constexpr double kPdFloor = 1e-8;

/// Stationary AR(p) noise. `sigma2` is the process (lag-0) variance; the
/// innovation variance is kept alongside.
struct ArParams {
  int p = 0;
  VectorXd theta;
  double sigma2 = 1.0;
  double innovation_var = 1.0;
  int parcel_id = 0;
};

/// Roots of 1 - theta_1 z - ... - theta_p z^p all lie outside |z| = radius.
bool is_stationary(const VectorXd& theta, double radius = 1.0);

/// Validated parameters with the innovation variance filled in.
ArParams make_ar(const VectorXd& theta, double sigma2, int parcel_id = 0);

/// Autocorrelation at lags 0..max_lag.
VectorXd ar_autocorrelation(const VectorXd& theta, int max_lag);

MatrixXd ar_covariance(const ArParams& params, int T);

/// Inverse of the AR covariance, stored densely but with its band recorded.
struct ArPrecision {
  MatrixXd W;
  int bandwidth = 0;
  double logdet_cov = 0.0;  // ln |V_eps|
};

ArPrecision ar_precision(const ArParams& params, int T);

/// x' W y using only the recorded band of W.
double banded_form(const ArPrecision& prec, const VectorXd& x, const VectorXd& y);

/// W x using only the recorded band.
VectorXd banded_apply(const ArPrecision& prec, const VectorXd& x);

/// Biased (divide-by-T) autocovariances of the demeaned series at lags 0..max_lag.
VectorXd sample_autocovariance(const VectorXd& series, int max_lag);

ArParams yule_walker(const VectorXd& series, int p);
ArParams yule_walker_from_autocov(const VectorXd& autocov, int p);

/// Shrinks theta toward zero by the largest factor that puts all roots outside `radius`.
VectorXd enforce_stationarity(const VectorXd& theta, double radius = 1.001);

/// Elementwise median of theta and median of sigma2 across fits.
ArParams estimate_noise_parcel(const std::vector<ArParams>& fits);
ArParams estimate_noise_parcel(const std::vector<VectorXd>& residuals, int p);

struct ToeplitzCorrelation {
  MatrixXd matrix;
  VectorXd rho;  // first row after any repair
  bool repaired = false;
};

MatrixXd toeplitz(const VectorXd& first_row);

/// Toeplitz matrix from lags rho[0..K-1] with rho[0] = 1, repaired to have
/// unit diagonal and smallest eigenvalue at least `floor`.
ToeplitzCorrelation toeplitz_from_lags(const VectorXd& rho, double floor = kPdFloor);

/// Lag pattern of T_xi: ones on the +-k diagonals (k >= 1).
MatrixXd lag_indicator(int K, int k);

}  // namespace hhrf
