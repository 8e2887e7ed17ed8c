#include "hhrf/noise.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>

namespace hhrf {

namespace {

double companion_radius(const VectorXd& theta) {
  const auto p = theta.size();
  if (p == 0) return 0.0;
  if (p == 1) return std::abs(theta[0]);
  MatrixXd C = MatrixXd::Zero(p, p);
  C.row(0) = theta.transpose();
  for (Eigen::Index i = 1; i < p; ++i) C(i, i - 1) = 1.0;
  Eigen::EigenSolver<MatrixXd> es(C, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

bool is_stationary(const VectorXd& theta, double radius) { return companion_radius(theta) < 1.0 / radius; }

VectorXd ar_autocorrelation(const VectorXd& theta, int max_lag) {
  const auto p = static_cast<int>(theta.size());
  VectorXd rho = VectorXd::Zero(std::max(max_lag, p) + 1);
  rho[0] = 1.0;
  if (p > 0) {
    // rho(k) = sum_i theta_i rho(|k - i|) for k = 1..p, linear in rho(1..p).
    MatrixXd A = MatrixXd::Identity(p, p);
    VectorXd b(p);
    for (int k = 1; k <= p; ++k) {
      b[k - 1] = theta[k - 1];
      for (int i = 1; i <= p; ++i) {
        const int lag = std::abs(k - i);
        if (lag > 0) A(k - 1, lag - 1) -= theta[i - 1];
      }
    }
    rho.segment(1, p) = A.partialPivLu().solve(b);
    for (int k = p + 1; k < rho.size(); ++k) {
      double v = 0.0;
      for (int i = 1; i <= p; ++i) v += theta[i - 1] * rho[k - i];
      rho[k] = v;
    }
  }
  return rho.head(max_lag + 1);
}

ArParams make_ar(const VectorXd& theta, double sigma2, int parcel_id) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("AR variance must be positive");
  if (!is_stationary(theta)) throw std::invalid_argument("AR parameters are not stationary");
  ArParams a;
  a.p = static_cast<int>(theta.size());
  a.theta = theta;
  a.sigma2 = sigma2;
  a.parcel_id = parcel_id;
  const VectorXd rho = ar_autocorrelation(theta, a.p);
  double s = 1.0;
  for (int i = 1; i <= a.p; ++i) s -= theta[i - 1] * rho[i];
  a.innovation_var = sigma2 * s;
  return a;
}

MatrixXd toeplitz(const VectorXd& first_row) {
  const auto n = first_row.size();
  MatrixXd M(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) M(i, j) = first_row[std::abs(i - j)];
  return M;
}

MatrixXd ar_covariance(const ArParams& params, int T) {
  if (!is_stationary(params.theta)) throw std::invalid_argument("AR parameters are not stationary");
  if (!(params.sigma2 > 0.0)) throw std::invalid_argument("AR variance must be positive");
  return params.sigma2 * toeplitz(ar_autocorrelation(params.theta, T - 1));
}

ArPrecision ar_precision(const ArParams& params, int T) {
  const MatrixXd V = ar_covariance(params, T);
  Eigen::LLT<MatrixXd> llt(V);
  if (llt.info() != Eigen::Success) throw std::runtime_error("AR covariance is not positive definite");
  ArPrecision out;
  out.W = llt.solve(MatrixXd::Identity(T, T));
  out.W = symmetrize(out.W);
  out.logdet_cov = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double cut = 1e-13 * out.W.cwiseAbs().maxCoeff();
  int band = 0;
  for (int i = 0; i < T; ++i)
    for (int j = i + 1; j < T; ++j)
      if (std::abs(out.W(i, j)) > cut) band = std::max(band, j - i);
  out.bandwidth = band;
  for (int i = 0; i < T; ++i)
    for (int j = 0; j < T; ++j)
      if (std::abs(i - j) > band) out.W(i, j) = 0.0;
  return out;
}

double banded_form(const ArPrecision& prec, const VectorXd& x, const VectorXd& y) {
  const auto T = x.size();
  const int b = prec.bandwidth;
  double s = 0.0;
  for (Eigen::Index i = 0; i < T; ++i) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, i - b);
    const Eigen::Index hi = std::min<Eigen::Index>(T - 1, i + b);
    double row = 0.0;
    for (Eigen::Index j = lo; j <= hi; ++j) row += prec.W(i, j) * y[j];
    s += x[i] * row;
  }
  return s;
}

VectorXd banded_apply(const ArPrecision& prec, const VectorXd& x) {
  const auto T = x.size();
  const int b = prec.bandwidth;
  VectorXd out(T);
  for (Eigen::Index i = 0; i < T; ++i) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, i - b);
    const Eigen::Index hi = std::min<Eigen::Index>(T - 1, i + b);
    double row = 0.0;
    for (Eigen::Index j = lo; j <= hi; ++j) row += prec.W(i, j) * x[j];
    out[i] = row;
  }
  return out;
}

VectorXd sample_autocovariance(const VectorXd& series, int max_lag) {
  const auto T = series.size();
  const double mean = series.mean();
  const VectorXd x = series.array() - mean;
  VectorXd g(max_lag + 1);
  for (int k = 0; k <= max_lag; ++k) g[k] = x.head(T - k).dot(x.tail(T - k)) / static_cast<double>(T);
  return g;
}

VectorXd enforce_stationarity(const VectorXd& theta, double radius) {
  if (is_stationary(theta, radius)) return theta;
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (is_stationary(mid * theta, radius)) lo = mid;
    else hi = mid;
  }
  return lo * theta;
}

ArParams yule_walker_from_autocov(const VectorXd& autocov, int p) {
  if (p < 0 || autocov.size() < p + 1) throw std::invalid_argument("need autocovariances at lags 0..p");
  if (!(autocov[0] > 0.0)) throw std::invalid_argument("zero-variance series");
  VectorXd theta(p);
  if (p > 0) {
    const MatrixXd G = toeplitz(autocov.head(p));
    theta = G.ldlt().solve(autocov.segment(1, p));
  }
  return make_ar(enforce_stationarity(theta), autocov[0]);
}

ArParams yule_walker(const VectorXd& series, int p) {
  if (series.size() <= 10 * p) throw std::invalid_argument("series too short for the AR order");
  return yule_walker_from_autocov(sample_autocovariance(series, p), p);
}

ArParams estimate_noise_parcel(const std::vector<ArParams>& fits) {
  if (fits.empty()) throw std::invalid_argument("parcel has no voxels");
  const int p = fits.front().p;
  VectorXd theta(p);
  std::vector<double> buf(fits.size());
  for (int i = 0; i < p; ++i) {
    for (std::size_t f = 0; f < fits.size(); ++f) buf[f] = fits[f].theta[i];
    theta[i] = median(buf);
  }
  for (std::size_t f = 0; f < fits.size(); ++f) buf[f] = fits[f].sigma2;
  return make_ar(enforce_stationarity(theta), median(buf), fits.front().parcel_id);
}

ArParams estimate_noise_parcel(const std::vector<VectorXd>& residuals, int p) {
  std::vector<ArParams> fits;
  fits.reserve(residuals.size());
  for (const auto& r : residuals) fits.push_back(yule_walker(r, p));
  return estimate_noise_parcel(fits);
}

ToeplitzCorrelation toeplitz_from_lags(const VectorXd& rho, double floor) {
  if (rho.size() == 0) throw std::invalid_argument("empty lag vector");
  for (Eigen::Index k = 0; k < rho.size(); ++k) {
    if (!(std::abs(rho[k]) <= 1.0 + 1e-12)) throw std::invalid_argument("lag correlations must lie in [-1, 1]");
  }
  ToeplitzCorrelation out;
  out.rho = rho;
  out.rho[0] = 1.0;
  out.matrix = toeplitz(out.rho);
  if (is_positive_definite(out.matrix, floor)) return out;

  out.repaired = true;
  const auto K = rho.size();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(out.matrix);
  VectorXd ev = es.eigenvalues().cwiseMax(10.0 * floor);
  MatrixXd M = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  const VectorXd inv_sd = M.diagonal().cwiseSqrt().cwiseInverse();
  M = inv_sd.asDiagonal() * M * inv_sd.asDiagonal();

  VectorXd lags(K);
  for (Eigen::Index k = 0; k < K; ++k) lags[k] = M.diagonal(k).mean();
  lags[0] = 1.0;
  MatrixXd Tm = toeplitz(lags);
  const double lmin = min_eigenvalue(Tm);
  if (lmin < 2.0 * floor) {
    const double c = (1.0 - 2.0 * floor) / (1.0 - lmin);
    lags.tail(K - 1) *= c;
    Tm = toeplitz(lags);
  }
  out.rho = lags;
  out.matrix = Tm;
  return out;
}

MatrixXd lag_indicator(int K, int k) {
  MatrixXd D = MatrixXd::Zero(K, K);
  for (int i = 0; i + k < K; ++i) {
    D(i, i + k) = 1.0;
    D(i + k, i) = 1.0;
  }
  return D;
}

}  // namespace hhrf
