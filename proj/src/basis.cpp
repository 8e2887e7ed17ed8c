#include "hhrf/basis.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hhrf {

namespace {

int checked_grid_points(double T_hrf, double grid_dt) {
  const double ratio = T_hrf / grid_dt;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio) || rounded < 1.0) {
    throw std::invalid_argument("grid_dt must divide T_hrf evenly");
  }
  return static_cast<int>(rounded);
}

double gamma_density(double t, double shape, double scale) {
  if (t <= 0.0) return 0.0;
  return std::exp((shape - 1.0) * std::log(t) - t / scale - std::lgamma(shape) - shape * std::log(scale));
}

}  // namespace

BasisSystem make_basis(double T_hrf, int K, int order, double grid_dt) {
  if (!(T_hrf > 0.0)) throw std::invalid_argument("T_hrf must be positive");
  if (!(grid_dt > 0.0)) throw std::invalid_argument("grid_dt must be positive");
  if (order < 2) throw std::invalid_argument("spline order must be at least 2");
  if (K < order) throw std::invalid_argument("K must be at least the spline order");
  const int G = checked_grid_points(T_hrf, grid_dt);

  BasisSystem b;
  b.K = K;
  b.order = order;
  b.T_hrf = T_hrf;
  b.grid_dt = grid_dt;
  const double h = T_hrf / (K - 1);
  b.knots.resize(static_cast<std::size_t>(K + order));
  for (int i = 0; i < K + order; ++i) b.knots[static_cast<std::size_t>(i)] = (i - 0.5 * order) * h;

  b.values.resize(G, K);
  for (int g = 0; g < G; ++g) b.values.row(g) = basis_at(b, g * grid_dt).transpose();
  return b;
}

VectorXd basis_at(const BasisSystem& basis, double t) {
  const auto& kn = basis.knots;
  const int n_knots = static_cast<int>(kn.size());
  std::vector<double> N(static_cast<std::size_t>(n_knots - 1), 0.0);
  for (int i = 0; i + 1 < n_knots; ++i) {
    N[static_cast<std::size_t>(i)] = (kn[static_cast<std::size_t>(i)] <= t && t < kn[static_cast<std::size_t>(i + 1)]) ? 1.0 : 0.0;
  }
  for (int m = 2; m <= basis.order; ++m) {
    for (int i = 0; i + m < n_knots; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const double left_den = kn[ui + static_cast<std::size_t>(m) - 1] - kn[ui];
      const double right_den = kn[ui + static_cast<std::size_t>(m)] - kn[ui + 1];
      double v = 0.0;
      if (left_den > 0.0) v += (t - kn[ui]) / left_den * N[ui];
      if (right_den > 0.0) v += (kn[ui + static_cast<std::size_t>(m)] - t) / right_den * N[ui + 1];
      N[ui] = v;
    }
  }
  VectorXd out(basis.K);
  for (int k = 0; k < basis.K; ++k) out[k] = N[static_cast<std::size_t>(k)];
  return out;
}

MatrixXd basis_values_at(const BasisSystem& basis, const std::vector<double>& times) {
  MatrixXd out(static_cast<Eigen::Index>(times.size()), basis.K);
  for (std::size_t i = 0; i < times.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = basis_at(basis, times[i]).transpose();
  return out;
}

std::vector<double> basis_grid(const BasisSystem& basis) {
  std::vector<double> grid(static_cast<std::size_t>(basis.grid_points()));
  for (std::size_t g = 0; g < grid.size(); ++g) grid[g] = static_cast<double>(g) * basis.grid_dt;
  return grid;
}

VectorXd canonical_hrf_curve(const std::vector<double>& times, const DoubleGammaParams& p) {
  VectorXd out(static_cast<Eigen::Index>(times.size()));
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = times[i];
    if (t < 0.0) throw std::invalid_argument("canonical_hrf_curve: negative time");
    const double peak = gamma_density(t, p.peak_delay / p.peak_dispersion, p.peak_dispersion);
    const double under = gamma_density(t, p.undershoot_delay / p.undershoot_dispersion, p.undershoot_dispersion);
    out[static_cast<Eigen::Index>(i)] = peak - p.undershoot_ratio * under;
  }
  return out;
}

Projection project_to_basis(const VectorXd& curve, const BasisSystem& basis) {
  if (curve.size() != basis.values.rows()) throw std::invalid_argument("curve must be sampled on the basis grid");
  Eigen::ColPivHouseholderQR<MatrixXd> qr(basis.values);
  if (qr.rank() < basis.K) throw std::logic_error("basis matrix is rank deficient");
  Projection p;
  p.coeffs = qr.solve(curve);
  const double norm = curve.norm();
  p.relative_residual = norm > 0.0 ? (basis.values * p.coeffs - curve).norm() / norm : 0.0;
  return p;
}

CanonicalHrf canonical_hrf(const BasisSystem& basis, const DoubleGammaParams& params) {
  const auto grid = basis_grid(basis);
  const VectorXd curve = canonical_hrf_curve(grid, params);

  std::vector<double> ahead(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) ahead[i] = grid[i] + basis.grid_dt;
  const VectorXd next = canonical_hrf_curve(ahead, params);
  VectorXd deriv(curve.size());
  for (Eigen::Index i = 0; i < curve.size(); ++i) {
    const double prev = i == 0 ? 0.0 : curve[i - 1];
    deriv[i] = (next[i] - prev) / (2.0 * basis.grid_dt);
  }

  const Projection pc = project_to_basis(curve, basis);
  const Projection pd = project_to_basis(deriv, basis);
  CanonicalHrf c;
  c.params = params;
  c.relative_residual = pc.relative_residual;
  double scale = 1.0 / pc.coeffs.norm();
  if (pc.coeffs[argmax_abs(pc.coeffs)] < 0.0) scale = -scale;
  c.coeffs = pc.coeffs * scale;
  c.deriv_coeffs = pd.coeffs * scale;
  return c;
}

PenaltyProjection penalty_projection(const BasisSystem& basis, const std::vector<VectorXd>& reference_coeffs) {
  const int K = basis.K;
  PenaltyProjection out;
  out.psi.resize(K, static_cast<Eigen::Index>(reference_coeffs.size()));
  for (std::size_t i = 0; i < reference_coeffs.size(); ++i) {
    if (reference_coeffs[i].size() != K) throw std::invalid_argument("reference coefficients must have length K");
    out.psi.col(static_cast<Eigen::Index>(i)) = reference_coeffs[i];
  }
  if (reference_coeffs.empty()) {
    out.P = MatrixXd::Identity(K, K);
    return out;
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(out.psi);
  qr.setThreshold(1e-10);
  if (qr.rank() < out.psi.cols()) {
    throw std::invalid_argument("reference HRF coefficients are linearly dependent (rank " + std::to_string(qr.rank()) +
                                " of " + std::to_string(out.psi.cols()) + ")");
  }
  const MatrixXd Q = MatrixXd(qr.householderQ()).leftCols(out.psi.cols());
  out.P = MatrixXd::Identity(K, K) - Q * Q.transpose();
  out.P = symmetrize(out.P);
  return out;
}

VectorXd reconstruct_curve(const BasisSystem& basis, const VectorXd& gamma) { return basis.values * gamma; }

}  // namespace hhrf
