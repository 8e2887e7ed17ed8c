#pragma once

#include "hhrf/linalg.hpp"

#include <vector>

namespace hhrf {

/// B-spline basis sampled on the grid tau_g = g * grid_dt, g = 0 .. G-1,
/// where G = T_hrf / grid_dt. Knots are uniformly spaced and extend past
/// both ends of [0, T_hrf] so that basis centers sit at k * T_hrf / (K - 1).
struct BasisSystem {
  int K = 0;
  int order = 0;
  double T_hrf = 0.0;
  double grid_dt = 0.0;
  MatrixXd values;            // G x K
  std::vector<double> knots;  // K + order entries

  int grid_points() const { return static_cast<int>(values.rows()); }
  /// Interior span [knots[order-1], knots[K]] where the basis sums to one.
  double interior_begin() const { return knots[static_cast<std::size_t>(order - 1)]; }
  double interior_end() const { return knots[static_cast<std::size_t>(K)]; }
};

struct DoubleGammaParams {
  double peak_delay = 6.0;
  double undershoot_delay = 16.0;
  double peak_dispersion = 1.0;
  double undershoot_dispersion = 1.0;
  double undershoot_ratio = 1.0 / 6.0;
};

struct CanonicalHrf {
  VectorXd coeffs;        // unit norm, oriented
  VectorXd deriv_coeffs;  // derivative of the canonical curve, same scaling as coeffs
  DoubleGammaParams params;
  double relative_residual = 0.0;
};

struct PenaltyProjection {
  MatrixXd P;    // K x K
  MatrixXd psi;  // K x r
};

struct Projection {
  VectorXd coeffs;
  double relative_residual = 0.0;
};

BasisSystem make_basis(double T_hrf, int K, int order, double grid_dt = 0.1);

/// Evaluates all K basis functions at time `t` (Cox-de Boor recursion).
VectorXd basis_at(const BasisSystem& basis, double t);

/// Basis values at arbitrary times, one row per time.
MatrixXd basis_values_at(const BasisSystem& basis, const std::vector<double>& times);

std::vector<double> basis_grid(const BasisSystem& basis);

VectorXd canonical_hrf_curve(const std::vector<double>& times, const DoubleGammaParams& params = {});

Projection project_to_basis(const VectorXd& curve, const BasisSystem& basis);

/// Canonical curve and its centered-difference derivative projected on the basis.
CanonicalHrf canonical_hrf(const BasisSystem& basis, const DoubleGammaParams& params = {});

PenaltyProjection penalty_projection(const BasisSystem& basis, const std::vector<VectorXd>& reference_coeffs);

/// h(tau) = sum_k gamma_k B_k(tau) on the basis grid.
VectorXd reconstruct_curve(const BasisSystem& basis, const VectorXd& gamma);

}  // namespace hhrf
