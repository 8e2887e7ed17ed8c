#include "hhrf/summary.hpp"

#include <cmath>
#include <limits>

namespace hhrf {

HrfSummary curve_summary(const VectorXd& curve, double dt) {
  HrfSummary s;
  s.curve = curve;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (curve.size() == 0 || curve.cwiseAbs().maxCoeff() <= 0.0) {
    s.time_to_peak = nan;
    s.fwhm = nan;
    return s;
  }
  Eigen::Index ipk = 0;
  curve.cwiseAbs().maxCoeff(&ipk);
  s.peak = curve[ipk];
  s.time_to_peak = static_cast<double>(ipk) * dt;

  const VectorXd a = curve * (s.peak > 0 ? 1.0 : -1.0);
  const double half = 0.5 * a[ipk];
  double left = 0.0;
  for (Eigen::Index i = ipk; i > 0; --i) {
    if (a[i - 1] < half) {
      const double frac = (a[i] - half) / (a[i] - a[i - 1]);
      left = (static_cast<double>(i) - frac) * dt;
      break;
    }
  }
  double right = static_cast<double>(a.size() - 1) * dt;
  for (Eigen::Index i = ipk; i + 1 < a.size(); ++i) {
    if (a[i + 1] < half) {
      const double frac = (a[i] - half) / (a[i] - a[i + 1]);
      right = (static_cast<double>(i) + frac) * dt;
      break;
    }
  }
  s.fwhm = right - left;
  return s;
}

HrfSummary hrf_summary(const VectorXd& gamma, double beta, const BasisSystem& basis) {
  return curve_summary(beta * reconstruct_curve(basis, gamma), basis.grid_dt);
}

}  // namespace hhrf
