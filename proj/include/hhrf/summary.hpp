#pragma once

#include "hhrf/basis.hpp"

namespace hhrf {

struct HrfSummary {
  double time_to_peak = 0.0;  // seconds; NaN for a flat curve
  double fwhm = 0.0;          // seconds; NaN for a flat curve
  double peak = 0.0;          // signed value at the extremum
  VectorXd curve;             // sampled on the basis grid
};

/// Time-to-peak and full width at half maximum of the main lobe of a curve
/// sampled every `dt` seconds from 0. The extremum is taken in absolute value.
HrfSummary curve_summary(const VectorXd& curve, double dt);

/// Summary of h(tau) = beta * sum_k gamma_k B_k(tau).
HrfSummary hrf_summary(const VectorXd& gamma, double beta, const BasisSystem& basis);

}  // namespace hhrf
