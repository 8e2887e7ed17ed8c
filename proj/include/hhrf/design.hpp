#pragma once

#include "hhrf/basis.hpp"

#include <optional>
#include <string>
#include <vector>

namespace hhrf {

struct Event {
  double onset = 0.0;     // seconds
  double duration = 0.0;  // seconds
};

/// Condition timelines for one subject. Scan t (0-based) is acquired at time (t + 1) * tr.
struct StimulusTimeline {
  int L = 0;
  double tr = 1.0;
  int T = 0;
  std::vector<std::vector<Event>> events;  // one list per condition

  void validate() const;
};

struct DesignMatrix {
  MatrixXd X;              // T x (K * L), condition-major blocks
  bool truncated = false;  // some event ran past the end of the acquisition
};

struct SubjectDesign {
  MatrixXd X;
  MatrixXd Phi;
  bool truncated = false;
};

/// Stimulus boxcar sampled at `dt` over [0, T * tr): one vector per condition.
std::vector<VectorXd> sample_stimulus(const StimulusTimeline& stim, double dt, bool* truncated = nullptr);

DesignMatrix build_design(const StimulusTimeline& stim, const BasisSystem& basis);

/// Orthonormal drift basis: polynomials up to `drift_poly_order` and, when a
/// cutoff is given, discrete cosines with frequency below 1 / cutoff.
MatrixXd build_nuisance(int T, double tr, int drift_poly_order, std::optional<double> cosine_cutoff = std::nullopt);

/// I - Phi (Phi'Phi)^-1 Phi'
MatrixXd projector(const MatrixXd& Phi);

/// I - Phi (Phi' W Phi)^-1 Phi' W for a symmetric positive definite metric W.
MatrixXd gls_projector(const MatrixXd& Phi, const MatrixXd& Vinv);

/// R y without forming R.
VectorXd apply_projector(const MatrixXd& Phi, const VectorXd& y);

/// Timeline CSV with header `condition,onset_s,duration_s`; conditions are 1-based.
/// L = 0 takes the condition count from the largest label.
StimulusTimeline parse_timeline_csv(const std::string& text, double tr, int T, int L = 0);
std::string timeline_to_csv(const StimulusTimeline& stim);

}  // namespace hhrf
