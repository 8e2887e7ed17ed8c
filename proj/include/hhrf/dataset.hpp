#pragma once

#include "hhrf/design.hpp"

#include <cstdint>
#include <vector>

namespace hhrf {

/// Multi-subject BOLD data sharing one stimulus timeline.
/// bold[j] is V x T (voxel-major); voxel v sits at (v % nx, v / nx).
struct Dataset {
  int n_subjects = 0;
  int V = 0;
  int T = 0;
  double tr = 1.0;
  int L = 1;
  int nx = 0;
  int ny = 0;
  std::vector<RowMatrixXd> bold;
  std::vector<std::uint16_t> parcels;
  StimulusTimeline timeline;

  void validate() const;
  int voxel_x(int v) const { return nx > 0 ? v % nx : v; }
  int voxel_y(int v) const { return nx > 0 ? v / nx : 0; }
};

struct VoxelTruth {
  int x = 0;
  int y = 0;
  bool active = false;
  VectorXd beta;          // per condition, in the units of h = beta * gamma
  int onset_tr = -1;      // -1 for null voxels
  int duration_tr = -1;
  double ttp = 0.0;       // seconds, NaN for null voxels
  double fwhm = 0.0;
};

struct Truth {
  int nx = 0;
  int ny = 0;
  int L = 1;
  std::vector<VoxelTruth> voxels;
};

}  // namespace hhrf
