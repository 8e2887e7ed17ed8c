#pragma once

#include "hhrf/basis.hpp"
#include "hhrf/dataset.hpp"
#include "hhrf/design.hpp"

#include <cstdint>
#include <vector>

namespace hhrf {

struct Square {
  int row = 0;  // duration index, top to bottom
  int col = 0;  // onset-shift index, left to right
  int x0 = 0;
  int y0 = 0;
  int onset_tr = 0;
  int duration_tr = 1;
};

struct PhantomLayout {
  int nx = 51;
  int ny = 40;
  int size = 4;
  std::vector<Square> squares;  // row-major over (row, col)

  /// Square index covering voxel (x, y), or -1.
  int square_at(int x, int y) const;
};

PhantomLayout make_layout();

struct SimConfig {
  int scenario = 1;
  int n_subjects = 15;
  double tr = 1.0;
  int T = 300;
  int n_epochs = 10;
  double isi = 30.0;
  double isi_min = 10.0;  // randomized designs only
  double isi_max = 20.0;
  bool random_isi = false;
  double condition_offset = 15.0;  // onset gap between interleaved conditions
  double sigma2_eps = 3.0;
  double theta_eps = 0.0;
  double between_sd_ratio = 1.0 / 3.0;
  double effect_size_d = 0.5;
  double subject_hrf_sd = 0.0;
  std::vector<double> betas{1.0};
  double decay = 0.8;
  double grid_dt = 0.1;
  int hrf_K = 20;
  int hrf_order = 6;
  std::uint64_t seed = 0;
};

/// Scenario defaults for simulations 1-5.
SimConfig scenario_config(int scenario, std::uint64_t seed);

/// Linear convolution of condition `condition`'s boxcar with `hrf_curve`
/// (sampled every `dt` from 0), where the stimulus inside an event is weighted
/// by decay^i during its i-th TR. Sampled at the scan times (t + 1) * tr.
VectorXd saturating_convolve(const StimulusTimeline& timeline, int condition, const VectorXd& hrf_curve, double dt,
                             double decay);

/// Event timeline used to fit the models: one TR-long spike per trial.
StimulusTimeline fitting_timeline(const SimConfig& cfg);

struct VoxelSpec {
  bool active = false;
  int onset_tr = 0;
  int duration_tr = 1;
};

struct SimResult {
  Dataset data;
  Truth truth;
};

/// Simulates an arbitrary list of voxels laid out as an nx x ny grid.
SimResult simulate_region(const SimConfig& cfg, const std::vector<VoxelSpec>& voxels, int nx, int ny);

/// Full phantom for the configured scenario.
SimResult generate(const SimConfig& cfg);

}  // namespace hhrf
