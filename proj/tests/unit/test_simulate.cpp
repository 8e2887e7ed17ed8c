#include "hhrf/io.hpp"
#include "hhrf/simulate.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace hhrf;

namespace {

// Linear convolution written out from the boxcar and the curve.
VectorXd linear_convolution(const StimulusTimeline& tl, const VectorXd& curve, double dt) {
  const auto u = sample_stimulus(tl, dt);
  const long steps = std::lround(tl.tr / dt);
  VectorXd out = VectorXd::Zero(tl.T);
  for (int t = 0; t < tl.T; ++t) {
    const long m = (t + 1) * steps;
    for (long g = 1; g < curve.size() && g <= m; ++g)
      if (m - g < u[0].size()) out[t] += dt * curve[g] * u[0][m - g];
  }
  return out;
}

StimulusTimeline one_event(double duration) {
  StimulusTimeline tl;
  tl.L = 1;
  tl.tr = 1.0;
  tl.T = 60;
  tl.events = {{{5.0, duration}}};
  return tl;
}

}  // namespace

TEST_CASE("phantom layout") {
  const PhantomLayout lay = make_layout();
  CHECK(lay.nx == 51);
  CHECK(lay.ny == 40);
  REQUIRE(lay.squares.size() == 25);
  CHECK(lay.squares[0].onset_tr == 0);
  CHECK(lay.squares[0].duration_tr == 1);
  CHECK(lay.squares[24].onset_tr == 4);
  CHECK(lay.squares[24].duration_tr == 9);
  int active = 0;
  std::set<std::pair<int, int>> groups;
  for (int y = 0; y < lay.ny; ++y)
    for (int x = 0; x < lay.nx; ++x) {
      const int s = lay.square_at(x, y);
      if (s < 0) continue;
      ++active;
      groups.insert({lay.squares[static_cast<std::size_t>(s)].onset_tr, lay.squares[static_cast<std::size_t>(s)].duration_tr});
    }
  CHECK(active == 400);
  CHECK(groups.size() == 25);
  for (const auto& s : lay.squares) {
    CHECK(s.x0 + lay.size <= lay.nx);
    CHECK(s.y0 + lay.size <= lay.ny);
  }
}

TEST_CASE("saturating convolution") {
  std::vector<double> grid;
  for (int i = 0; i < 300; ++i) grid.push_back(i * 0.1);
  const VectorXd curve = canonical_hrf_curve(grid);
  const StimulusTimeline long_event = one_event(9.0);
  const VectorXd lin = linear_convolution(long_event, curve, 0.1);
  CHECK((saturating_convolve(long_event, 0, curve, 0.1, 1.0) - lin).norm() < 1e-12 * lin.norm());
  const StimulusTimeline short_event = one_event(1.0);
  const VectorXd lin1 = linear_convolution(short_event, curve, 0.1);
  CHECK((saturating_convolve(short_event, 0, curve, 0.1, 0.3) - lin1).norm() < 1e-12 * lin1.norm());
  const VectorXd sat = saturating_convolve(long_event, 0, curve, 0.1, 0.8);
  CHECK(sat.maxCoeff() / lin.maxCoeff() < 1.0);
  CHECK(sat.minCoeff() >= lin.minCoeff() - 1e-12);
  CHECK_THROWS(saturating_convolve(long_event, 0, curve, 0.1, 0.0));
  CHECK_THROWS(saturating_convolve(long_event, 0, curve, 0.1, 1.5));
  CHECK_THROWS(saturating_convolve(long_event, 1, curve, 0.1, 0.8));
}

TEST_CASE("scenario defaults") {
  CHECK_THROWS_WITH(scenario_config(6, 0), "unknown scenario 6 (expected 1-5)");
  const SimConfig s2 = scenario_config(2, 0);
  CHECK(s2.theta_eps == 0.3);
  CHECK(s2.sigma2_eps == 3.0);
  CHECK(scenario_config(3, 0).subject_hrf_sd == 0.1);
  CHECK(scenario_config(4, 0).betas == std::vector<double>{0.5, 1.0});
  CHECK(scenario_config(5, 0).random_isi);
  const StimulusTimeline tl5 = fitting_timeline(scenario_config(5, 1));
  for (std::size_t i = 1; i < tl5.events[0].size(); ++i) {
    const double isi = tl5.events[0][i].onset - tl5.events[0][i - 1].onset;
    CHECK(isi >= 10.0);
    CHECK(isi <= 20.0);
  }
  const StimulusTimeline tl4 = fitting_timeline(scenario_config(4, 1));
  REQUIRE(tl4.L == 2);
  CHECK(tl4.events[1][0].onset - tl4.events[0][0].onset == doctest::Approx(15.0));
}

TEST_CASE("simulation 1: dimensions, determinism, truth and noise level") {
  const SimResult a = generate(scenario_config(1, 7));
  const Dataset& d = a.data;
  CHECK(d.n_subjects == 15);
  CHECK(d.nx == 51);
  CHECK(d.ny == 40);
  CHECK(d.T == 300);
  CHECK(d.V == 2040);
  CHECK_NOTHROW(d.validate());
  const SimResult b = generate(scenario_config(1, 7));
  CHECK(io::encode_dataset(d) == io::encode_dataset(b.data));
  const SimResult c = generate(scenario_config(1, 8));
  CHECK(io::encode_dataset(d) != io::encode_dataset(c.data));

  const PhantomLayout lay = make_layout();
  double ss = 0.0;
  long count = 0;
  for (int v = 0; v < d.V; ++v) {
    const VoxelTruth& t = a.truth.voxels[static_cast<std::size_t>(v)];
    const bool in_square = lay.square_at(t.x, t.y) >= 0;
    CHECK(t.active == in_square);
    if (t.active) continue;
    CHECK(t.beta[0] == 0.0);
    for (int j = 0; j < d.n_subjects; ++j) {
      const auto row = d.bold[static_cast<std::size_t>(j)].row(v);
      ss += row.squaredNorm();
      count += row.size();
    }
  }
  CHECK(ss / count == doctest::Approx(3.0).epsilon(0.1));

  // Epoch-locked average in the upper-left square peaks near d * sigma.
  VectorXd avg = VectorXd::Zero(30);
  int n_avg = 0;
  for (int v = 0; v < d.V; ++v) {
    const VoxelTruth& t = a.truth.voxels[static_cast<std::size_t>(v)];
    if (!(t.active && t.onset_tr == 0 && t.duration_tr == 1)) continue;
    for (int j = 0; j < d.n_subjects; ++j)
      for (int e = 0; e < 10; ++e) {
        avg += d.bold[static_cast<std::size_t>(j)].row(v).segment(e * 30, 30).transpose();
        ++n_avg;
      }
  }
  avg /= n_avg;
  CHECK(avg.maxCoeff() / std::sqrt(3.0) == doctest::Approx(0.5).epsilon(0.2));
}

TEST_CASE("simulation 2 noise is AR(1) with the configured coefficient") {
  const SimResult a = generate(scenario_config(2, 3));
  const Dataset& d = a.data;
  double num = 0.0, den = 0.0;
  for (int v = 0; v < d.V; ++v) {
    if (a.truth.voxels[static_cast<std::size_t>(v)].active) continue;
    for (int j = 0; j < d.n_subjects; ++j) {
      VectorXd r = d.bold[static_cast<std::size_t>(j)].row(v).transpose();
      r.array() -= r.mean();
      num += r.head(d.T - 1).dot(r.tail(d.T - 1));
      den += r.squaredNorm();
    }
  }
  CHECK(num / den == doctest::Approx(0.3).epsilon(0.05 / 0.3));
}

TEST_CASE("simulation 4 truth keeps the amplitude ratio") {
  SimConfig cfg = scenario_config(4, 1);
  cfg.n_subjects = 2;
  std::vector<VoxelSpec> vox{{true, 0, 1}, {false, 0, 1}};
  const SimResult r = simulate_region(cfg, vox, 2, 1);
  REQUIRE(r.truth.L == 2);
  const VectorXd& b = r.truth.voxels[0].beta;
  CHECK(b[1] / b[0] == doctest::Approx(2.0).epsilon(0.05));
  CHECK(r.truth.voxels[1].beta.norm() == 0.0);
  CHECK(std::isnan(r.truth.voxels[1].ttp));
}
