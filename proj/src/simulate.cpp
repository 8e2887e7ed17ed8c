#include "hhrf/simulate.hpp"

#include "hhrf/summary.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <utility>

namespace hhrf {

namespace {

constexpr double kHrfSupport = 30.0;

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

constexpr std::uint64_t kTimelineStream = 0x7f4a7c15ULL;

std::vector<double> trial_onsets(const SimConfig& cfg) {
  std::vector<double> onsets;
  const double end = cfg.T * cfg.tr;
  if (cfg.random_isi) {
    auto rng = make_rng(cfg.seed, kTimelineStream);
    std::uniform_real_distribution<double> isi(cfg.isi_min, cfg.isi_max);
    for (double t = 0.0; t + kHrfSupport <= end; t += isi(rng)) onsets.push_back(t);
  } else {
    for (int e = 0; e < cfg.n_epochs; ++e) {
      const double t = e * cfg.isi;
      if (t < end) onsets.push_back(t);
    }
  }
  return onsets;
}

int condition_count(const SimConfig& cfg) { return static_cast<int>(cfg.betas.size()); }

StimulusTimeline activation_timeline(const SimConfig& cfg, const std::vector<double>& onsets, int onset_tr,
                                     int duration_tr) {
  StimulusTimeline tl;
  tl.L = condition_count(cfg);
  tl.tr = cfg.tr;
  tl.T = cfg.T;
  tl.events.resize(static_cast<std::size_t>(tl.L));
  const double end = cfg.T * cfg.tr;
  for (int l = 0; l < tl.L; ++l) {
    for (double o : onsets) {
      const double start = o + l * cfg.condition_offset + onset_tr * cfg.tr;
      if (start < end) tl.events[static_cast<std::size_t>(l)].push_back({start, duration_tr * cfg.tr});
    }
  }
  return tl;
}

// Stimulus weights on the fine grid: decay^i during the i-th TR of each event.
VectorXd weighted_stimulus(const std::vector<Event>& events, double tr, double dt, double decay, Eigen::Index n) {
  VectorXd s = VectorXd::Zero(n);
  const double tol = 1e-9 * dt;
  for (const auto& e : events) {
    const auto first = static_cast<Eigen::Index>(std::ceil((e.onset - tol) / dt));
    for (Eigen::Index i = std::max<Eigen::Index>(first, 0); i < n; ++i) {
      const double t = static_cast<double>(i) * dt;
      if (t >= e.onset + e.duration - tol) break;
      const double within = std::floor((t - e.onset) / tr + 1e-9);
      s[i] = std::max(s[i], std::pow(decay, within));
    }
  }
  return s;
}

double convolve_at(const VectorXd& s, const VectorXd& curve, double dt, Eigen::Index m) {
  const Eigen::Index gmax = std::min<Eigen::Index>(m, curve.size() - 1);
  double acc = 0.0;
  for (Eigen::Index g = 1; g <= gmax; ++g) {
    const Eigen::Index i = m - g;
    if (i < s.size()) acc += curve[g] * s[i];
  }
  return dt * acc;
}

VectorXd fine_response(const std::vector<Event>& events, double tr, const VectorXd& curve, double dt, double decay,
                       Eigen::Index n) {
  const VectorXd s = weighted_stimulus(events, tr, dt, decay, n);
  VectorXd r(n);
  for (Eigen::Index m = 0; m < n; ++m) r[m] = convolve_at(s, curve, dt, m);
  return r;
}

// The HRF a TR-long fitting event would need to reproduce the simulated
// response: decay-weighted copies of the canonical curve, one per TR of the event.
VectorXd impulse_equivalent(const std::vector<double>& grid, double canon_peak, int onset_tr, int duration_tr,
                            const SimConfig& cfg) {
  VectorXd h = VectorXd::Zero(static_cast<Eigen::Index>(grid.size()));
  for (int i = 0; i < duration_tr; ++i) {
    const double shift = (onset_tr + i) * cfg.tr;
    std::vector<double> times(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) times[g] = std::max(0.0, grid[g] - shift);
    const VectorXd c = canonical_hrf_curve(times);
    const double w = std::pow(cfg.decay, i);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      if (grid[g] >= shift) h[static_cast<Eigen::Index>(g)] += w * c[static_cast<Eigen::Index>(g)] / canon_peak;
    }
  }
  return h;
}

}  // namespace

int PhantomLayout::square_at(int x, int y) const {
  for (std::size_t i = 0; i < squares.size(); ++i) {
    const auto& s = squares[i];
    if (x >= s.x0 && x < s.x0 + size && y >= s.y0 && y < s.y0 + size) return static_cast<int>(i);
  }
  return -1;
}

PhantomLayout make_layout() {
  PhantomLayout lay;
  const int x_offset = 5;
  const int x_gap = 5;
  const int y_offset = 4;
  const int y_gap = 3;
  for (int row = 0; row < 5; ++row) {
    for (int col = 0; col < 5; ++col) {
      Square s;
      s.row = row;
      s.col = col;
      s.x0 = x_offset + col * (lay.size + x_gap);
      s.y0 = y_offset + row * (lay.size + y_gap);
      s.onset_tr = col;
      s.duration_tr = 1 + 2 * row;
      lay.squares.push_back(s);
    }
  }
  return lay;
}

SimConfig scenario_config(int scenario, std::uint64_t seed) {
  SimConfig c;
  c.scenario = scenario;
  c.seed = seed;
  switch (scenario) {
    case 1:
      break;
    case 2:
      c.theta_eps = 0.3;
      break;
    case 3:
      c.theta_eps = 0.3;
      c.subject_hrf_sd = 0.1;
      break;
    case 4:
      c.betas = {0.5, 1.0};
      break;
    case 5:
      c.random_isi = true;
      break;
    default:
      throw std::invalid_argument("unknown scenario " + std::to_string(scenario) + " (expected 1-5)");
  }
  return c;
}

VectorXd saturating_convolve(const StimulusTimeline& timeline, int condition, const VectorXd& hrf_curve, double dt,
                             double decay) {
  if (!(decay > 0.0 && decay <= 1.0)) throw std::invalid_argument("decay must lie in (0, 1]");
  timeline.validate();
  if (condition < 0 || condition >= timeline.L) throw std::invalid_argument("condition index out of range");
  const long steps = std::lround(timeline.tr / dt);
  const auto n = static_cast<Eigen::Index>(steps) * timeline.T;
  const VectorXd s = weighted_stimulus(timeline.events[static_cast<std::size_t>(condition)], timeline.tr, dt, decay, n);
  VectorXd out(timeline.T);
  for (int t = 0; t < timeline.T; ++t) out[t] = convolve_at(s, hrf_curve, dt, static_cast<Eigen::Index>(t + 1) * steps);
  return out;
}

StimulusTimeline fitting_timeline(const SimConfig& cfg) { return activation_timeline(cfg, trial_onsets(cfg), 0, 1); }

SimResult simulate_region(const SimConfig& cfg, const std::vector<VoxelSpec>& voxels, int nx, int ny) {
  if (cfg.n_subjects < 1) throw std::invalid_argument("need at least one subject");
  if (static_cast<long>(nx) * ny != static_cast<long>(voxels.size())) throw std::invalid_argument("grid does not match voxel count");
  if (cfg.betas.empty()) throw std::invalid_argument("need at least one condition");
  const int L = condition_count(cfg);
  const int V = static_cast<int>(voxels.size());
  const double dt = cfg.grid_dt;

  const BasisSystem basis = make_basis(kHrfSupport, cfg.hrf_K, cfg.hrf_order, dt);
  const auto grid = basis_grid(basis);
  VectorXd canon = canonical_hrf_curve(grid);
  const double canon_peak = canon.maxCoeff();
  canon /= canon_peak;
  const VectorXd canon_weights = project_to_basis(canon, basis).coeffs;

  // Scale so that the response to one unsaturated TR-long event peaks at 1.
  const auto n_fine = static_cast<Eigen::Index>(std::lround(kHrfSupport / dt));
  const VectorXd unit = fine_response({{0.0, cfg.tr}}, cfg.tr, canon, dt, 1.0, n_fine);
  const double kappa = 1.0 / unit.maxCoeff();

  const std::vector<double> onsets = trial_onsets(cfg);
  const double sigma = std::sqrt(cfg.sigma2_eps);
  VectorXd base(L);
  for (int l = 0; l < L; ++l) base[l] = cfg.betas[static_cast<std::size_t>(l)] * cfg.effect_size_d * sigma;

  SimResult res;
  Dataset& d = res.data;
  d.n_subjects = cfg.n_subjects;
  d.V = V;
  d.T = cfg.T;
  d.tr = cfg.tr;
  d.L = L;
  d.nx = nx;
  d.ny = ny;
  d.parcels.assign(static_cast<std::size_t>(V), 0);
  d.timeline = fitting_timeline(cfg);
  d.bold.assign(static_cast<std::size_t>(cfg.n_subjects), RowMatrixXd::Zero(V, cfg.T));

  using Key = std::pair<int, int>;
  std::map<Key, std::vector<VectorXd>> population;  // unit responses with the canonical curve
  for (const auto& vs : voxels) {
    if (!vs.active) continue;
    const Key key{vs.onset_tr, vs.duration_tr};
    if (population.count(key)) continue;
    const auto tl = activation_timeline(cfg, onsets, vs.onset_tr, vs.duration_tr);
    std::vector<VectorXd> resp;
    for (int l = 0; l < L; ++l) resp.push_back(kappa * saturating_convolve(tl, l, canon, dt, cfg.decay));
    population.emplace(key, std::move(resp));
  }

  const double innov_sd = sigma * std::sqrt(1.0 - cfg.theta_eps * cfg.theta_eps);
  for (int j = 0; j < cfg.n_subjects; ++j) {
    auto rng = make_rng(cfg.seed, static_cast<std::uint64_t>(j));
    std::normal_distribution<double> z(0.0, 1.0);

    std::map<Key, std::vector<VectorXd>> subject_resp;
    if (cfg.subject_hrf_sd > 0.0) {
      VectorXd w = canon_weights;
      for (Eigen::Index k = 0; k < w.size(); ++k) w[k] += cfg.subject_hrf_sd * z(rng);
      const VectorXd curve = basis.values * w;
      for (const auto& [key, unused] : population) {
        const auto tl = activation_timeline(cfg, onsets, key.first, key.second);
        std::vector<VectorXd> resp;
        for (int l = 0; l < L; ++l) resp.push_back(kappa * saturating_convolve(tl, l, curve, dt, cfg.decay));
        subject_resp.emplace(key, std::move(resp));
      }
    }
    const auto& responses = cfg.subject_hrf_sd > 0.0 ? subject_resp : population;

    RowMatrixXd& Y = d.bold[static_cast<std::size_t>(j)];
    for (int v = 0; v < V; ++v) {
      const auto& vs = voxels[static_cast<std::size_t>(v)];
      if (!vs.active) continue;
      const double delta = cfg.between_sd_ratio * sigma * z(rng);
      const auto& resp = responses.at({vs.onset_tr, vs.duration_tr});
      for (int l = 0; l < L; ++l) Y.row(v) += (base[l] + delta) * resp[static_cast<std::size_t>(l)].transpose();
    }
    for (int v = 0; v < V; ++v) {
      double prev = sigma * z(rng);
      Y(v, 0) += prev;
      for (int t = 1; t < cfg.T; ++t) {
        prev = cfg.theta_eps * prev + innov_sd * z(rng);
        Y(v, t) += prev;
      }
    }
  }

  // Ground truth in the model's own parameterization: the curve a TR-long
  // fitting event needs, projected on the basis and split into amplitude and unit shape.
  Truth& tr = res.truth;
  tr.nx = nx;
  tr.ny = ny;
  tr.L = L;
  tr.voxels.resize(static_cast<std::size_t>(V));
  std::map<Key, VoxelTruth> cache;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int v = 0; v < V; ++v) {
    const auto& vs = voxels[static_cast<std::size_t>(v)];
    VoxelTruth vt;
    if (vs.active) {
      const Key key{vs.onset_tr, vs.duration_tr};
      auto it = cache.find(key);
      if (it == cache.end()) {
        VoxelTruth t;
        t.active = true;
        t.onset_tr = vs.onset_tr;
        t.duration_tr = vs.duration_tr;
        const VectorXd curve = impulse_equivalent(grid, canon_peak, vs.onset_tr, vs.duration_tr, cfg);
        VectorXd g = project_to_basis(kappa * curve, basis).coeffs;
        const double scale = g.norm();
        g /= scale;
        const double sign = orient(g) ? -1.0 : 1.0;
        t.beta = sign * scale * base;
        const HrfSummary s = curve_summary(curve, dt);
        t.ttp = s.time_to_peak;
        t.fwhm = s.fwhm;
        it = cache.emplace(key, t).first;
      }
      vt = it->second;
    } else {
      vt.beta = VectorXd::Zero(L);
      vt.ttp = nan;
      vt.fwhm = nan;
    }
    vt.x = v % nx;
    vt.y = v / nx;
    tr.voxels[static_cast<std::size_t>(v)] = vt;
  }
  return res;
}

SimResult generate(const SimConfig& cfg) {
  const PhantomLayout lay = make_layout();
  std::vector<VoxelSpec> specs(static_cast<std::size_t>(lay.nx * lay.ny));
  for (int y = 0; y < lay.ny; ++y) {
    for (int x = 0; x < lay.nx; ++x) {
      const int s = lay.square_at(x, y);
      if (s < 0) continue;
      auto& vs = specs[static_cast<std::size_t>(y * lay.nx + x)];
      vs.active = true;
      vs.onset_tr = lay.squares[static_cast<std::size_t>(s)].onset_tr;
      vs.duration_tr = lay.squares[static_cast<std::size_t>(s)].duration_tr;
    }
  }
  return simulate_region(cfg, specs, lay.nx, lay.ny);
}

}  // namespace hhrf
