#include "hhrf/workflow.hpp"

#include "hhrf/infer.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace hhrf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  if (s == "NA" || s.empty()) return kNaN;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw io::FormatError("bad number '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void apply_fdr(std::vector<io::MapRow>& rows, double q, double* p_star) {
  std::vector<double> p;
  p.reserve(rows.size());
  for (const auto& r : rows) p.push_back(r.p);
  const FdrResult f = fdr_mask(p, q);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rejected = f.mask[i];
  *p_star = f.p_star;
}

std::string estimates_csv(const StatMaps& m) {
  const int L = m.estimates.empty() ? 1 : static_cast<int>(m.estimates.front().beta.size());
  std::string out = "x,y,status";
  for (int l = 1; l <= L; ++l) out += ",beta_" + std::to_string(l);
  out += ",ttp_s,fwhm_s,pilot_stat,pilot_p\n";
  for (const auto& e : m.estimates) {
    out += std::to_string(e.x) + ',' + std::to_string(e.y) + ',' + std::to_string(e.status);
    for (int l = 0; l < L; ++l) out += ',' + fmt(e.beta[l]);
    out += ',' + fmt(e.ttp) + ',' + fmt(e.fwhm) + ',' + fmt(e.pilot_stat) + ',' + fmt(e.pilot_p) + '\n';
  }
  return out;
}

std::vector<double> grid_values(const std::vector<io::MapRow>& rows, int nx, int ny, bool mask) {
  std::vector<double> g(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny), kNaN);
  for (const auto& r : rows) {
    if (r.x < 0 || r.x >= nx || r.y < 0 || r.y >= ny) continue;
    g[static_cast<std::size_t>(r.y) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(r.x)] =
        mask ? (r.rejected ? 1.0 : 0.0) : r.stat;
  }
  return g;
}

struct Acc {
  double sum = 0.0;
  int n = 0;
  void add(double v) {
    if (std::isfinite(v)) {
      sum += v;
      ++n;
    }
  }
  double mean() const { return n > 0 ? sum / n : kNaN; }
};

}  // namespace

ShapeModel shape_model(const PipelineConfig& cfg) {
  ShapeModel s;
  s.basis = make_basis(cfg.T_hrf, cfg.K, cfg.order, cfg.grid_dt);
  s.canonical = canonical_hrf(s.basis);
  std::vector<VectorXd> refs{s.canonical.coeffs};
  if (cfg.penalize_derivative) refs.push_back(s.canonical.deriv_coeffs);
  s.penalty = penalty_projection(s.basis, refs);
  return s;
}

StatMaps infer_maps(const FitResult& fit, const InferOptions& opt) {
  if (opt.contrast.size() != fit.L) throw std::invalid_argument("contrast length must equal the condition count");
  const ShapeModel sm = shape_model(fit.config);
  StatMaps m;
  m.nx = fit.nx;
  m.ny = fit.ny;
  m.test = opt.activation == ActivationTest::pilot_wald ? "pilot_wald" : "contrast_z";
  const auto V = fit.voxels.size();
  m.activation.resize(V);
  m.shape.resize(V);
  m.estimates.resize(V);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(V); ++i) {
    const auto v = static_cast<std::size_t>(i);
    const VoxelResult& r = fit.voxels[v];
    const int x = fit.nx > 0 ? static_cast<int>(i) % fit.nx : static_cast<int>(i);
    const int y = fit.nx > 0 ? static_cast<int>(i) / fit.nx : 0;
    io::MapRow act{x, y, kNaN, kNaN, false};
    if (opt.activation == ActivationTest::pilot_wald) {
      act.stat = r.pilot_stat;
      act.p = r.pilot_p;
    } else {
      const TestResult t = contrast_test(to_voxel_fit(r), opt.contrast);
      act.stat = t.stat;
      act.p = t.p;
    }
    m.activation[v] = act;
    EstimateRow e;
    e.x = x;
    e.y = y;
    e.status = static_cast<int>(r.status);
    e.beta = r.beta.size() == fit.L ? r.beta : VectorXd::Constant(fit.L, kNaN);
    e.pilot_stat = r.pilot_stat;
    e.pilot_p = r.pilot_p;
    e.ttp = kNaN;
    e.fwhm = kNaN;
    if (r.status == FitStatus::ok) {
      const HrfSummary hs = hrf_summary(r.gamma, opt.contrast.dot(r.beta), sm.basis);
      e.ttp = hs.time_to_peak;
      e.fwhm = hs.fwhm;
    }
    m.estimates[v] = e;
  }
  apply_fdr(m.activation, opt.q, &m.p_star);
  // Shape inference runs on every identified voxel, or only on activated ones in the pilot workflow.
  for (std::size_t v = 0; v < V; ++v) {
    const VoxelResult& r = fit.voxels[v];
    io::MapRow sh{m.activation[v].x, m.activation[v].y, kNaN, kNaN, false};
    const bool eligible =
        r.status == FitStatus::ok && (opt.activation != ActivationTest::pilot_wald || m.activation[v].rejected);
    if (eligible) {
      const TestResult t =
          shape_chi2_penalized(r.M, r.beta, r.gamma, r.C_lagrange, sm.penalty.P, r.n_lambda, sm.canonical.coeffs);
      sh.stat = t.stat;
      sh.p = t.p;
    }
    m.shape[v] = sh;
  }
  apply_fdr(m.shape, opt.q, &m.shape_p_star);
  return m;
}

StatMaps baseline_maps(const OlsResult& ols, double q) {
  StatMaps m;
  m.nx = ols.nx;
  m.ny = ols.ny;
  m.test = "ols_t";
  for (std::size_t v = 0; v < ols.voxels.size(); ++v) {
    const OlsVoxel& o = ols.voxels[v];
    const int x = ols.nx > 0 ? static_cast<int>(v) % ols.nx : static_cast<int>(v);
    const int y = ols.nx > 0 ? static_cast<int>(v) / ols.nx : 0;
    m.activation.push_back({x, y, o.test.t, o.test.p, false});
    EstimateRow e;
    e.x = x;
    e.y = y;
    e.status = o.rejected_model ? 2 : 0;
    e.beta = VectorXd::Constant(ols.L, kNaN);
    if (!o.beta_subject.empty()) {
      e.beta.setZero();
      for (const auto& b : o.beta_subject) e.beta += b;
      e.beta /= static_cast<double>(o.beta_subject.size());
    }
    e.ttp = kNaN;
    e.fwhm = kNaN;
    e.pilot_stat = kNaN;
    e.pilot_p = kNaN;
    m.estimates.push_back(e);
  }
  apply_fdr(m.activation, q, &m.p_star);
  return m;
}

void write_maps(const StatMaps& maps, const io::fs::path& dir) {
  io::fs::create_directories(dir);
  io::write_atomic(dir / "activation.csv", io::map_to_csv(maps.activation));
  io::write_atomic(dir / "estimates.csv", estimates_csv(maps));
  if (!maps.shape.empty()) io::write_atomic(dir / "shape.csv", io::map_to_csv(maps.shape));
  if (maps.nx > 0 && maps.ny > 0) {
    const auto stat = io::to_pgm(grid_values(maps.activation, maps.nx, maps.ny, false), maps.nx, maps.ny,
                                 maps.test + " statistic");
    io::write_atomic(dir / "activation.pgm", stat.pgm);
    io::write_atomic(dir / "activation.pgm.json", stat.sidecar);
    const auto mask =
        io::to_pgm(grid_values(maps.activation, maps.nx, maps.ny, true), maps.nx, maps.ny, "FDR mask");
    io::write_atomic(dir / "mask.pgm", mask.pgm);
    io::write_atomic(dir / "mask.pgm.json", mask.sidecar);
  }
  nlohmann::json j;
  j["test"] = maps.test;
  j["p_star"] = maps.p_star;
  j["shape_p_star"] = maps.shape_p_star;
  j["nx"] = maps.nx;
  j["ny"] = maps.ny;
  io::write_atomic(dir / "maps.json", j.dump(2) + "\n");
}

StatMaps read_maps(const io::fs::path& dir) {
  StatMaps m;
  m.activation = io::map_from_csv(io::read_text(dir / "activation.csv"));
  for (const auto& r : m.activation) {
    m.nx = std::max(m.nx, r.x + 1);
    m.ny = std::max(m.ny, r.y + 1);
  }
  if (io::fs::exists(dir / "estimates.csv")) {
    std::istringstream in(io::read_text(dir / "estimates.csv"));
    std::string line;
    std::getline(in, line);
    const auto header = split(line);
    std::vector<std::size_t> beta_cols;
    std::size_t cttp = 0, cfwhm = 0;
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i].rfind("beta_", 0) == 0) beta_cols.push_back(i);
      if (header[i] == "ttp_s") cttp = i;
      if (header[i] == "fwhm_s") cfwhm = i;
    }
    if (beta_cols.empty() || cttp == 0 || cfwhm == 0) throw io::FormatError("bad estimates.csv header");
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto row = split(line);
      if (row.size() != header.size()) throw io::FormatError("ragged estimates.csv row");
      EstimateRow e;
      e.x = std::stoi(row[0]);
      e.y = std::stoi(row[1]);
      e.status = std::stoi(row[2]);
      e.beta.resize(static_cast<Eigen::Index>(beta_cols.size()));
      for (std::size_t l = 0; l < beta_cols.size(); ++l)
        e.beta[static_cast<Eigen::Index>(l)] = parse_double(row[beta_cols[l]]);
      e.ttp = parse_double(row[cttp]);
      e.fwhm = parse_double(row[cfwhm]);
      m.estimates.push_back(e);
    }
  }
  return m;
}

std::string report_csv(const StatMaps& maps, const Truth& truth) {
  std::map<std::pair<int, int>, const VoxelTruth*> by_xy;
  for (const auto& v : truth.voxels) by_xy[{v.x, v.y}] = &v;
  std::map<std::pair<int, int>, const EstimateRow*> est;
  for (const auto& e : maps.estimates) est[{e.x, e.y}] = &e;

  struct Group {
    int n = 0;
    int hits = 0;
    Acc bias, ttp_true, ttp_est, fwhm_true, fwhm_est;
  };
  std::map<std::pair<int, int>, Group> groups;
  int null_n = 0, null_fp = 0, tp = 0, active_n = 0;
  for (const auto& r : maps.activation) {
    const auto it = by_xy.find({r.x, r.y});
    if (it == by_xy.end()) throw std::invalid_argument("map voxel missing from the truth table");
    const VoxelTruth& t = *it->second;
    if (!t.active) {
      ++null_n;
      null_fp += r.rejected;
      continue;
    }
    ++active_n;
    tp += r.rejected;
    Group& g = groups[{t.onset_tr, t.duration_tr}];
    ++g.n;
    g.hits += r.rejected;
    g.ttp_true.add(t.ttp);
    g.fwhm_true.add(t.fwhm);
    const auto e = est.find({r.x, r.y});
    if (e != est.end()) {
      if (e->second->beta.size() > 0 && t.beta.size() > 0) g.bias.add(e->second->beta[0] - t.beta[0]);
      g.ttp_est.add(e->second->ttp);
      g.fwhm_est.add(e->second->fwhm);
    }
  }
  const int rejected = tp + null_fp;
  std::string out =
      "group,onset_tr,duration_tr,n_voxels,sensitivity,specificity,fdp,beta_bias,ttp_true_s,ttp_est_s,fwhm_true_s,"
      "fwhm_est_s\n";
  for (const auto& [key, g] : groups) {
    out += "square," + std::to_string(key.first) + ',' + std::to_string(key.second) + ',' + std::to_string(g.n) + ',' +
           fmt(static_cast<double>(g.hits) / g.n) + ",NA,NA," + fmt(g.bias.mean()) + ',' + fmt(g.ttp_true.mean()) +
           ',' + fmt(g.ttp_est.mean()) + ',' + fmt(g.fwhm_true.mean()) + ',' + fmt(g.fwhm_est.mean()) + '\n';
  }
  out += "null,NA,NA," + std::to_string(null_n) + ",NA," +
         fmt(null_n > 0 ? 1.0 - static_cast<double>(null_fp) / null_n : kNaN) + ",NA,NA,NA,NA,NA,NA\n";
  out += "all,NA,NA," + std::to_string(null_n + active_n) + ',' +
         fmt(active_n > 0 ? static_cast<double>(tp) / active_n : kNaN) + ',' +
         fmt(null_n > 0 ? 1.0 - static_cast<double>(null_fp) / null_n : kNaN) + ',' +
         fmt(rejected > 0 ? static_cast<double>(null_fp) / rejected : 0.0) + ",NA,NA,NA,NA,NA\n";
  return out;
}

}  // namespace hhrf
