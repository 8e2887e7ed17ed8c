#include "hhrf/design.hpp"

#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

namespace hhrf {

void StimulusTimeline::validate() const {
  if (!(tr > 0.0)) throw std::invalid_argument("repetition time must be positive");
  if (T <= 0) throw std::invalid_argument("scan count must be positive");
  if (L < 1 || static_cast<int>(events.size()) != L) throw std::invalid_argument("timeline condition count mismatch");
  const double end = T * tr;
  for (const auto& cond : events) {
    for (const auto& e : cond) {
      if (!(e.onset >= 0.0) || !(e.onset < end)) throw std::invalid_argument("event onset outside the acquisition window");
      if (!(e.duration >= 0.0)) throw std::invalid_argument("negative event duration");
    }
  }
}

std::vector<VectorXd> sample_stimulus(const StimulusTimeline& stim, double dt, bool* truncated) {
  stim.validate();
  const double end = stim.T * stim.tr;
  const auto n = static_cast<Eigen::Index>(std::llround(end / dt));
  const double tol = 1e-9 * dt;
  bool cut = false;
  std::vector<VectorXd> u;
  u.reserve(static_cast<std::size_t>(stim.L));
  for (const auto& cond : stim.events) {
    VectorXd s = VectorXd::Zero(n);
    for (const auto& e : cond) {
      if (e.onset + e.duration > end + tol) cut = true;
      const auto first = static_cast<Eigen::Index>(std::ceil((e.onset - tol) / dt));
      for (Eigen::Index i = std::max<Eigen::Index>(first, 0); i < n; ++i) {
        const double t = static_cast<double>(i) * dt;
        if (t >= e.onset + e.duration - tol) break;
        s[i] = 1.0;
      }
    }
    u.push_back(std::move(s));
  }
  if (truncated) *truncated = cut;
  return u;
}

DesignMatrix build_design(const StimulusTimeline& stim, const BasisSystem& basis) {
  const double dt = basis.grid_dt;
  if (dt > stim.tr * (1.0 + 1e-12)) throw std::invalid_argument("basis grid must be at least as fine as the TR");
  const double ratio = stim.tr / dt;
  const long steps = std::lround(ratio);
  if (std::abs(ratio - static_cast<double>(steps)) > 1e-9 * ratio) throw std::invalid_argument("TR must be a multiple of the basis grid spacing");

  DesignMatrix d;
  const auto u = sample_stimulus(stim, dt, &d.truncated);
  const int K = basis.K;
  const Eigen::Index G = basis.values.rows();
  d.X = MatrixXd::Zero(stim.T, static_cast<Eigen::Index>(K) * stim.L);
  VectorXd w(G);
  for (int l = 0; l < stim.L; ++l) {
    const VectorXd& s = u[static_cast<std::size_t>(l)];
    for (int t = 0; t < stim.T; ++t) {
      const Eigen::Index m = static_cast<Eigen::Index>(t + 1) * steps;
      w.setZero();
      const Eigen::Index gmax = std::min(m, G - 1);
      for (Eigen::Index g = 1; g <= gmax; ++g) {
        const Eigen::Index i = m - g;
        if (i < s.size()) w[g] = s[i];
      }
      d.X.block(t, static_cast<Eigen::Index>(l) * K, 1, K) = dt * (w.transpose() * basis.values);
    }
  }
  return d;
}

MatrixXd build_nuisance(int T, double tr, int drift_poly_order, std::optional<double> cosine_cutoff) {
  if (T <= 0) throw std::invalid_argument("scan count must be positive");
  if (drift_poly_order < 0) throw std::invalid_argument("drift order must be nonnegative");
  std::vector<VectorXd> cols;
  const double half = T > 1 ? 0.5 * (T - 1) : 1.0;
  for (int p = 0; p <= drift_poly_order; ++p) {
    VectorXd c(T);
    for (int t = 0; t < T; ++t) c[t] = std::pow((t - 0.5 * (T - 1)) / half, p);
    cols.push_back(std::move(c));
  }
  if (cosine_cutoff) {
    if (!(*cosine_cutoff > 0.0)) throw std::invalid_argument("cosine cutoff must be positive");
    for (int k = 1;; ++k) {
      if (!(k / (2.0 * T * tr) < 1.0 / *cosine_cutoff)) break;
      VectorXd c(T);
      for (int t = 0; t < T; ++t) c[t] = std::cos(std::numbers::pi * k * (t + 0.5) / T);
      cols.push_back(std::move(c));
    }
  }
  if (static_cast<int>(cols.size()) >= T) throw std::invalid_argument("too many nuisance columns for the scan count");

  MatrixXd Phi(T, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    VectorXd v = cols[j];
    for (std::size_t i = 0; i < j; ++i) {
      const auto ci = Phi.col(static_cast<Eigen::Index>(i));
      v -= ci.dot(v) * ci;
    }
    const double norm = v.norm();
    if (norm < 1e-10 * std::sqrt(static_cast<double>(T))) throw std::invalid_argument("nuisance columns are collinear");
    Phi.col(static_cast<Eigen::Index>(j)) = v / norm;
  }
  return Phi;
}

MatrixXd projector(const MatrixXd& Phi) {
  const Eigen::Index T = Phi.rows();
  Eigen::LDLT<MatrixXd> ldlt(Phi.transpose() * Phi);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-12) throw std::invalid_argument("nuisance matrix is rank deficient");
  MatrixXd R = MatrixXd::Identity(T, T) - Phi * ldlt.solve(Phi.transpose());
  return symmetrize(R);
}

MatrixXd gls_projector(const MatrixXd& Phi, const MatrixXd& Vinv) {
  const Eigen::Index T = Phi.rows();
  const MatrixXd WPhi = Vinv * Phi;
  Eigen::LDLT<MatrixXd> ldlt(Phi.transpose() * WPhi);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-12 || !ldlt.isPositive()) {
    throw std::invalid_argument("Phi' V^-1 Phi is rank deficient");
  }
  return MatrixXd::Identity(T, T) - Phi * ldlt.solve(WPhi.transpose());
}

VectorXd apply_projector(const MatrixXd& Phi, const VectorXd& y) {
  Eigen::LDLT<MatrixXd> ldlt(Phi.transpose() * Phi);
  return y - Phi * ldlt.solve(Phi.transpose() * y);
}

namespace {

double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::invalid_argument("bad number in timeline: '" + std::string(s) + "'");
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

StimulusTimeline parse_timeline_csv(const std::string& text, double tr, int T, int L) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("timeline CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "condition,onset_s,duration_s") throw std::invalid_argument("timeline CSV header must be condition,onset_s,duration_s");

  std::vector<std::pair<int, Event>> rows;
  int max_label = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos) throw std::invalid_argument("timeline row needs three fields: " + line);
    const double label = parse_double(std::string_view(line).substr(0, c1));
    if (label < 1.0 || label != std::floor(label)) throw std::invalid_argument("condition labels are positive integers");
    Event e;
    e.onset = parse_double(std::string_view(line).substr(c1 + 1, c2 - c1 - 1));
    e.duration = parse_double(std::string_view(line).substr(c2 + 1));
    rows.emplace_back(static_cast<int>(label), e);
    max_label = std::max(max_label, static_cast<int>(label));
  }
  StimulusTimeline stim;
  stim.tr = tr;
  stim.T = T;
  stim.L = L > 0 ? L : max_label;
  if (max_label > stim.L) throw std::invalid_argument("condition label exceeds condition count");
  stim.events.resize(static_cast<std::size_t>(stim.L));
  for (const auto& [label, e] : rows) stim.events[static_cast<std::size_t>(label - 1)].push_back(e);
  stim.validate();
  return stim;
}

std::string timeline_to_csv(const StimulusTimeline& stim) {
  std::string out = "condition,onset_s,duration_s\n";
  for (int l = 0; l < stim.L; ++l) {
    for (const auto& e : stim.events[static_cast<std::size_t>(l)]) {
      out += std::to_string(l + 1) + "," + format_double(e.onset) + "," + format_double(e.duration) + "\n";
    }
  }
  return out;
}

}  // namespace hhrf
