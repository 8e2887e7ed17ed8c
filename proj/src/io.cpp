#include "hhrf/io.hpp"

#include <json.hpp>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace hhrf::io {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U r = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) r = static_cast<U>((r << 8) | ((v >> (8 * i)) & 0xFF));
    return r;
  }
  return v;
}

class Writer {
 public:
  template <typename U>
  void put(U v) {
    if constexpr (std::is_same_v<U, double>) {
      put_raw(to_little(std::bit_cast<std::uint64_t>(v)));
    } else {
      put_raw(to_little(v));
    }
  }
  void bytes(const std::string& s) { buf_ += s; }
  std::string take() { return std::move(buf_); }

 private:
  template <typename U>
  void put_raw(U v) {
    char tmp[sizeof(U)];
    std::memcpy(tmp, &v, sizeof(U));
    buf_.append(tmp, sizeof(U));
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <typename U>
  U get() {
    if constexpr (std::is_same_v<U, double>) {
      return std::bit_cast<double>(get_raw<std::uint64_t>());
    } else {
      return get_raw<U>();
    }
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) throw FormatError("truncated file");
  }
  std::size_t remaining() const { return s_.size() - pos_; }

 private:
  template <typename U>
  U get_raw() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, s_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return to_little(v);
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

template <typename U>
U checked_cast(long long v, const char* what) {
  if (v < 0 || static_cast<unsigned long long>(v) > std::numeric_limits<U>::max())
    throw FormatError(std::string(what) + " does not fit the file format");
  return static_cast<U>(v);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::vector<std::string>> read_rows(const std::string& text, std::vector<std::string>* header) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      *header = split(line, ',');
      first = false;
      continue;
    }
    rows.push_back(split(line, ','));
  }
  if (first) throw FormatError("missing CSV header");
  return rows;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  if (s == "NA" || s == "nan" || s.empty()) return kNaN;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("bad number '" + s + "'");
  return v;
}

int parse_int(const std::string& s) {
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("bad integer '" + s + "'");
  return v;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw FormatError("missing column " + name);
}

json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
VectorXd json_vec(const json& j) {
  const auto s = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
}

void put_vec(Writer& w, const VectorXd& v, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) w.put<double>(i < v.size() ? v[i] : kNaN);
}
VectorXd get_vec(Reader& r, Eigen::Index n) {
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = r.get<double>();
  return v;
}

}  // namespace

std::string encode_dataset(const Dataset& d) {
  d.validate();
  Writer w;
  w.bytes("HHRF");
  w.put<std::uint16_t>(kFormatVersion);
  w.put(checked_cast<std::uint16_t>(d.n_subjects, "subject count"));
  w.put(checked_cast<std::uint32_t>(d.V, "voxel count"));
  w.put(checked_cast<std::uint32_t>(d.T, "scan count"));
  w.put<double>(d.tr);
  w.put(checked_cast<std::uint16_t>(d.L, "condition count"));
  w.put<std::uint16_t>(0);
  for (const auto& Y : d.bold)
    for (Eigen::Index v = 0; v < Y.rows(); ++v)
      for (Eigen::Index t = 0; t < Y.cols(); ++t) w.put<double>(Y(v, t));
  for (auto p : d.parcels) w.put<std::uint16_t>(p);
  const std::string csv = timeline_to_csv(d.timeline);
  w.put(checked_cast<std::uint32_t>(static_cast<long long>(csv.size()), "timeline"));
  w.bytes(csv);
  w.put(checked_cast<std::uint32_t>(d.nx, "grid width"));
  w.put(checked_cast<std::uint32_t>(d.ny, "grid height"));
  return w.take();
}

Dataset decode_dataset(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "HHRF") != 0) throw FormatError("not a HHRF file");
  Reader r(bytes);
  r.bytes(4);
  const auto version = r.get<std::uint16_t>();
  if (version != kFormatVersion) throw FormatError("unsupported HHRF version " + std::to_string(version));
  Dataset d;
  d.n_subjects = r.get<std::uint16_t>();
  d.V = static_cast<int>(r.get<std::uint32_t>());
  d.T = static_cast<int>(r.get<std::uint32_t>());
  d.tr = r.get<double>();
  d.L = r.get<std::uint16_t>();
  r.get<std::uint16_t>();
  const auto body = static_cast<unsigned long long>(d.n_subjects) * static_cast<unsigned long long>(d.V) *
                    static_cast<unsigned long long>(d.T) * 8ULL;
  if (body > r.remaining()) throw FormatError("truncated file: header declares more data than present");
  for (int j = 0; j < d.n_subjects; ++j) {
    RowMatrixXd Y(d.V, d.T);
    for (int v = 0; v < d.V; ++v)
      for (int t = 0; t < d.T; ++t) Y(v, t) = r.get<double>();
    d.bold.push_back(std::move(Y));
  }
  d.parcels.resize(static_cast<std::size_t>(d.V));
  for (auto& p : d.parcels) p = r.get<std::uint16_t>();
  const auto len = r.get<std::uint32_t>();
  const std::string csv = r.bytes(len);
  d.timeline = parse_timeline_csv(csv, d.tr, d.T, d.L);
  d.nx = static_cast<int>(r.get<std::uint32_t>());
  d.ny = static_cast<int>(r.get<std::uint32_t>());
  if (r.remaining() != 0) throw FormatError("trailing bytes after dataset");
  d.validate();
  return d;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_atomic(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw std::runtime_error("write failed for " + path.string());
    }
  }
  fs::rename(tmp, path);
}

void write_dataset(const Dataset& d, const fs::path& path) { write_atomic(path, encode_dataset(d)); }
Dataset read_dataset(const fs::path& path) { return decode_dataset(read_text(path)); }

std::string truth_to_csv(const Truth& t) {
  std::ostringstream out;
  out << "voxel_x,voxel_y,beta_true,onset_tr,duration_tr,ttp_s,fwhm_s";
  if (t.L > 1)
    for (int l = 0; l < t.L; ++l) out << ",beta_true_" << (l + 1);
  out << '\n';
  for (const auto& v : t.voxels) {
    const double b0 = v.beta.size() > 0 ? v.beta[0] : 0.0;
    out << v.x << ',' << v.y << ',' << fmt(b0) << ',';
    if (v.active) {
      out << v.onset_tr << ',' << v.duration_tr << ',' << fmt(v.ttp) << ',' << fmt(v.fwhm);
    } else {
      out << "NA,NA,NA,NA";
    }
    if (t.L > 1)
      for (int l = 0; l < t.L; ++l) out << ',' << fmt(l < v.beta.size() ? v.beta[l] : 0.0);
    out << '\n';
  }
  return out.str();
}

Truth truth_from_csv(const std::string& text) {
  std::vector<std::string> header;
  const auto rows = read_rows(text, &header);
  const auto cx = column(header, "voxel_x"), cy = column(header, "voxel_y"), cb = column(header, "beta_true"),
             co = column(header, "onset_tr"), cd = column(header, "duration_tr");
  std::vector<std::size_t> cl;
  for (int l = 1;; ++l) {
    bool found = false;
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == "beta_true_" + std::to_string(l)) {
        cl.push_back(i);
        found = true;
      }
    }
    if (!found) break;
  }
  auto optional_col = [&](const std::string& name) -> long {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<long>(i);
    return -1;
  };
  const long ct = optional_col("ttp_s"), cf = optional_col("fwhm_s");
  Truth t;
  t.L = cl.empty() ? 1 : static_cast<int>(cl.size());
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw FormatError("ragged truth CSV row");
    VoxelTruth v;
    v.x = parse_int(row[cx]);
    v.y = parse_int(row[cy]);
    v.active = row[co] != "NA";
    v.onset_tr = v.active ? parse_int(row[co]) : -1;
    v.duration_tr = v.active ? parse_int(row[cd]) : -1;
    v.ttp = ct >= 0 ? parse_double(row[static_cast<std::size_t>(ct)]) : kNaN;
    v.fwhm = cf >= 0 ? parse_double(row[static_cast<std::size_t>(cf)]) : kNaN;
    if (cl.empty()) {
      v.beta = VectorXd::Constant(1, parse_double(row[cb]));
    } else {
      v.beta.resize(static_cast<Eigen::Index>(cl.size()));
      for (std::size_t l = 0; l < cl.size(); ++l) v.beta[static_cast<Eigen::Index>(l)] = parse_double(row[cl[l]]);
    }
    t.nx = std::max(t.nx, v.x + 1);
    t.ny = std::max(t.ny, v.y + 1);
    t.voxels.push_back(v);
  }
  return t;
}

std::string config_to_json(const PipelineConfig& c) {
  json j;
  j["K"] = c.K;
  j["order"] = c.order;
  j["T_hrf"] = c.T_hrf;
  j["grid_dt"] = c.grid_dt;
  j["p"] = c.p;
  j["lambda0"] = c.lambda0;
  j["lambda"] = c.lambda;
  j["penalize_derivative"] = c.penalize_derivative;
  j["em_iters"] = c.em_iters;
  j["ml_voxels"] = c.ml_voxels;
  j["ml_max_iters"] = c.ml_max_iters;
  j["ml_tol"] = c.ml_tol;
  j["estimate_correlation"] = c.estimate_correlation;
  j["gls_tol"] = c.gls_tol;
  j["gls_max_iters"] = c.gls_max_iters;
  j["drift_order"] = c.drift_order;
  j["cosine_cutoff"] = c.cosine_cutoff;
  j["cv_lambda0"] = c.cv_lambda0;
  j["cv_folds"] = c.cv_folds;
  j["cv_grid"] = c.cv_grid;
  j["seed"] = c.seed;
  return j.dump(2) + "\n";
}

PipelineConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("config must be a JSON object");
  PipelineConfig c;
  static const std::vector<std::string> known{"K", "order", "T_hrf", "grid_dt", "p", "lambda0", "lambda",
                                              "penalize_derivative", "em_iters", "ml_voxels", "ml_max_iters",
                                              "ml_tol", "estimate_correlation", "gls_tol", "gls_max_iters",
                                              "drift_order", "cosine_cutoff", "cv_lambda0", "cv_folds", "cv_grid",
                                              "seed"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) throw FormatError("unknown config key " + key);
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("K", c.K);
    get("order", c.order);
    get("T_hrf", c.T_hrf);
    get("grid_dt", c.grid_dt);
    get("p", c.p);
    get("lambda0", c.lambda0);
    get("lambda", c.lambda);
    get("penalize_derivative", c.penalize_derivative);
    get("em_iters", c.em_iters);
    get("ml_voxels", c.ml_voxels);
    get("ml_max_iters", c.ml_max_iters);
    get("ml_tol", c.ml_tol);
    get("estimate_correlation", c.estimate_correlation);
    get("gls_tol", c.gls_tol);
    get("gls_max_iters", c.gls_max_iters);
    get("drift_order", c.drift_order);
    get("cosine_cutoff", c.cosine_cutoff);
    get("cv_lambda0", c.cv_lambda0);
    get("cv_folds", c.cv_folds);
    get("cv_grid", c.cv_grid);
    get("seed", c.seed);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad config value: ") + e.what());
  }
  if (c.K < 2 || c.order < 1 || c.p < 0 || c.lambda0 < 0.0 || c.lambda < 0.0 || c.em_iters < 0 || c.ml_voxels < 0)
    throw FormatError("config value out of range");
  return c;
}

void write_fit(const FitResult& f, const fs::path& dir) {
  fs::create_directories(dir);
  const int K = f.config.K;
  const int L = f.L;
  const int KL = K * L;
  json j;
  j["config"] = json::parse(config_to_json(f.config));
  j["n_subjects"] = f.n_subjects;
  j["V"] = f.V;
  j["T"] = f.T;
  j["L"] = f.L;
  j["nx"] = f.nx;
  j["ny"] = f.ny;
  j["tr"] = f.tr;
  j["lambda0_eff"] = f.lambda0_eff;
  json parcels = json::array();
  for (std::size_t i = 0; i < f.parcel_ids.size(); ++i) {
    const ArParams& a = f.parcel_noise[i];
    parcels.push_back({{"id", f.parcel_ids[i]},
                       {"p", a.p},
                       {"theta", vec_json(a.theta)},
                       {"sigma2", a.sigma2},
                       {"innovation_var", a.innovation_var},
                       {"lambda_eff", f.lambda_eff[i]}});
  }
  j["parcels"] = parcels;
  json rho = json::array();
  for (const auto& r : f.rho) rho.push_back(vec_json(r));
  j["rho"] = rho;
  j["rho_repaired"] = f.rho_repaired;
  j["ml_sample"] = f.ml_sample;
  j["ml_improved"] = f.ml_improved;

  Writer w;
  for (const auto& v : f.voxels) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(v.status));
    w.put<std::uint8_t>(v.converged ? 1 : 0);
    w.put<std::uint8_t>(v.vls_ridge ? 1 : 0);
    w.put<std::uint8_t>(v.bracket_failed ? 1 : 0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v.iterations));
    w.put<double>(v.C_lagrange);
    w.put<double>(v.n_lambda);
    w.put<double>(v.pilot_stat);
    w.put<double>(v.pilot_p);
    w.put<double>(v.pilot_df);
    put_vec(w, v.h_hat, KL);
    put_vec(w, v.beta, L);
    put_vec(w, v.gamma, K);
    put_vec(w, v.sigma2_xi, L);
    put_vec(w, v.eta, KL);
    for (int a = 0; a < KL; ++a)
      for (int b = 0; b < KL; ++b) w.put<double>(v.M.size() ? v.M(a, b) : 0.0);
  }
  write_atomic(dir / "voxels.bin", w.take());
  write_atomic(dir / "fit.json", j.dump(2) + "\n");
}

FitResult read_fit(const fs::path& dir) {
  json j;
  try {
    j = json::parse(read_text(dir / "fit.json"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad fit.json: ") + e.what());
  }
  FitResult f;
  f.config = config_from_json(j.at("config").dump());
  f.n_subjects = j.at("n_subjects");
  f.V = j.at("V");
  f.T = j.at("T");
  f.L = j.at("L");
  f.nx = j.at("nx");
  f.ny = j.at("ny");
  f.tr = j.at("tr");
  f.lambda0_eff = j.at("lambda0_eff");
  for (const auto& p : j.at("parcels")) {
    f.parcel_ids.push_back(p.at("id"));
    ArParams a;
    a.p = p.at("p");
    a.theta = json_vec(p.at("theta"));
    a.sigma2 = p.at("sigma2");
    a.innovation_var = p.at("innovation_var");
    a.parcel_id = p.at("id");
    f.parcel_noise.push_back(a);
    f.lambda_eff.push_back(p.at("lambda_eff"));
  }
  for (const auto& r : j.at("rho")) f.rho.push_back(json_vec(r));
  f.rho_repaired = j.at("rho_repaired");
  f.ml_sample = j.at("ml_sample").get<std::vector<int>>();
  f.ml_improved = j.at("ml_improved");

  const int K = f.config.K;
  const int L = f.L;
  const int KL = K * L;
  const std::string bytes = read_text(dir / "voxels.bin");
  const std::size_t per = 4 + 4 + 5 * 8 + 8 * static_cast<std::size_t>(KL + L + K + L + KL + KL * KL);
  if (bytes.size() != per * static_cast<std::size_t>(f.V)) throw FormatError("voxels.bin size does not match fit.json");
  Reader r(bytes);
  f.voxels.resize(static_cast<std::size_t>(f.V));
  for (auto& v : f.voxels) {
    const auto st = r.get<std::uint8_t>();
    if (st > 2) throw FormatError("bad voxel status");
    v.status = static_cast<FitStatus>(st);
    v.converged = r.get<std::uint8_t>() != 0;
    v.vls_ridge = r.get<std::uint8_t>() != 0;
    v.bracket_failed = r.get<std::uint8_t>() != 0;
    v.iterations = static_cast<int>(r.get<std::uint32_t>());
    v.C_lagrange = r.get<double>();
    v.n_lambda = r.get<double>();
    v.pilot_stat = r.get<double>();
    v.pilot_p = r.get<double>();
    v.pilot_df = r.get<double>();
    v.h_hat = get_vec(r, KL);
    v.beta = get_vec(r, L);
    v.gamma = get_vec(r, K);
    v.sigma2_xi = get_vec(r, L);
    v.eta = get_vec(r, KL);
    v.M.resize(KL, KL);
    for (int a = 0; a < KL; ++a)
      for (int b = 0; b < KL; ++b) v.M(a, b) = r.get<double>();
  }
  return f;
}

std::string map_to_csv(const std::vector<MapRow>& rows) {
  std::string out = "x,y,stat,p,rejected\n";
  for (const auto& r : rows)
    out += std::to_string(r.x) + ',' + std::to_string(r.y) + ',' + fmt(r.stat) + ',' + fmt(r.p) + ',' +
           (r.rejected ? "1" : "0") + '\n';
  return out;
}

std::vector<MapRow> map_from_csv(const std::string& text) {
  std::vector<std::string> header;
  const auto rows = read_rows(text, &header);
  const auto cx = column(header, "x"), cy = column(header, "y"), cs = column(header, "stat"),
             cp = column(header, "p"), cr = column(header, "rejected");
  std::vector<MapRow> out;
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw FormatError("ragged map CSV row");
    out.push_back({parse_int(row[cx]), parse_int(row[cy]), parse_double(row[cs]), parse_double(row[cp]),
                   row[cr] == "1"});
  }
  return out;
}

PgmImage to_pgm(const std::vector<double>& values, int nx, int ny, const std::string& label) {
  if (nx <= 0 || ny <= 0 || static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) != values.size())
    throw std::invalid_argument("image size does not match the value count");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const bool any = lo <= hi;
  PgmImage img;
  img.pgm = "P5\n" + std::to_string(nx) + " " + std::to_string(ny) + "\n255\n";
  for (double v : values) {
    int g = 0;
    if (any && std::isfinite(v)) g = hi > lo ? static_cast<int>(std::lround(255.0 * (v - lo) / (hi - lo))) : 255;
    img.pgm.push_back(static_cast<char>(static_cast<unsigned char>(g)));
  }
  json side;
  side["label"] = label;
  side["width"] = nx;
  side["height"] = ny;
  side["min"] = any ? json(lo) : json(nullptr);
  side["max"] = any ? json(hi) : json(nullptr);
  side["scale"] = "gray = round(255 * (value - min) / (max - min)); non-finite values are 0";
  img.sidecar = side.dump(2) + "\n";
  return img;
}

}  // namespace hhrf::io
