#include "hhrf/io.hpp"
#include "hhrf/workflow.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace hhrf;
namespace fs = std::filesystem;

namespace {

SimResult small_sim(int scenario = 1, std::uint64_t seed = 2) {
  SimConfig cfg = scenario_config(scenario, seed);
  cfg.n_subjects = 3;
  cfg.T = 90;
  std::vector<VoxelSpec> vox(6);
  vox[0] = {true, 0, 1};
  vox[4] = {true, 1, 3};
  return simulate_region(cfg, vox, 3, 2);
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hhrf_unit_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("dataset encoding round trips byte for byte") {
  const SimResult s = small_sim(4);
  const std::string bytes = io::encode_dataset(s.data);
  CHECK(bytes.substr(0, 4) == "HHRF");
  const Dataset d = io::decode_dataset(bytes);
  CHECK(io::encode_dataset(d) == bytes);
  CHECK(d.L == 2);
  CHECK(d.nx == 3);
  for (int j = 0; j < d.n_subjects; ++j) CHECK((d.bold[static_cast<std::size_t>(j)] - s.data.bold[static_cast<std::size_t>(j)]).norm() == 0.0);
}

TEST_CASE("dataset decoding rejects malformed input") {
  const std::string bytes = io::encode_dataset(small_sim().data);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(io::decode_dataset(bad), "not a HHRF file", io::FormatError);
  bad = bytes;
  bad[4] = 9;
  CHECK_THROWS_AS(io::decode_dataset(bad), io::FormatError);
  CHECK_THROWS_WITH_AS(io::decode_dataset(bytes.substr(0, bytes.size() / 2)),
                       "truncated file: header declares more data than present", io::FormatError);
  CHECK_THROWS_AS(io::decode_dataset(bytes + "x"), io::FormatError);
  CHECK_THROWS_AS(io::decode_dataset(""), io::FormatError);
}

TEST_CASE("truth sidecar round trip") {
  const SimResult s = small_sim(4);
  const std::string csv = io::truth_to_csv(s.truth);
  CHECK(csv.rfind("voxel_x,voxel_y,beta_true,onset_tr,duration_tr,ttp_s,fwhm_s", 0) == 0);
  const Truth t = io::truth_from_csv(csv);
  REQUIRE(t.voxels.size() == s.truth.voxels.size());
  CHECK(t.L == 2);
  for (std::size_t v = 0; v < t.voxels.size(); ++v) {
    const auto& a = s.truth.voxels[v];
    const auto& b = t.voxels[v];
    CHECK(a.active == b.active);
    CHECK((a.beta - b.beta).norm() == 0.0);
    if (a.active) CHECK(a.ttp == b.ttp);
    else CHECK(std::isnan(b.ttp));
  }
  CHECK(io::truth_to_csv(t) == csv);
}

TEST_CASE("config JSON round trip and validation") {
  PipelineConfig c;
  c.K = 12;
  c.lambda = 0.25;
  c.cv_grid = {0.5, 2.0};
  c.seed = 99;
  const PipelineConfig r = io::config_from_json(io::config_to_json(c));
  CHECK(r.K == 12);
  CHECK(r.lambda == 0.25);
  CHECK(r.cv_grid == std::vector<double>{0.5, 2.0});
  CHECK(r.seed == 99);
  CHECK(io::config_to_json(r) == io::config_to_json(c));
  CHECK_THROWS(io::config_from_json(R"({"K": 12, "bogus": 1})"));
  CHECK_THROWS(io::config_from_json(R"({"K": 0})"));
  CHECK_THROWS(io::config_from_json("not json"));
}

TEST_CASE("fit directory round trip") {
  const SimResult s = small_sim();
  PipelineConfig cfg;
  cfg.K = 8;
  cfg.ml_voxels = 6;
  const FitResult f = fit_all(s.data, cfg);
  const fs::path dir = scratch_dir("fit");
  io::write_fit(f, dir);
  const FitResult g = io::read_fit(dir);
  CHECK(g.V == f.V);
  CHECK(g.lambda0_eff == f.lambda0_eff);
  CHECK(g.rho.size() == f.rho.size());
  CHECK((g.rho[0] - f.rho[0]).norm() == 0.0);
  CHECK(g.parcel_noise[0].theta == f.parcel_noise[0].theta);
  for (std::size_t v = 0; v < f.voxels.size(); ++v) {
    const auto& a = f.voxels[v];
    const auto& b = g.voxels[v];
    CHECK(a.status == b.status);
    CHECK(a.converged == b.converged);
    CHECK(a.C_lagrange == b.C_lagrange);
    CHECK(a.pilot_p == b.pilot_p);
    if (a.status != FitStatus::ok) continue;
    CHECK((a.beta - b.beta).norm() == 0.0);
    CHECK((a.gamma - b.gamma).norm() == 0.0);
    CHECK((a.M - b.M).norm() == 0.0);
  }
  // Truncated voxel table is refused.
  const fs::path vb = dir / "voxels.bin";
  fs::resize_file(vb, fs::file_size(vb) - 8);
  CHECK_THROWS(io::read_fit(dir));
  fs::remove_all(dir);
}

TEST_CASE("map tables and PGM export") {
  std::vector<io::MapRow> rows{{0, 0, 1.5, 0.01, true}, {1, 0, -0.25, std::nan(""), false}};
  const std::string csv = io::map_to_csv(rows);
  CHECK(csv.rfind("x,y,stat,p,rejected\n", 0) == 0);
  const auto back = io::map_from_csv(csv);
  REQUIRE(back.size() == 2);
  CHECK(back[0].stat == 1.5);
  CHECK(back[0].rejected);
  CHECK(std::isnan(back[1].p));
  const io::PgmImage img = io::to_pgm({0.0, 1.0, 2.0, std::nan("")}, 2, 2, "z");
  CHECK(img.pgm.rfind("P5\n2 2\n255\n", 0) == 0);
  CHECK(img.pgm.size() == std::string("P5\n2 2\n255\n").size() + 4);
  CHECK(static_cast<unsigned char>(img.pgm[img.pgm.size() - 2]) == 255);
  CHECK(img.sidecar.find("\"min\"") != std::string::npos);
}

TEST_CASE("atomic writes leave no temporary files") {
  const fs::path dir = scratch_dir("atomic");
  fs::create_directories(dir);
  io::write_atomic(dir / "a.txt", "hello");
  CHECK(io::read_text(dir / "a.txt") == "hello");
  io::write_atomic(dir / "a.txt", "bye");
  CHECK(io::read_text(dir / "a.txt") == "bye");
  int files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
  CHECK(files == 1);
  fs::remove_all(dir);
}
