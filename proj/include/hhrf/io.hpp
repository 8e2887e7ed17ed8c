#pragma once

#include "hhrf/baseline.hpp"
#include "hhrf/dataset.hpp"
#include "hhrf/pipeline.hpp"
#include "hhrf/simulate.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hhrf::io {

namespace fs = std::filesystem;

inline constexpr std::uint16_t kFormatVersion = 1;

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Binary dataset layout (little endian):
///   "HHRF" | version u16 | n_subjects u16 | V u32 | T u32 | tr f64 | L u16 | K placeholder u16
///   | n * V * T f64 (subject, voxel, time) | V * u16 parcels
///   | u32 length + timeline CSV bytes | nx u32 | ny u32
std::string encode_dataset(const Dataset& d);
Dataset decode_dataset(const std::string& bytes);

void write_dataset(const Dataset& d, const fs::path& path);
Dataset read_dataset(const fs::path& path);

/// Truth sidecar: voxel_x,voxel_y,beta_true,onset_tr,duration_tr,ttp_s,fwhm_s
/// plus beta_true_<l> columns when L > 1. Null voxels carry NA for the timing columns.
std::string truth_to_csv(const Truth& t);
Truth truth_from_csv(const std::string& text);

std::string config_to_json(const PipelineConfig& cfg);
PipelineConfig config_from_json(const std::string& text);

/// Fit directory: fit.json (shared parameters) and voxels.bin (per-voxel results).
void write_fit(const FitResult& fit, const fs::path& dir);
FitResult read_fit(const fs::path& dir);

/// Per-voxel statistic table row for map export.
struct MapRow {
  int x = 0;
  int y = 0;
  double stat = 0.0;
  double p = 0.0;
  bool rejected = false;
};

std::string map_to_csv(const std::vector<MapRow>& rows);
std::vector<MapRow> map_from_csv(const std::string& text);

/// 8-bit binary PGM of `values` on an nx x ny grid, min-max scaled; NaN maps to 0.
/// Returns the JSON sidecar describing the scaling.
struct PgmImage {
  std::string pgm;
  std::string sidecar;
};
PgmImage to_pgm(const std::vector<double>& values, int nx, int ny, const std::string& label);

std::string read_text(const fs::path& path);

/// Writes through a temporary file in the same directory and renames it into place.
void write_atomic(const fs::path& path, const std::string& bytes);

}  // namespace hhrf::io
