#pragma once

#include "hhrf/baseline.hpp"
#include "hhrf/io.hpp"
#include "hhrf/pipeline.hpp"
#include "hhrf/summary.hpp"

#include <string>
#include <vector>

namespace hhrf {

/// Basis, canonical shape and penalty implied by a pipeline configuration.
struct ShapeModel {
  BasisSystem basis;
  CanonicalHrf canonical;
  PenaltyProjection penalty;
};

ShapeModel shape_model(const PipelineConfig& cfg);

enum class ActivationTest {
  contrast_z,  // z-test of c'beta from the constrained fit
  pilot_wald,  // test all voxels with the pilot Wald test, then infer shape where it rejects
};

struct InferOptions {
  VectorXd contrast;  // length L
  double q = 0.05;
  ActivationTest activation = ActivationTest::contrast_z;
};

struct EstimateRow {
  int x = 0;
  int y = 0;
  int status = 0;
  VectorXd beta;
  double ttp = 0.0;
  double fwhm = 0.0;
  double pilot_stat = 0.0;
  double pilot_p = 0.0;
};

struct StatMaps {
  int nx = 0;
  int ny = 0;
  std::vector<io::MapRow> activation;
  std::vector<io::MapRow> shape;
  std::vector<EstimateRow> estimates;
  double p_star = 0.0;
  double shape_p_star = 0.0;
  std::string test;
};

StatMaps infer_maps(const FitResult& fit, const InferOptions& opt);
StatMaps baseline_maps(const OlsResult& ols, double q);

/// activation.csv, shape.csv, estimates.csv, PGM images with sidecars and maps.json.
void write_maps(const StatMaps& maps, const io::fs::path& dir);
/// Reads activation.csv and, when present, estimates.csv.
StatMaps read_maps(const io::fs::path& dir);

/// Per-square recovery summary against the truth sidecar. Squares are the
/// distinct (onset_tr, duration_tr) groups of active voxels; two extra rows
/// summarize the null region and the whole map.
std::string report_csv(const StatMaps& maps, const Truth& truth);

}  // namespace hhrf
