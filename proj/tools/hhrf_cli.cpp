#include "hhrf/baseline.hpp"
#include "hhrf/io.hpp"
#include "hhrf/pipeline.hpp"
#include "hhrf/simulate.hpp"
#include "hhrf/workflow.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace hhrf;

namespace {

// Outputs created by the current command; removed again if the command fails.
std::vector<fs::path> g_outputs;

void claim_file(const fs::path& p) {
  if (!fs::exists(p)) g_outputs.push_back(p);
}

void claim_dir(const fs::path& p) {
  if (!fs::exists(p)) g_outputs.push_back(p);
}

void remove_partial_outputs() {
  for (auto it = g_outputs.rbegin(); it != g_outputs.rend(); ++it) {
    std::error_code ec;
    fs::remove_all(*it, ec);
  }
}

VectorXd parse_contrast(const std::string& text) {
  std::vector<double> w;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument("bad contrast weight '" + cell + "'");
    w.push_back(v);
  }
  if (w.empty()) throw std::invalid_argument("empty contrast");
  return Eigen::Map<const VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical HRF estimation for multi-subject fMRI"};
  app.require_subcommand(1);

  int scenario = 1;
  std::uint64_t seed = 0;
  std::string out, truth_out;
  auto* sim = app.add_subcommand("simulate", "Generate a simulated dataset");
  sim->add_option("--scenario", scenario, "Simulation scenario 1-5")->required();
  sim->add_option("--seed", seed, "Random seed")->required();
  sim->add_option("--out", out, "Dataset file")->required();
  sim->add_option("--truth", truth_out, "Truth sidecar CSV");

  std::string data_path, config_path, fit_out;
  auto* fit = app.add_subcommand("fit", "Fit the hierarchical model");
  fit->add_option("--data", data_path, "Dataset file")->required();
  fit->add_option("--config", config_path, "Pipeline config JSON");
  fit->add_option("--out", fit_out, "Output directory")->required();

  std::string fit_dir, contrast = "1", maps_out;
  double q = 0.05;
  bool workflow = false;
  auto* inf = app.add_subcommand("infer", "Activation and shape maps from a fit");
  inf->add_option("--fit", fit_dir, "Fit directory")->required();
  inf->add_option("--contrast", contrast, "Comma-separated condition weights");
  inf->add_option("--q", q, "FDR level");
  inf->add_flag("--workflow", workflow, "Detect activation with the pilot test, then test shape where it rejects");
  inf->add_option("--out", maps_out, "Output directory")->required();

  std::string base_data, base_out, base_contrast = "1";
  double base_q = 0.05;
  auto* base = app.add_subcommand("baseline", "Two-stage canonical GLM/OLS maps");
  base->add_option("--data", base_data, "Dataset file")->required();
  base->add_option("--contrast", base_contrast, "Comma-separated condition weights");
  base->add_option("--q", base_q, "FDR level");
  base->add_option("--out", base_out, "Output directory")->required();

  std::string rep_maps, rep_truth, rep_out;
  auto* rep = app.add_subcommand("report", "Per-square recovery summary");
  rep->add_option("--maps", rep_maps, "Maps directory")->required();
  rep->add_option("--truth", rep_truth, "Truth sidecar CSV")->required();
  rep->add_option("--out", rep_out, "Report CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*sim) {
      const SimResult r = generate(scenario_config(scenario, seed));
      const std::string bytes = io::encode_dataset(r.data);
      claim_file(out);
      io::write_atomic(out, bytes);
      if (!truth_out.empty()) {
        claim_file(truth_out);
        io::write_atomic(truth_out, io::truth_to_csv(r.truth));
      }
    } else if (*fit) {
      const Dataset d = io::read_dataset(data_path);
      const PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : io::config_from_json(io::read_text(config_path));
      const FitResult f = fit_all(d, cfg);
      claim_dir(fit_out);
      io::write_fit(f, fit_out);
    } else if (*inf) {
      if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("--q must lie in (0, 1)");
      const FitResult f = io::read_fit(fit_dir);
      InferOptions opt;
      opt.contrast = parse_contrast(contrast);
      opt.q = q;
      opt.activation = workflow ? ActivationTest::pilot_wald : ActivationTest::contrast_z;
      const StatMaps m = infer_maps(f, opt);
      claim_dir(maps_out);
      write_maps(m, maps_out);
    } else if (*base) {
      if (!(base_q > 0.0 && base_q < 1.0)) throw std::invalid_argument("--q must lie in (0, 1)");
      const Dataset d = io::read_dataset(base_data);
      const OlsResult r = run_baseline(d, parse_contrast(base_contrast));
      claim_dir(base_out);
      write_maps(baseline_maps(r, base_q), base_out);
    } else if (*rep) {
      const StatMaps m = read_maps(rep_maps);
      const Truth t = io::truth_from_csv(io::read_text(rep_truth));
      const std::string csv = report_csv(m, t);
      claim_file(rep_out);
      io::write_atomic(rep_out, csv);
    }
  } catch (const std::exception& e) {
    remove_partial_outputs();
    std::string msg = e.what();
    for (auto& c : msg)
      if (c == '\n') c = ' ';
    std::cerr << "error: " << msg << '\n';
    return 1;
  }
  return 0;
}
