#include "hhrf/baseline.hpp"
#include "hhrf/basis.hpp"
#include "hhrf/infer.hpp"
#include "hhrf/io.hpp"
#include "hhrf/noise.hpp"
#include "hhrf/pipeline.hpp"
#include "hhrf/simulate.hpp"
#include "hhrf/workflow.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace hhrf;

namespace {

py::dict fit_summary(const FitResult& f) {
  py::dict d;
  std::vector<double> theta, sigma2;
  for (const auto& a : f.parcel_noise) {
    theta.push_back(a.theta.size() > 0 ? a.theta[0] : 0.0);
    sigma2.push_back(a.sigma2);
  }
  std::vector<VectorXd> beta, gamma;
  std::vector<double> pilot_p;
  std::vector<int> status;
  for (const auto& v : f.voxels) {
    beta.push_back(v.beta);
    gamma.push_back(v.gamma);
    pilot_p.push_back(v.pilot_p);
    status.push_back(static_cast<int>(v.status));
  }
  d["V"] = f.V;
  d["L"] = f.L;
  d["nx"] = f.nx;
  d["ny"] = f.ny;
  d["theta"] = theta;
  d["sigma2"] = sigma2;
  d["rho"] = f.rho;
  d["beta"] = beta;
  d["gamma"] = gamma;
  d["pilot_p"] = pilot_p;
  d["status"] = status;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hierarchical HRF estimation core";

  py::class_<DoubleGammaParams>(m, "DoubleGammaParams")
      .def(py::init<>())
      .def_readwrite("peak_delay", &DoubleGammaParams::peak_delay)
      .def_readwrite("undershoot_delay", &DoubleGammaParams::undershoot_delay)
      .def_readwrite("peak_dispersion", &DoubleGammaParams::peak_dispersion)
      .def_readwrite("undershoot_dispersion", &DoubleGammaParams::undershoot_dispersion)
      .def_readwrite("undershoot_ratio", &DoubleGammaParams::undershoot_ratio);

  m.def("basis_values", [](double T, int K, int order, double dt) { return make_basis(T, K, order, dt).values; },
        py::arg("T_hrf") = 30.0, py::arg("K") = 20, py::arg("order") = 6, py::arg("grid_dt") = 0.1);
  m.def(
      "canonical_coeffs",
      [](double T, int K, int order, double dt) { return canonical_hrf(make_basis(T, K, order, dt)).coeffs; },
      py::arg("T_hrf") = 30.0, py::arg("K") = 20, py::arg("order") = 6, py::arg("grid_dt") = 0.1);
  m.def("canonical_curve", &canonical_hrf_curve, py::arg("times"), py::arg("params") = DoubleGammaParams{});

  m.def("yule_walker", [](const VectorXd& x, int p) {
    const ArParams a = yule_walker(x, p);
    return py::make_tuple(a.theta, a.sigma2);
  });
  m.def(
      "fdr_mask",
      [](const std::vector<double>& p, double q) {
        const FdrResult r = fdr_mask(p, q);
        return py::make_tuple(r.mask, r.p_star);
      },
      py::arg("pvals"), py::arg("q") = 0.05);
  m.def("solve_secular", [](const MatrixXd& H, const VectorXd& b) {
    const SecularResult r = solve_secular(H, b);
    return py::make_tuple(r.gamma, r.C);
  });
  m.def("solve_nnqp", [](const MatrixXd& A, const VectorXd& b) { return solve_nnqp(A, b).x; });

  m.def(
      "simulate",
      [](int scenario, std::uint64_t seed, const std::string& out, const std::string& truth) {
        const SimResult r = generate(scenario_config(scenario, seed));
        io::write_dataset(r.data, out);
        if (!truth.empty()) io::write_atomic(truth, io::truth_to_csv(r.truth));
      },
      py::arg("scenario"), py::arg("seed"), py::arg("out"), py::arg("truth") = "");
  m.def("read_bold", [](const std::string& path) {
    const Dataset d = io::read_dataset(path);
    std::vector<MatrixXd> bold(d.bold.begin(), d.bold.end());
    return py::make_tuple(bold, d.tr, d.nx, d.ny);
  });
  m.def(
      "fit",
      [](const std::string& data, const std::string& out, const std::string& config_json) {
        const PipelineConfig cfg = config_json.empty() ? PipelineConfig{} : io::config_from_json(config_json);
        FitResult f;
        {
          py::gil_scoped_release release;
          f = fit_all(io::read_dataset(data), cfg);
        }
        io::write_fit(f, out);
        return fit_summary(f);
      },
      py::arg("data"), py::arg("out"), py::arg("config_json") = "");
  m.def(
      "infer",
      [](const std::string& fit_dir, const std::string& out, const std::vector<double>& contrast, double q,
         bool workflow) {
        InferOptions opt;
        opt.contrast = Eigen::Map<const VectorXd>(contrast.data(), static_cast<Eigen::Index>(contrast.size()));
        opt.q = q;
        opt.activation = workflow ? ActivationTest::pilot_wald : ActivationTest::contrast_z;
        const StatMaps maps = infer_maps(io::read_fit(fit_dir), opt);
        write_maps(maps, out);
        return maps.p_star;
      },
      py::arg("fit_dir"), py::arg("out"), py::arg("contrast") = std::vector<double>{1.0}, py::arg("q") = 0.05,
      py::arg("workflow") = false);
  m.def(
      "baseline",
      [](const std::string& data, const std::string& out, const std::vector<double>& contrast, double q) {
        const VectorXd c = Eigen::Map<const VectorXd>(contrast.data(), static_cast<Eigen::Index>(contrast.size()));
        const StatMaps maps = baseline_maps(run_baseline(io::read_dataset(data), c), q);
        write_maps(maps, out);
        return maps.p_star;
      },
      py::arg("data"), py::arg("out"), py::arg("contrast") = std::vector<double>{1.0}, py::arg("q") = 0.05);
  m.def("report", [](const std::string& maps, const std::string& truth) {
    return report_csv(read_maps(maps), io::truth_from_csv(io::read_text(truth)));
  });

  py::register_exception<io::FormatError>(m, "FormatError", PyExc_ValueError);
}
