#include "hhrf/baseline.hpp"

#include "hhrf/infer.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace hhrf {

MatrixXd canonical_regressors(const MatrixXd& X, const VectorXd& canonical_coeffs, int L) {
  const auto K = canonical_coeffs.size();
  if (X.cols() != K * L) throw std::invalid_argument("design width does not match K * L");
  MatrixXd out(X.rows(), L);
  for (int l = 0; l < L; ++l) out.col(l) = X.middleCols(l * K, K) * canonical_coeffs;
  return out;
}

OlsModel make_ols_model(const MatrixXd& regressors, const MatrixXd& Phi) {
  OlsModel m;
  m.Phi = Phi;
  m.phi_solve = (Phi.transpose() * Phi).ldlt().solve(Phi.transpose());
  m.Z = regressors - Phi * (m.phi_solve * regressors);
  const MatrixXd G = m.Z.transpose() * m.Z;
  m.gram.compute(G);
  const double scale = regressors.squaredNorm() / std::max<double>(1.0, static_cast<double>(regressors.cols()));
  m.collinear = m.gram.info() != Eigen::Success || !m.gram.isPositive() || m.gram.rcond() < 1e-12 ||
                G.diagonal().minCoeff() <= 1e-12 * scale;
  return m;
}

VectorXd glm_ols_subject(const OlsModel& model, const VectorXd& y) {
  if (model.collinear) return VectorXd::Constant(model.Z.cols(), std::numeric_limits<double>::quiet_NaN());
  // Z is already orthogonal to Phi, so Z'R y = Z'y.
  return model.gram.solve(model.Z.transpose() * y);
}

GroupTTest group_ttest(const std::vector<double>& beta_hats) {
  const auto n = beta_hats.size();
  if (n < 2) throw std::invalid_argument("group t-test needs at least two subjects");
  GroupTTest r;
  r.df = static_cast<double>(n - 1);
  double s = 0.0;
  for (double b : beta_hats) s += b;
  r.mean = s / static_cast<double>(n);
  double ss = 0.0;
  for (double b : beta_hats) ss += (b - r.mean) * (b - r.mean);
  r.sd = std::sqrt(ss / r.df);
  if (!(r.sd > 1e-12 * std::abs(r.mean))) {
    r.degenerate = true;
    const double inf = std::numeric_limits<double>::infinity();
    r.t = r.mean > 0.0 ? inf : (r.mean < 0.0 ? -inf : 0.0);
    r.p = r.mean > 0.0 ? 0.0 : (r.mean < 0.0 ? 1.0 : 0.5);
    return r;
  }
  r.t = r.mean / (r.sd / std::sqrt(static_cast<double>(n)));
  r.p = student_t_upper_tail(r.t, r.df);
  return r;
}

OlsResult run_baseline(const Dataset& data, const VectorXd& contrast, int K, int order, double T_hrf, double grid_dt,
                       int drift_order) {
  data.validate();
  if (contrast.size() != data.L) throw std::invalid_argument("contrast length must equal the condition count");
  const BasisSystem basis = make_basis(T_hrf, K, order, grid_dt);
  const CanonicalHrf canon = canonical_hrf(basis);
  const DesignMatrix dm = build_design(data.timeline, basis);
  const MatrixXd Phi = build_nuisance(data.T, data.tr, drift_order);
  const OlsModel model = make_ols_model(canonical_regressors(dm.X, canon.coeffs, data.L), Phi);

  OlsResult out;
  out.nx = data.nx;
  out.ny = data.ny;
  out.L = data.L;
  out.voxels.resize(static_cast<std::size_t>(data.V));
  // All voxels share the design, so one solve per subject covers every voxel.
  std::vector<MatrixXd> coef(static_cast<std::size_t>(data.n_subjects));
  if (!model.collinear) {
    for (int j = 0; j < data.n_subjects; ++j) {
      const MatrixXd ZtY = model.Z.transpose() * data.bold[static_cast<std::size_t>(j)].transpose();  // L x V
      coef[static_cast<std::size_t>(j)] = model.gram.solve(ZtY);
    }
  }
  for (int v = 0; v < data.V; ++v) {
    OlsVoxel& ov = out.voxels[static_cast<std::size_t>(v)];
    if (model.collinear) {
      ov.rejected_model = true;
      ov.test.p = std::numeric_limits<double>::quiet_NaN();
      ov.test.t = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    std::vector<double> c;
    for (int j = 0; j < data.n_subjects; ++j) {
      ov.beta_subject.push_back(coef[static_cast<std::size_t>(j)].col(v));
      c.push_back(contrast.dot(ov.beta_subject.back()));
    }
    ov.test = group_ttest(c);
  }
  return out;
}

}  // namespace hhrf
