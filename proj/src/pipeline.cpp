#include "hhrf/pipeline.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>

namespace hhrf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct ParcelModel {
  std::shared_ptr<const GroupGeometry> geo;
  ArPrecision prec;
  MatrixXd WX;      // W X
  MatrixXd WXa;     // W [X Phi]
  MatrixXd A_aug;   // [X Phi]' W [X Phi]
  MatrixXd XtRVRX;  // X'R V_eps R X
  MatrixXd vls_A;
  double lambda_eff = 0.0;
};

struct Stats {
  MatrixXd U;
  MatrixXd Z;
  double c = 0.0;
  MatrixXd Saa;
  VectorXd a_sum;
  double cy = 0.0;
};

// Schur complement of the nuisance block of a partitioned information matrix.
struct Profiled {
  MatrixXd M;
  MatrixXd proj;  // maps a KL+q vector to its profiled KL part
};

Profiled profile_nuisance(const MatrixXd& F, Eigen::Index m) {
  const auto q = F.rows() - m;
  Eigen::LDLT<MatrixXd> ff(F.bottomRightCorner(q, q));
  Profiled p;
  const MatrixXd Fxf = F.topRightCorner(m, q);
  const MatrixXd sol = ff.solve(Fxf.transpose());  // q x m
  p.M = symmetrize(F.topLeftCorner(m, m) - Fxf * sol);
  p.proj.resize(m, F.rows());
  p.proj.leftCols(m) = MatrixXd::Identity(m, m);
  p.proj.rightCols(q) = -sol.transpose();
  return p;
}

double select_lambda0(const RowMatrixXd& scores_total, const std::vector<RowMatrixXd>& bold, const MatrixXd& RX,
                      const MatrixXd& XtRX, const MatrixXd& IP, const PipelineConfig& cfg, double base) {
  const int n = static_cast<int>(bold.size());
  const int folds = std::clamp(cfg.cv_folds, 2, n);
  std::vector<RowMatrixXd> fold_scores(static_cast<std::size_t>(folds));
  std::vector<int> fold_n(static_cast<std::size_t>(folds), 0);
  for (int j = 0; j < n; ++j) {
    auto& fs = fold_scores[static_cast<std::size_t>(j % folds)];
    const RowMatrixXd s = bold[static_cast<std::size_t>(j)] * RX;
    if (fs.size() == 0) fs = s;
    else fs += s;
    ++fold_n[static_cast<std::size_t>(j % folds)];
  }
  double best = cfg.lambda0;
  double best_err = std::numeric_limits<double>::infinity();
  for (double lam : cfg.cv_grid) {
    double err = 0.0;
    for (int f = 0; f < folds; ++f) {
      const int nf = fold_n[static_cast<std::size_t>(f)];
      const int ntr = n - nf;
      const MatrixXd bread = ntr * XtRX + ntr * lam * base * IP;
      Eigen::LDLT<MatrixXd> ldlt(bread);
      const RowMatrixXd& sf = fold_scores[static_cast<std::size_t>(f)];
      const MatrixXd H = ldlt.solve((scores_total - sf).transpose());  // KL x V
      const MatrixXd XH = XtRX * H;
      for (Eigen::Index v = 0; v < H.cols(); ++v) err += -2.0 * sf.row(v).dot(H.col(v)) + nf * H.col(v).dot(XH.col(v));
    }
    if (err < best_err) {
      best_err = err;
      best = lam;
    }
  }
  return best;
}

}  // namespace

ModelSetup model_setup(const Dataset& data, const PipelineConfig& cfg) {
  ModelSetup s;
  s.basis = make_basis(cfg.T_hrf, cfg.K, cfg.order, cfg.grid_dt);
  s.canonical = canonical_hrf(s.basis);
  std::vector<VectorXd> refs{s.canonical.coeffs};
  if (cfg.penalize_derivative) refs.push_back(s.canonical.deriv_coeffs);
  s.penalty = penalty_projection(s.basis, refs);
  const DesignMatrix dm = build_design(data.timeline, s.basis);
  s.design.X = dm.X;
  s.design.truncated = dm.truncated;
  std::optional<double> cutoff;
  if (cfg.cosine_cutoff > 0.0) cutoff = cfg.cosine_cutoff;
  s.design.Phi = build_nuisance(data.T, data.tr, cfg.drift_order, cutoff);
  return s;
}

VoxelFit to_voxel_fit(const VoxelResult& v) {
  VoxelFit f;
  f.beta = v.beta;
  f.gamma = v.gamma;
  f.C_lagrange = v.C_lagrange;
  f.M = v.M;
  f.eta = v.eta;
  f.converged = v.converged;
  f.iterations = v.iterations;
  f.status = v.status;
  f.bracket_failed = v.bracket_failed;
  return f;
}

FitResult fit_all(const Dataset& data, const PipelineConfig& cfg) {
  data.validate();
  const ModelSetup setup = model_setup(data, cfg);
  const int K = cfg.K;
  const int L = data.L;
  const int KL = K * L;
  const int n = data.n_subjects;
  const int V = data.V;
  const int T = data.T;
  const MatrixXd& X = setup.design.X;
  const MatrixXd& Phi = setup.design.Phi;
  const auto q = Phi.cols();
  const MatrixXd& P = setup.penalty.P;
  const MatrixXd IP = penalty_blocks(P, L);

  FitResult out;
  out.config = cfg;
  out.n_subjects = n;
  out.V = V;
  out.T = T;
  out.L = L;
  out.nx = data.nx;
  out.ny = data.ny;
  out.tr = data.tr;
  out.voxels.resize(static_cast<std::size_t>(V));

  Eigen::LDLT<MatrixXd> phi_gram(Phi.transpose() * Phi);
  const MatrixXd phi_solve = phi_gram.solve(Phi.transpose());  // q x T
  const MatrixXd RX = X - Phi * (phi_solve * X);
  const MatrixXd XtRX = symmetrize(X.transpose() * RX);
  auto residualize = [&](const RowMatrixXd& Y) -> RowMatrixXd { return Y - (Y * Phi) * phi_solve; };

  // Step 1: pilot fit.
  RowMatrixXd Ysum = RowMatrixXd::Zero(V, T);
  for (const auto& Y : data.bold) Ysum += Y;
  const RowMatrixXd scores = Ysum * RX;  // V x KL
  const double base0 = XtRX.trace() / KL;
  double lambda0 = cfg.lambda0;
  if (cfg.cv_lambda0) lambda0 = select_lambda0(scores, data.bold, RX, XtRX, IP, cfg, base0);
  out.lambda0_eff = lambda0 * base0;
  const MatrixXd bread = symmetrize(n * XtRX + n * out.lambda0_eff * IP);
  Eigen::LDLT<MatrixXd> bread_ldlt(bread);
  if (bread_ldlt.info() != Eigen::Success || !bread_ldlt.isPositive() || bread_ldlt.rcond() < 1e-13) {
    throw std::invalid_argument("pilot system is singular; use lambda0 > 0");
  }
  const MatrixXd Hhat = bread_ldlt.solve(scores.transpose());  // KL x V
  RowMatrixXd H0 = RowMatrixXd::Zero(V, KL);
  std::vector<PilotFit> pilots(static_cast<std::size_t>(V));
  for (int v = 0; v < V; ++v) {
    PilotFit& pf = pilots[static_cast<std::size_t>(v)];
    pf.lambda0 = out.lambda0_eff;
    pilot_shape(Hhat.col(v), K, L, pf);
    if (pf.has_shape) H0.row(v) = kron(pf.beta0_signed, pf.gamma0).transpose();
    out.voxels[static_cast<std::size_t>(v)].h_hat = pf.h_hat;
  }
  const RowMatrixXd H0RXt = H0 * RX.transpose();  // V x T
  auto residuals = [&](int j) -> RowMatrixXd { return residualize(data.bold[static_cast<std::size_t>(j)]) - H0RXt; };

  // Step 2: AR noise per parcel.
  std::map<int, int> parcel_index;
  std::vector<int> voxel_parcel(static_cast<std::size_t>(V));
  for (int v = 0; v < V; ++v) {
    const int id = data.parcels[static_cast<std::size_t>(v)];
    auto it = parcel_index.find(id);
    if (it == parcel_index.end()) {
      it = parcel_index.emplace(id, 0).first;
    }
    voxel_parcel[static_cast<std::size_t>(v)] = id;
  }
  {
    int idx = 0;
    for (auto& [id, i] : parcel_index) {
      i = idx++;
      out.parcel_ids.push_back(id);
    }
  }
  for (auto& pid : voxel_parcel) pid = parcel_index.at(pid);
  const int n_parcels = static_cast<int>(out.parcel_ids.size());

  MatrixXd Xa(T, KL + q);
  Xa << X, Phi;
  Eigen::ColPivHouseholderQR<MatrixXd> xa_qr(Xa);
  xa_qr.setThreshold(kRankTol);
  const int rank_xa = static_cast<int>(xa_qr.rank());
  const double dof = static_cast<double>(T) / static_cast<double>(T - rank_xa);
  const MatrixXd XtX_pinv = gram_pinv(X);
  const MatrixXd eps_map = MatrixXd::Identity(T, T) - X * XtX_pinv * X.transpose();  // applied on the right
  std::vector<std::vector<ArParams>> parcel_fits(static_cast<std::size_t>(n_parcels));
  for (int j = 0; j < n; ++j) {
    const RowMatrixXd E = residuals(j) * eps_map;
    for (int v = 0; v < V; ++v) {
      ArParams a = yule_walker(E.row(v).transpose(), cfg.p);
      a.sigma2 *= dof;
      a.innovation_var *= dof;
      parcel_fits[static_cast<std::size_t>(voxel_parcel[static_cast<std::size_t>(v)])].push_back(a);
    }
  }
  std::vector<ParcelModel> parcels(static_cast<std::size_t>(n_parcels));
  for (int pi = 0; pi < n_parcels; ++pi) {
    ArParams ar = estimate_noise_parcel(parcel_fits[static_cast<std::size_t>(pi)]);
    ar.parcel_id = out.parcel_ids[static_cast<std::size_t>(pi)];
    out.parcel_noise.push_back(ar);
    ParcelModel& pm = parcels[static_cast<std::size_t>(pi)];
    pm.geo = make_group_geometry(X, ar, T, n);
    pm.prec = ar_precision(ar, T);
    pm.WX = pm.prec.W * X;
    pm.WXa = pm.prec.W * Xa;
    pm.A_aug = symmetrize(Xa.transpose() * pm.WXa);
    const MatrixXd Veps = ar_covariance(ar, T);
    pm.XtRVRX = symmetrize(RX.transpose() * Veps * RX);
    const Profiled noise_only = profile_nuisance(pm.A_aug, KL);
    pm.lambda_eff = cfg.lambda * ar.sigma2 * noise_only.M.trace() / KL;
    out.lambda_eff.push_back(pm.lambda_eff);
  }
  parcel_fits.clear();

  // Sufficient statistics for steps 3-5.
  std::vector<Stats> stats(static_cast<std::size_t>(V));
  for (auto& s : stats) {
    s.U = MatrixXd::Zero(KL, KL);
    s.Z = MatrixXd::Zero(KL, KL);
    s.Saa = MatrixXd::Zero(KL + q, KL + q);
    s.a_sum = VectorXd::Zero(KL + q);
  }
  for (int j = 0; j < n; ++j) {
    const RowMatrixXd Rm = residuals(j);
    const RowMatrixXd Zr = Rm * X;
    const RowMatrixXd& Y = data.bold[static_cast<std::size_t>(j)];
    for (int v = 0; v < V; ++v) {
      const ParcelModel& pm = parcels[static_cast<std::size_t>(voxel_parcel[static_cast<std::size_t>(v)])];
      Stats& s = stats[static_cast<std::size_t>(v)];
      const VectorXd r = Rm.row(v).transpose();
      const VectorXd y = Y.row(v).transpose();
      const VectorXd u = pm.WX.transpose() * r;
      const VectorXd z = Zr.row(v).transpose();
      s.U.noalias() += u * u.transpose();
      s.Z.noalias() += z * z.transpose();
      s.c += banded_form(pm.prec, r, r);
      const VectorXd a = pm.WXa.transpose() * y;
      s.Saa.noalias() += a * a.transpose();
      s.a_sum += a;
      s.cy += banded_form(pm.prec, y, y);
    }
  }

  // Step 3: effect correlations on a voxel sample.
  std::vector<int> eligible;
  for (int v = 0; v < V; ++v)
    if (pilots[static_cast<std::size_t>(v)].has_shape) eligible.push_back(v);
  {
    std::mt19937_64 rng(cfg.seed);
    std::vector<int> pool = eligible;
    const auto m = std::min<std::size_t>(static_cast<std::size_t>(std::max(cfg.ml_voxels, 0)), pool.size());
    for (std::size_t i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(m);
    std::sort(pool.begin(), pool.end());
    out.ml_sample = pool;
  }
  std::vector<MatrixXd> Txi;
  if (cfg.estimate_correlation && K > 1 && !out.ml_sample.empty()) {
    std::vector<std::vector<VectorXd>> per_voxel(out.ml_sample.size());
    std::vector<char> improved(out.ml_sample.size(), 0);
    std::vector<char> usable(out.ml_sample.size(), 0);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(out.ml_sample.size()); ++i) {
      const int v = out.ml_sample[static_cast<std::size_t>(i)];
      const Stats& s = stats[static_cast<std::size_t>(v)];
      const ParcelModel& pm = parcels[static_cast<std::size_t>(voxel_parcel[static_cast<std::size_t>(v)])];
      const std::vector<EffectGroup> groups{EffectGroup{pm.geo, s.U, s.Z, s.c}};
      const EffectParams init = em_initial(groups, K, L);
      if (!(init.sigma2.minCoeff() > 0.0)) continue;
      const EmResult em = em_warmstart(groups, init, cfg.em_iters);
      const MlResult ml = ml_effect_correlation(groups, em.params, cfg.ml_max_iters, cfg.ml_tol);
      per_voxel[static_cast<std::size_t>(i)] = ml.params.rho;
      improved[static_cast<std::size_t>(i)] = ml.improved ? 1 : 0;
      usable[static_cast<std::size_t>(i)] = 1;
    }
    std::vector<std::vector<VectorXd>> kept;
    for (std::size_t i = 0; i < per_voxel.size(); ++i) {
      if (!usable[i]) continue;
      kept.push_back(per_voxel[i]);
      out.ml_improved += improved[i];
    }
    if (!kept.empty()) {
      for (const auto& tc : aggregate_rho(kept)) {
        out.rho.push_back(tc.rho);
        out.rho_repaired = out.rho_repaired || tc.repaired;
        Txi.push_back(tc.matrix);
      }
    }
  }
  if (Txi.empty()) {
    VectorXd e0 = VectorXd::Zero(K);
    e0[0] = 1.0;
    for (int l = 0; l < L; ++l) {
      out.rho.push_back(e0);
      Txi.push_back(MatrixXd::Identity(K, K));
    }
  }
  std::vector<MatrixXd> Tchol;
  for (const auto& Tm : Txi) Tchol.push_back(MatrixXd(Eigen::LLT<MatrixXd>(Tm).matrixL()));
  for (auto& pm : parcels) pm.vls_A = vls_matrix({pm.geo}, Txi);

  // Steps 4 and 5 plus the pilot activation test, voxel by voxel.
  const GlsOptions gopt{cfg.gls_tol, cfg.gls_max_iters};
#pragma omp parallel for schedule(dynamic)
  for (int v = 0; v < V; ++v) {
    const ParcelModel& pm = parcels[static_cast<std::size_t>(voxel_parcel[static_cast<std::size_t>(v)])];
    const Stats& s = stats[static_cast<std::size_t>(v)];
    VoxelResult& res = out.voxels[static_cast<std::size_t>(v)];
    const PilotFit& pf = pilots[static_cast<std::size_t>(v)];

    const std::vector<EffectGroup> groups{EffectGroup{pm.geo, s.U, s.Z, s.c}};
    const NnqpResult qp = solve_nnqp(pm.vls_A, vls_rhs(groups, Txi));
    res.sigma2_xi = qp.x;
    res.vls_ridge = qp.ridge;

    MatrixXd G = MatrixXd::Zero(KL, KL);
    MatrixXd Lg = MatrixXd::Zero(KL, KL);
    for (int l = 0; l < L; ++l) {
      const double s2 = std::max(res.sigma2_xi[l], 0.0);
      G.block(l * K, l * K, K, K) = s2 * Txi[static_cast<std::size_t>(l)];
      Lg.block(l * K, l * K, K, K) = std::sqrt(s2) * Tchol[static_cast<std::size_t>(l)];
    }
    const MatrixXd middle = n * (XtRX * G * XtRX + pm.XtRVRX);
    const TestResult pw = pilot_wald(scores.row(v).transpose(), middle);
    res.pilot_stat = pw.stat;
    res.pilot_p = pw.p;
    res.pilot_df = pw.df;

    if (!pf.has_shape) {
      res.status = FitStatus::no_pilot_shape;
      res.beta = VectorXd::Constant(L, kNaN);
      res.gamma = VectorXd::Constant(K, kNaN);
      res.M = MatrixXd::Zero(KL, KL);
      res.eta = VectorXd::Zero(KL);
      continue;
    }

    // Woodbury: V^-1 = W - W X Lg S^-1 Lg' X' W with S = I + Lg' X'WX Lg.
    const MatrixXd Axx = pm.A_aug.topLeftCorner(KL, KL);
    const MatrixXd S = MatrixXd::Identity(KL, KL) + Lg.transpose() * Axx * Lg;
    Eigen::LLT<MatrixXd> sllt(symmetrize(S));
    const MatrixXd Ktil = Lg * sllt.solve(Lg.transpose());  // Lg S^-1 Lg'
    const MatrixXd Acol = pm.A_aug.leftCols(KL);             // [X Phi]' W X
    const MatrixXd F = symmetrize(pm.A_aug - Acol * Ktil * Acol.transpose());
    MatrixXd Emap = MatrixXd::Identity(KL + q, KL + q);
    Emap.leftCols(KL) -= Acol * Ktil;  // a -> [X Phi]' V^-1 y
    const Profiled prof = profile_nuisance(F, KL);
    const MatrixXd Pm = prof.proj * Emap;

    GlsSystem sys;
    sys.n_subjects = n;
    sys.M = n * prof.M;
    sys.eta = Pm * s.a_sum;
    const double yVy = s.cy - (Ktil * s.Saa.topLeftCorner(KL, KL)).trace();
    const MatrixXd Ef = Emap.bottomRows(q);
    const MatrixXd Fff = F.bottomRightCorner(q, q);
    const double nuis = (Fff.ldlt().solve(Ef * s.Saa * Ef.transpose())).trace();
    sys.yQy = yVy - nuis;

    res.n_lambda = n * pm.lambda_eff;
    const VoxelFit fit = gls_solve(sys, P, res.n_lambda, pf.gamma0, K, gopt);
    res.status = fit.status;
    res.beta = fit.beta;
    res.gamma = fit.gamma;
    res.C_lagrange = fit.C_lagrange;
    res.M = fit.M;
    res.eta = fit.eta;
    res.converged = fit.converged;
    res.iterations = fit.iterations;
    res.bracket_failed = fit.bracket_failed;
  }
  return out;
}

}  // namespace hhrf
