#include "hhrf/estimate.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace hhrf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double trace_product(const MatrixXd& A, const MatrixXd& B) { return (A.array() * B.transpose().array()).sum(); }

// tr(M D_k) for the lag pattern D_k
double lag_trace(const MatrixXd& M, int k) {
  double s = 0.0;
  for (Eigen::Index i = 0; i + k < M.rows(); ++i) s += M(i, i + k) + M(i + k, i);
  return s;
}

int total_subjects(const std::vector<EffectGroup>& groups) {
  int n = 0;
  for (const auto& g : groups) n += g.geo->n_subjects;
  return n;
}

int block_size(const std::vector<EffectGroup>& groups) {
  if (groups.empty()) throw std::invalid_argument("no residual groups");
  return static_cast<int>(groups.front().geo->XtWX.rows());
}

// Cholesky factor of blockdiag(sigma2_l T_l).
MatrixXd effect_factor(const EffectParams& p) {
  const int L = p.L();
  const auto K = p.rho.front().size();
  MatrixXd Lg = MatrixXd::Zero(L * K, L * K);
  for (int l = 0; l < L; ++l) {
    const MatrixXd T = toeplitz(p.rho[static_cast<std::size_t>(l)]);
    Eigen::LLT<MatrixXd> llt(T);
    if (llt.info() != Eigen::Success) throw std::domain_error("effect correlation is not positive definite");
    Lg.block(l * K, l * K, K, K) = std::sqrt(std::max(p.sigma2[l], 0.0)) * MatrixXd(llt.matrixL());
  }
  return Lg;
}

bool correlations_feasible(const EffectParams& p, double floor) {
  for (const auto& r : p.rho) {
    if (r.tail(r.size() - 1).cwiseAbs().maxCoeff() > 1.0) return false;
    if (!is_positive_definite(toeplitz(r), floor)) return false;
  }
  return true;
}

struct BoxResult {
  VectorXd x;
  double f = 0.0;
  int iterations = 0;
};

// Projected gradient descent with Barzilai-Borwein steps and Armijo backtracking.
// Only strictly feasible, non-increasing steps are accepted.
BoxResult minimize_box(const std::function<double(const VectorXd&)>& f,
                       const std::function<VectorXd(const VectorXd&)>& grad, VectorXd x, const VectorXd& lo,
                       const VectorXd& hi, const std::function<bool(const VectorXd&)>& feasible, int max_iters,
                       double tol) {
  BoxResult res;
  double fx = f(x);
  const double f_start = fx;
  VectorXd g = grad(x);
  const double gmax = g.cwiseAbs().maxCoeff();
  double alpha = gmax > 0.0 ? 0.1 / gmax : 1.0;
  int it = 0;
  for (; it < max_iters; ++it) {
    bool accepted = false;
    VectorXd xn;
    double fn = fx;
    for (int bt = 0; bt < 60; ++bt) {
      xn = (x - alpha * g).cwiseMax(lo).cwiseMin(hi);
      const VectorXd step = x - xn;
      if (step.cwiseAbs().maxCoeff() == 0.0) break;
      if (!feasible(xn)) {
        alpha *= 0.5;
        continue;
      }
      fn = f(xn);
      if (std::isfinite(fn) && fn <= fx - 1e-4 * g.dot(step)) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    const VectorXd gn = grad(xn);
    const VectorXd s = xn - x;
    const VectorXd yv = gn - g;
    const double sy = s.dot(yv);
    const double change = fx - fn;
    x = xn;
    g = gn;
    fx = fn;
    alpha = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-14, 1e14) : std::min(alpha * 4.0, 1e14);
    if (change <= tol * (1.0 + std::abs(f_start - fx))) {
      ++it;
      break;
    }
  }
  res.x = x;
  res.f = fx;
  res.iterations = it;
  return res;
}

}  // namespace

// ---------------------------------------------------------------------------

MatrixXd penalty_blocks(const MatrixXd& P, int L) {
  const auto K = P.rows();
  MatrixXd out = MatrixXd::Zero(L * K, L * K);
  for (int l = 0; l < L; ++l) out.block(l * K, l * K, K, K) = P;
  return out;
}

void pilot_shape(const VectorXd& h, int K, int L, PilotFit& out) {
  out.h_hat = h;
  out.beta0.resize(L);
  out.beta0_signed.resize(L);
  VectorXd sum = VectorXd::Zero(K);
  double total = 0.0;
  for (int l = 0; l < L; ++l) {
    const auto hl = h.segment(l * K, K);
    out.beta0[l] = hl.norm();
    total += out.beta0[l];
    sum += hl;
  }
  const double sn = sum.norm();
  if (!(sn > 1e-12) || sn <= 1e-12 * total) {
    out.has_shape = false;
    out.gamma0 = VectorXd::Zero(K);
    out.beta0_signed = out.beta0;
    return;
  }
  out.has_shape = true;
  out.gamma0 = sum / sn;
  orient(out.gamma0);
  for (int l = 0; l < L; ++l) {
    const double proj = out.gamma0.dot(h.segment(l * K, K));
    out.beta0_signed[l] = proj < 0.0 ? -out.beta0[l] : out.beta0[l];
  }
}

PilotFit pls_pilot(const std::vector<VectorXd>& y, const std::vector<SubjectDesign>& designs, const MatrixXd& P,
                   double lambda0) {
  if (y.empty() || y.size() != designs.size()) throw std::invalid_argument("need one design per subject");
  if (!(lambda0 >= 0.0)) throw std::invalid_argument("lambda0 must be nonnegative");
  const auto KL = designs.front().X.cols();
  const auto K = P.rows();
  if (KL % K != 0) throw std::invalid_argument("design width is not a multiple of K");
  const int L = static_cast<int>(KL / K);
  const int n = static_cast<int>(y.size());

  MatrixXd bread = static_cast<double>(n) * lambda0 * penalty_blocks(P, L);
  VectorXd rhs = VectorXd::Zero(KL);
  std::vector<Eigen::LDLT<MatrixXd>> phi_gram;
  for (int j = 0; j < n; ++j) {
    const auto& d = designs[static_cast<std::size_t>(j)];
    if (d.X.cols() != KL) throw std::invalid_argument("designs disagree in K*L");
    Eigen::LDLT<MatrixXd> pg(d.Phi.transpose() * d.Phi);
    const MatrixXd RX = d.X - d.Phi * pg.solve(d.Phi.transpose() * d.X);
    bread += d.X.transpose() * RX;
    rhs += RX.transpose() * y[static_cast<std::size_t>(j)];
    phi_gram.push_back(std::move(pg));
  }
  bread = symmetrize(bread);
  Eigen::LDLT<MatrixXd> ldlt(bread);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-13) {
    throw std::invalid_argument("pilot system is singular; use lambda0 > 0");
  }
  PilotFit out;
  out.lambda0 = lambda0;
  pilot_shape(ldlt.solve(rhs), static_cast<int>(K), L, out);
  for (int j = 0; j < n; ++j) {
    const auto& d = designs[static_cast<std::size_t>(j)];
    out.d_hat.push_back(phi_gram[static_cast<std::size_t>(j)].solve(d.Phi.transpose() * (y[static_cast<std::size_t>(j)] - d.X * out.h_hat)));
  }
  return out;
}

EffectPrediction predict_effects(const VectorXd& r, const MatrixXd& X) {
  EffectPrediction p;
  p.xi = gram_pinv(X) * (X.transpose() * r);
  p.eps = r - X * p.xi;
  return p;
}

// ---------------------------------------------------------------------------

std::shared_ptr<GroupGeometry> make_group_geometry(const MatrixXd& X, const ArParams& noise, int T, int n_subjects) {
  if (X.rows() != T) throw std::invalid_argument("design rows do not match T");
  auto g = std::make_shared<GroupGeometry>();
  g->n_subjects = n_subjects;
  g->T = T;
  const ArPrecision prec = ar_precision(noise, T);
  const MatrixXd V = ar_covariance(noise, T);
  g->XtWX = symmetrize(X.transpose() * (prec.W * X));
  g->XtX = X.transpose() * X;
  g->XtX_pinv = gram_pinv(X);
  g->XtVX = symmetrize(X.transpose() * (V * X));
  g->logdet_veps = prec.logdet_cov;
  return g;
}

std::vector<EffectGroup> effect_groups(const std::vector<VectorXd>& residuals, const std::vector<MatrixXd>& X,
                                       const std::vector<ArParams>& noise) {
  if (residuals.size() != X.size() || residuals.size() != noise.size()) throw std::invalid_argument("inconsistent subject lists");
  std::vector<EffectGroup> groups;
  for (std::size_t j = 0; j < residuals.size(); ++j) {
    const int T = static_cast<int>(residuals[j].size());
    EffectGroup g;
    g.geo = make_group_geometry(X[j], noise[j], T, 1);
    const ArPrecision prec = ar_precision(noise[j], T);
    const VectorXd Wr = banded_apply(prec, residuals[j]);
    const VectorXd u = X[j].transpose() * Wr;
    const VectorXd z = X[j].transpose() * residuals[j];
    g.U = u * u.transpose();
    g.Z = z * z.transpose();
    g.c = residuals[j].dot(Wr);
    groups.push_back(std::move(g));
  }
  return groups;
}

EffectParams independent_effects(const VectorXd& sigma2, int K) {
  EffectParams p;
  p.sigma2 = sigma2;
  VectorXd e0 = VectorXd::Zero(K);
  e0[0] = 1.0;
  p.rho.assign(static_cast<std::size_t>(sigma2.size()), e0);
  return p;
}

MatrixXd effect_covariance(const EffectParams& params) {
  std::vector<MatrixXd> blocks;
  for (int l = 0; l < params.L(); ++l) blocks.push_back(params.sigma2[l] * toeplitz(params.rho[static_cast<std::size_t>(l)]));
  return block_diagonal(blocks);
}

double neg2_loglik(const std::vector<EffectGroup>& groups, const EffectParams& params) {
  const MatrixXd Lg = effect_factor(params);
  const auto m = Lg.rows();
  double total = 0.0;
  for (const auto& g : groups) {
    const MatrixXd S = MatrixXd::Identity(m, m) + Lg.transpose() * g.geo->XtWX * Lg;
    Eigen::LLT<MatrixXd> llt(symmetrize(S));
    const double logdet_S = 2.0 * MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    const double quad = g.c - trace_product(llt.solve(Lg.transpose() * g.U * Lg), MatrixXd::Identity(m, m));
    const int n = g.geo->n_subjects;
    total += n * (g.geo->logdet_veps + logdet_S + g.geo->T * std::log(2.0 * std::numbers::pi)) + quad;
  }
  return total;
}

LoglikGradient neg2_loglik_gradient(const std::vector<EffectGroup>& groups, const EffectParams& params) {
  const int L = params.L();
  const auto K = params.rho.front().size();
  const MatrixXd Lg = effect_factor(params);
  const auto m = Lg.rows();
  MatrixXd info = MatrixXd::Zero(m, m);   // sum_j X'V^-1 X
  MatrixXd score = MatrixXd::Zero(m, m);  // sum_j X'V^-1 r r' V^-1 X
  for (const auto& g : groups) {
    const MatrixXd& A = g.geo->XtWX;
    const MatrixXd S = MatrixXd::Identity(m, m) + Lg.transpose() * A * Lg;
    Eigen::LLT<MatrixXd> llt(symmetrize(S));
    const MatrixXd ALg = A * Lg;
    info += g.geo->n_subjects * (A - ALg * llt.solve(ALg.transpose()));
    const MatrixXd N = MatrixXd::Identity(m, m) - ALg * llt.solve(Lg.transpose());
    score += N * g.U * N.transpose();
  }
  LoglikGradient grad;
  grad.d_sigma2.resize(L);
  for (int l = 0; l < L; ++l) {
    const MatrixXd T = toeplitz(params.rho[static_cast<std::size_t>(l)]);
    const MatrixXd diff = info.block(l * K, l * K, K, K) - score.block(l * K, l * K, K, K);
    grad.d_sigma2[l] = trace_product(diff, T);
    VectorXd dr(K - 1);
    for (Eigen::Index k = 1; k < K; ++k) dr[k - 1] = params.sigma2[l] * lag_trace(diff, static_cast<int>(k));
    grad.d_rho.push_back(dr);
  }
  return grad;
}

double profiled_q(const VectorXd& rho, const MatrixXd& C, int n, double floor) {
  const auto K = rho.size();
  const MatrixXd T = toeplitz(rho);
  if (!is_positive_definite(T, floor)) return kInf;
  Eigen::LLT<MatrixXd> llt(T);
  const double nK = static_cast<double>(n) * static_cast<double>(K);
  const double tr = std::max(llt.solve(C).trace(), std::numeric_limits<double>::min());
  const double logdet = 2.0 * MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return nK * std::log(tr / nK) + n * logdet + nK;
}

VectorXd profiled_q_gradient(const VectorXd& rho, const MatrixXd& C, int n) {
  const auto K = rho.size();
  const MatrixXd T = toeplitz(rho);
  Eigen::LLT<MatrixXd> llt(T);
  const MatrixXd Tinv = llt.solve(MatrixXd::Identity(K, K));
  const MatrixXd TCT = Tinv * C * Tinv;
  const double nK = static_cast<double>(n) * static_cast<double>(K);
  const double tr = std::max(trace_product(Tinv, C), std::numeric_limits<double>::min());
  VectorXd g(K - 1);
  for (Eigen::Index k = 1; k < K; ++k) {
    g[k - 1] = -nK * lag_trace(TCT, static_cast<int>(k)) / tr + n * lag_trace(Tinv, static_cast<int>(k));
  }
  return g;
}

EffectParams em_initial(const std::vector<EffectGroup>& groups, int K, int L) {
  VectorXd s2 = VectorXd::Zero(L);
  for (const auto& g : groups) {
    const MatrixXd xx = g.geo->XtX_pinv * g.Z * g.geo->XtX_pinv;
    for (int l = 0; l < L; ++l) s2[l] += xx.block(l * K, l * K, K, K).trace();
  }
  s2 /= static_cast<double>(total_subjects(groups)) * K;
  return independent_effects(s2, K);
}

EmResult em_warmstart(const std::vector<EffectGroup>& groups, const EffectParams& init, int n_iters) {
  if (n_iters < 1) throw std::invalid_argument("need at least one EM iteration");
  const int L = init.L();
  const int K = static_cast<int>(init.rho.front().size());
  const int m = block_size(groups);
  if (m != K * L) throw std::invalid_argument("effect parameters do not match the design");
  const int n = total_subjects(groups);

  EmResult res;
  res.params = init;
  res.neg2ll_trace.push_back(neg2_loglik(groups, res.params));
  for (int it = 0; it < n_iters; ++it) {
    const MatrixXd Lg = effect_factor(res.params);
    MatrixXd C = MatrixXd::Zero(m, m);
    for (const auto& g : groups) {
      const MatrixXd S = MatrixXd::Identity(m, m) + Lg.transpose() * g.geo->XtWX * Lg;
      Eigen::LLT<MatrixXd> llt(symmetrize(S));
      const MatrixXd B = Lg * llt.solve(Lg.transpose());
      C += g.geo->n_subjects * B + B * g.U * B;
    }
    for (int l = 0; l < L; ++l) {
      const MatrixXd Cl = symmetrize(C.block(l * K, l * K, K, K));
      VectorXd& rho = res.params.rho[static_cast<std::size_t>(l)];
      if (K > 1 && Cl.trace() > 0.0) {
        auto f = [&](const VectorXd& x) {
          VectorXd r(K);
          r << 1.0, x;
          return profiled_q(r, Cl, n);
        };
        auto gfun = [&](const VectorXd& x) {
          VectorXd r(K);
          r << 1.0, x;
          return profiled_q_gradient(r, Cl, n);
        };
        auto feas = [&](const VectorXd& x) {
          VectorXd r(K);
          r << 1.0, x;
          return is_positive_definite(toeplitz(r), kPdFloor);
        };
        const VectorXd lo = VectorXd::Constant(K - 1, -1.0);
        const VectorXd hi = VectorXd::Constant(K - 1, 1.0);
        const BoxResult br = minimize_box(f, gfun, rho.tail(K - 1), lo, hi, feas, 100, 1e-12);
        rho.tail(K - 1) = br.x;
      }
      Eigen::LLT<MatrixXd> tl(toeplitz(rho));
      res.params.sigma2[l] = tl.solve(Cl).trace() / (static_cast<double>(n) * K);
    }
    res.neg2ll_trace.push_back(neg2_loglik(groups, res.params));
  }
  return res;
}

MlResult ml_effect_correlation(const std::vector<EffectGroup>& groups, const EffectParams& warm, int max_iters,
                               double tol) {
  const int L = warm.L();
  const int K = static_cast<int>(warm.rho.front().size());
  const int nv = L + L * (K - 1);
  // sigma2_l = scale_l * x_l^2 keeps the search independent of the data units.
  VectorXd scale(L);
  for (int l = 0; l < L; ++l) scale[l] = warm.sigma2[l] > 0.0 ? warm.sigma2[l] : 1.0;

  auto unpack = [&](const VectorXd& x) {
    EffectParams p;
    p.sigma2.resize(L);
    for (int l = 0; l < L; ++l) {
      p.sigma2[l] = scale[l] * x[l] * x[l];
      VectorXd r(K);
      r[0] = 1.0;
      r.tail(K - 1) = x.segment(L + l * (K - 1), K - 1);
      p.rho.push_back(r);
    }
    return p;
  };
  VectorXd x0(nv);
  for (int l = 0; l < L; ++l) {
    x0[l] = std::sqrt(std::max(warm.sigma2[l], 0.0) / scale[l]);
    x0.segment(L + l * (K - 1), K - 1) = warm.rho[static_cast<std::size_t>(l)].tail(K - 1);
  }
  VectorXd lo(nv), hi(nv);
  lo.head(L).setConstant(-kInf);
  hi.head(L).setConstant(kInf);
  lo.tail(nv - L).setConstant(-1.0);
  hi.tail(nv - L).setConstant(1.0);

  auto f = [&](const VectorXd& x) { return neg2_loglik(groups, unpack(x)); };
  auto gfun = [&](const VectorXd& x) {
    const LoglikGradient g = neg2_loglik_gradient(groups, unpack(x));
    VectorXd out(nv);
    for (int l = 0; l < L; ++l) {
      out[l] = 2.0 * scale[l] * x[l] * g.d_sigma2[l];
      out.segment(L + l * (K - 1), K - 1) = g.d_rho[static_cast<std::size_t>(l)];
    }
    return out;
  };
  auto feas = [&](const VectorXd& x) { return correlations_feasible(unpack(x), kPdFloor); };

  MlResult res;
  res.neg2ll_start = f(x0);
  const BoxResult br = minimize_box(f, gfun, x0, lo, hi, feas, max_iters, tol);
  res.iterations = br.iterations;
  if (br.f < res.neg2ll_start) {
    res.improved = true;
    res.params = unpack(br.x);
    res.neg2ll = br.f;
  } else {
    res.params = warm;
    res.neg2ll = res.neg2ll_start;
  }
  return res;
}

std::vector<ToeplitzCorrelation> aggregate_rho(const std::vector<std::vector<VectorXd>>& per_voxel_rho) {
  if (per_voxel_rho.empty()) throw std::invalid_argument("no voxel estimates to aggregate");
  const auto L = per_voxel_rho.front().size();
  std::vector<ToeplitzCorrelation> out;
  std::vector<double> buf(per_voxel_rho.size());
  for (std::size_t l = 0; l < L; ++l) {
    const auto K = per_voxel_rho.front()[l].size();
    VectorXd med(K);
    for (Eigen::Index k = 0; k < K; ++k) {
      for (std::size_t v = 0; v < per_voxel_rho.size(); ++v) buf[v] = per_voxel_rho[v][l][k];
      med[k] = median(buf);
    }
    med[0] = 1.0;
    out.push_back(toeplitz_from_lags(med));
  }
  return out;
}

// ---------------------------------------------------------------------------

NnqpResult solve_nnqp(const MatrixXd& A_in, const VectorXd& b) {
  const auto n = b.size();
  NnqpResult res;
  MatrixXd A = symmetrize(A_in);
  const double scale = std::max(A.trace() / static_cast<double>(n), std::numeric_limits<double>::min());
  Eigen::LDLT<MatrixXd> check(A);
  if (check.info() != Eigen::Success || !check.isPositive() || check.rcond() < 1e-13) {
    A.diagonal().array() += 1e-10 * A.trace() / static_cast<double>(n);
    res.ridge = true;
  }
  VectorXd x = VectorXd::Zero(n);
  std::vector<bool> free(static_cast<std::size_t>(n), false);
  const double tol = 1e-13 * std::max({1.0, b.cwiseAbs().maxCoeff(), scale});

  auto solve_free = [&]() {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i)
      if (free[static_cast<std::size_t>(i)]) idx.push_back(i);
    const auto m = static_cast<Eigen::Index>(idx.size());
    MatrixXd Af(m, m);
    VectorXd bf(m);
    for (Eigen::Index r = 0; r < m; ++r) {
      bf[r] = b[idx[static_cast<std::size_t>(r)]];
      for (Eigen::Index c = 0; c < m; ++c) Af(r, c) = A(idx[static_cast<std::size_t>(r)], idx[static_cast<std::size_t>(c)]);
    }
    const VectorXd zf = Af.ldlt().solve(bf);
    VectorXd z = VectorXd::Zero(n);
    for (Eigen::Index r = 0; r < m; ++r) z[idx[static_cast<std::size_t>(r)]] = zf[r];
    return z;
  };

  for (int outer = 0; outer < 3 * static_cast<int>(n) + 10; ++outer) {
    const VectorXd w = b - A * x;
    Eigen::Index best = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!free[static_cast<std::size_t>(i)] && w[i] > tol && (best < 0 || w[i] > w[best])) best = i;
    }
    if (best < 0) break;
    free[static_cast<std::size_t>(best)] = true;
    ++res.iterations;
    for (int inner = 0; inner <= static_cast<int>(n); ++inner) {
      const VectorXd z = solve_free();
      bool ok = true;
      for (Eigen::Index i = 0; i < n; ++i)
        if (free[static_cast<std::size_t>(i)] && z[i] <= 0.0) ok = false;
      if (ok) {
        x = z;
        break;
      }
      double alpha = 1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (free[static_cast<std::size_t>(i)] && z[i] <= 0.0) alpha = std::min(alpha, x[i] / (x[i] - z[i]));
      }
      x += alpha * (z - x);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (free[static_cast<std::size_t>(i)] && x[i] <= tol * 1e-3) {
          free[static_cast<std::size_t>(i)] = false;
          x[i] = 0.0;
        }
      }
    }
  }
  res.x = x;
  return res;
}

MatrixXd vls_matrix(const std::vector<std::shared_ptr<const GroupGeometry>>& geos, const std::vector<MatrixXd>& Txi) {
  const auto L = static_cast<Eigen::Index>(Txi.size());
  const auto K = Txi.front().rows();
  MatrixXd A = MatrixXd::Zero(L, L);
  for (const auto& geo : geos) {
    const MatrixXd& G = geo->XtX;
    for (Eigen::Index l = 0; l < L; ++l) {
      for (Eigen::Index m = l; m < L; ++m) {
        const MatrixXd left = Txi[static_cast<std::size_t>(l)] * G.block(l * K, m * K, K, K);
        const MatrixXd right = Txi[static_cast<std::size_t>(m)] * G.block(m * K, l * K, K, K);
        const double v = geo->n_subjects * trace_product(left, right);
        A(l, m) += v;
        if (m != l) A(m, l) += v;
      }
    }
  }
  return A;
}

VectorXd vls_rhs(const std::vector<EffectGroup>& groups, const std::vector<MatrixXd>& Txi) {
  const auto L = static_cast<Eigen::Index>(Txi.size());
  const auto K = Txi.front().rows();
  VectorXd b = VectorXd::Zero(L);
  for (const auto& g : groups) {
    for (Eigen::Index l = 0; l < L; ++l) {
      const MatrixXd& T = Txi[static_cast<std::size_t>(l)];
      b[l] += trace_product(T, g.Z.block(l * K, l * K, K, K)) -
              g.geo->n_subjects * trace_product(T, g.geo->XtVX.block(l * K, l * K, K, K));
    }
  }
  return b;
}

EffectVariance vls_variance(const std::vector<EffectGroup>& groups, const std::vector<MatrixXd>& Txi) {
  std::vector<std::shared_ptr<const GroupGeometry>> geos;
  for (const auto& g : groups) geos.push_back(g.geo);
  const NnqpResult qp = solve_nnqp(vls_matrix(geos, Txi), vls_rhs(groups, Txi));
  return {qp.x, qp.ridge};
}

// ---------------------------------------------------------------------------

GlsSystem gls_system_dense(const std::vector<VectorXd>& y, const std::vector<SubjectDesign>& designs,
                           const std::vector<MatrixXd>& Vinv) {
  if (y.size() != designs.size() || y.size() != Vinv.size()) throw std::invalid_argument("inconsistent subject lists");
  GlsSystem sys;
  const auto KL = designs.front().X.cols();
  sys.M = MatrixXd::Zero(KL, KL);
  sys.eta = VectorXd::Zero(KL);
  sys.n_subjects = static_cast<int>(y.size());
  for (std::size_t j = 0; j < y.size(); ++j) {
    const MatrixXd& W = Vinv[j];
    const MatrixXd& Phi = designs[j].Phi;
    const MatrixXd WPhi = W * Phi;
    Eigen::LDLT<MatrixXd> f(Phi.transpose() * WPhi);
    if (f.info() != Eigen::Success || !f.isPositive()) throw std::invalid_argument("Phi' V^-1 Phi is singular");
    const MatrixXd Q = W - WPhi * f.solve(WPhi.transpose());
    const MatrixXd QX = Q * designs[j].X;
    sys.M += designs[j].X.transpose() * QX;
    sys.eta += QX.transpose() * y[j];
    sys.yQy += y[j].dot(Q * y[j]);
  }
  sys.M = symmetrize(sys.M);
  return sys;
}

SecularResult solve_secular(const MatrixXd& H, const VectorXd& b, double tol) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(H));
  const VectorXd& lam = es.eigenvalues();
  const MatrixXd& U = es.eigenvectors();
  const VectorXd c = U.transpose() * b;
  const auto K = lam.size();
  const double lmin = lam[0];
  const double span = std::max(std::abs(lam[K - 1] - lmin), std::abs(lmin)) + std::numeric_limits<double>::min();
  const double bnorm = b.norm();
  SecularResult res;

  auto norm2 = [&](double C) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < K; ++i) {
      const double q = c[i] / (lam[i] + C);
      s += q * q;
    }
    return s;
  };

  // Hard case: b has (numerically) no component along the lowest eigenspace.
  double low_weight = 0.0;
  for (Eigen::Index i = 0; i < K; ++i)
    if (lam[i] - lmin <= 1e-12 * span) low_weight += c[i] * c[i];
  if (std::sqrt(low_weight) <= 1e-12 * std::max(bnorm, 1e-300) || bnorm == 0.0) {
    VectorXd w = VectorXd::Zero(K);
    for (Eigen::Index i = 0; i < K; ++i)
      if (lam[i] - lmin > 1e-12 * span) w[i] = c[i] / (lam[i] - lmin);
    if (w.squaredNorm() <= 1.0) {
      w[0] = std::sqrt(1.0 - w.squaredNorm());
      res.gamma = U * w;
      res.C = -lmin;
      res.hard_case = true;
      return res;
    }
  }

  const double lo0 = -lmin;
  double lo = lo0;
  double step = std::max(bnorm, std::numeric_limits<double>::min()) * std::ldexp(1.0, -20);
  double hi = lo0 + step;
  int doublings = 0;
  while (norm2(hi) > 1.0 && doublings < 60) {
    lo = hi;
    step *= 2.0;
    hi = lo0 + step;
    ++doublings;
  }
  if (norm2(hi) > 1.0) res.bracket_failed = true;

  double C = hi;
  for (int it = 0; it < 400; ++it) {
    C = 0.5 * (lo + hi);
    const double f = norm2(C) - 1.0;
    if (std::abs(f) <= tol) break;
    if (f > 0.0) lo = C;
    else hi = C;
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(C))) break;
  }
  // Newton on 1/|w(C)| - 1, which is close to linear in C, kept inside the bracket.
  for (int it = 0; it < 8 && !res.bracket_failed; ++it) {
    double s2 = 0.0, s3 = 0.0;
    for (Eigen::Index i = 0; i < K; ++i) {
      const double d = lam[i] + C;
      s2 += c[i] * c[i] / (d * d);
      s3 += c[i] * c[i] / (d * d * d);
    }
    const double wn = std::sqrt(s2);
    if (!(s3 > 0.0) || !(wn > 0.0)) break;
    const double next = C - (1.0 / wn - 1.0) * wn * wn * wn / s3;
    if (!(next > lo0) || next == C) break;
    C = next;
  }
  VectorXd w(K);
  for (Eigen::Index i = 0; i < K; ++i) w[i] = c[i] / (lam[i] + C);
  res.gamma = U * w;
  res.gamma /= res.gamma.norm();
  res.C = C;
  return res;
}

double gls_objective(const GlsSystem& sys, const MatrixXd& P, double n_lambda, const VectorXd& beta,
                     const VectorXd& gamma) {
  const VectorXd h = kron(beta, gamma);
  return sys.yQy - 2.0 * sys.eta.dot(h) + h.dot(sys.M * h) + n_lambda * gamma.dot(P * gamma);
}

VoxelFit gls_solve(const GlsSystem& sys, const MatrixXd& P, double n_lambda, const VectorXd& gamma_init, int K,
                   const GlsOptions& opt) {
  const auto KL = sys.M.rows();
  const int L = static_cast<int>(KL / K);
  VoxelFit fit;
  fit.M = sys.M;
  fit.eta = sys.eta;
  fit.gamma = gamma_init / gamma_init.norm();
  fit.beta = VectorXd::Zero(L);
  const double floor = 1e-12 * std::abs(sys.yQy) + 1e-300;
  double prev = kInf;
  for (int it = 0; it < opt.max_iters; ++it) {
    const MatrixXd IG = kron_identity_left(L, fit.gamma);
    const MatrixXd Gm = IG.transpose() * sys.M * IG;
    Eigen::LLT<MatrixXd> llt(symmetrize(Gm));
    if (llt.info() != Eigen::Success || Gm.diagonal().minCoeff() <= 1e-14 * std::max(sys.M.trace(), 1e-300)) {
      fit.status = FitStatus::unidentified;
      return fit;
    }
    fit.beta = llt.solve(IG.transpose() * sys.eta);

    const MatrixXd BI = kron_identity_right(fit.beta, K);
    const MatrixXd H = BI.transpose() * sys.M * BI + n_lambda * P;
    const VectorXd g = BI.transpose() * sys.eta;
    const SecularResult sec = solve_secular(H, g);
    fit.bracket_failed = fit.bracket_failed || sec.bracket_failed;
    const double step = (sec.gamma - fit.gamma).norm();
    fit.gamma = sec.gamma;
    fit.C_lagrange = sec.C;

    const double obj = gls_objective(sys, P, n_lambda, fit.beta, fit.gamma);
    fit.objective_trace.push_back(obj);
    fit.iterations = it + 1;
    if (std::abs(prev - obj) <= opt.tol * std::max(std::abs(obj), floor) && step <= opt.step_tol) {
      fit.converged = true;
      break;
    }
    prev = obj;
  }
  if (fit.gamma[argmax_abs(fit.gamma)] < 0.0) {
    fit.gamma = -fit.gamma;
    fit.beta = -fit.beta;
  }
  return fit;
}

VoxelFit gls_fit(const std::vector<VectorXd>& y, const std::vector<SubjectDesign>& designs,
                 const std::vector<MatrixXd>& V_hat, const MatrixXd& P, double lambda, const VectorXd& gamma_init,
                 const GlsOptions& opt) {
  std::vector<MatrixXd> Vinv;
  for (const auto& V : V_hat) {
    Eigen::LLT<MatrixXd> llt(V);
    if (llt.info() != Eigen::Success) throw std::invalid_argument("V_hat must be symmetric positive definite");
    Vinv.push_back(symmetrize(llt.solve(MatrixXd::Identity(V.rows(), V.cols()))));
  }
  const GlsSystem sys = gls_system_dense(y, designs, Vinv);
  const int K = static_cast<int>(P.rows());
  VoxelFit fit = gls_solve(sys, P, sys.n_subjects * lambda, gamma_init, K, opt);
  if (fit.status != FitStatus::ok) return fit;
  const VectorXd h = kron(fit.beta, fit.gamma);
  for (std::size_t j = 0; j < y.size(); ++j) {
    const MatrixXd WPhi = Vinv[j] * designs[j].Phi;
    fit.d.push_back((designs[j].Phi.transpose() * WPhi).ldlt().solve(WPhi.transpose() * (y[j] - designs[j].X * h)));
  }
  return fit;
}

}  // namespace hhrf
