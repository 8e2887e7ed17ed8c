#pragma once

// Straightforward reference implementations used as test oracles.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Uniform knots extending past [0, T]: t_i = (i - order / 2) * T / (K - 1).
inline std::vector<double> knots(double T, int K, int order) {
  std::vector<double> t(static_cast<std::size_t>(K + order));
  for (int i = 0; i < K + order; ++i) t[static_cast<std::size_t>(i)] = (i - order / 2.0) * T / (K - 1);
  return t;
}

/// B-spline B_{k,order}(x) by the textbook recursion (order = degree + 1).
inline double bspline(const std::vector<double>& t, int k, int order, double x) {
  if (order == 1) return (t[static_cast<std::size_t>(k)] <= x && x < t[static_cast<std::size_t>(k + 1)]) ? 1.0 : 0.0;
  double v = 0.0;
  const double a = t[static_cast<std::size_t>(k + order - 1)] - t[static_cast<std::size_t>(k)];
  const double b = t[static_cast<std::size_t>(k + order)] - t[static_cast<std::size_t>(k + 1)];
  if (a > 0) v += (x - t[static_cast<std::size_t>(k)]) / a * bspline(t, k, order - 1, x);
  if (b > 0) v += (t[static_cast<std::size_t>(k + order)] - x) / b * bspline(t, k + 1, order - 1, x);
  return v;
}

inline double gamma_pdf(double x, double shape, double scale) {
  if (x <= 0.0) return 0.0;
  return std::pow(x, shape - 1.0) * std::exp(-x / scale) / (std::tgamma(shape) * std::pow(scale, shape));
}

inline MatrixXd random_spd(int n, std::mt19937_64& rng, double ridge = 0.5) {
  std::normal_distribution<double> z;
  MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = z(rng);
  return A * A.transpose() + ridge * n * MatrixXd::Identity(n, n);
}

inline VectorXd random_vector(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = z(rng);
  return v;
}

/// Central finite-difference gradient.
template <typename F>
VectorXd fd_gradient(F f, const VectorXd& x, double h = 1e-6) {
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

}  // namespace oracle
