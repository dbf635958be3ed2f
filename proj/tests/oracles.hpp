#pragma once

// Brute-force reference solvers used only by the test suites. None of these
// touch the simplex engine: they enumerate candidate vertices directly.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "hdqr/lp.hpp"

namespace hdqr::oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Calls `visit` with every size-k subset of {0..n-1}.
inline void for_each_subset(int n, int k, const std::function<void(const std::vector<int>&)>& visit) {
  if (k > n || k <= 0) return;
  std::vector<int> idx(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
  while (true) {
    visit(idx);
    int i = k - 1;
    while (i >= 0 && idx[static_cast<std::size_t>(i)] == n - k + i) --i;
    if (i < 0) return;
    ++idx[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
}

/// Hyperplane h^T x = g.
struct Hyperplane {
  VectorXd normal;
  double offset;
};

/// Minimum of a convex objective over all points where `dim` linearly
/// independent hyperplanes meet and `feasible` holds. Returns nullopt if no
/// feasible vertex exists.
inline std::optional<double> enumerate_vertices(int dim, const std::vector<Hyperplane>& planes,
                                                const std::function<bool(const VectorXd&)>& feasible,
                                                const std::function<double(const VectorXd&)>& objective,
                                                VectorXd* argmin = nullptr) {
  std::optional<double> best;
  MatrixXd m(dim, dim);
  VectorXd rhs(dim);
  for_each_subset(static_cast<int>(planes.size()), dim, [&](const std::vector<int>& pick) {
    for (int r = 0; r < dim; ++r) {
      m.row(r) = planes[static_cast<std::size_t>(pick[static_cast<std::size_t>(r)])].normal.transpose();
      rhs[r] = planes[static_cast<std::size_t>(pick[static_cast<std::size_t>(r)])].offset;
    }
    Eigen::FullPivLU<MatrixXd> lu(m);
    if (lu.rank() < dim) return;
    const VectorXd x = lu.solve(rhs);
    if (!x.allFinite() || !feasible(x)) return;
    const double val = objective(x);
    if (!best || val < *best) {
      best = val;
      if (argmin) *argmin = x;
    }
  });
  return best;
}

/// Vertex enumeration for a generic bounded LpProblem (minimization sense
/// handled by negation).
inline std::optional<double> brute_force_lp(const lp::LpProblem& p, double tol = 1e-9) {
  const int v = static_cast<int>(p.num_vars());
  std::vector<Hyperplane> planes;
  for (lp::Index i = 0; i < p.num_rows(); ++i) {
    VectorXd a(v);
    for (int j = 0; j < v; ++j) a[j] = p.coeff(i, j);
    if (std::isfinite(p.row_lower(i))) planes.push_back({a, p.row_lower(i)});
    if (std::isfinite(p.row_upper(i)) && p.row_upper(i) != p.row_lower(i)) planes.push_back({a, p.row_upper(i)});
  }
  for (int j = 0; j < v; ++j) {
    VectorXd e = VectorXd::Zero(v);
    e[j] = 1.0;
    if (std::isfinite(p.bound(j).lower)) planes.push_back({e, p.bound(j).lower});
    if (std::isfinite(p.bound(j).upper) && p.bound(j).upper != p.bound(j).lower) planes.push_back({e, p.bound(j).upper});
  }
  const double sign = p.sense() == lp::Sense::Maximize ? -1.0 : 1.0;
  auto best = enumerate_vertices(
      v, planes, [&](const VectorXd& x) { return lp::max_violation(p, x) <= tol; },
      [&](const VectorXd& x) { return sign * p.cost().dot(x); });
  if (best) *best *= sign;
  return best;
}

/// Minimizes n^{-1} sum rho_tau(y - X b) + sum lambda_j |b_j| by enumerating
/// points where p+1 of the kinks {y_i = X_i b} U {b_j = 0} intersect.
inline double brute_force_penalized_qr(const MatrixXd& x, const VectorXd& y, double tau, const VectorXd& lambda,
                                       VectorXd* argmin = nullptr) {
  const int n = static_cast<int>(x.rows()), d = static_cast<int>(x.cols());
  std::vector<Hyperplane> planes;
  for (int i = 0; i < n; ++i) planes.push_back({x.row(i).transpose(), y[i]});
  for (int j = 0; j < d; ++j) {
    VectorXd e = VectorXd::Zero(d);
    e[j] = 1.0;
    planes.push_back({e, 0.0});
  }
  auto obj = [&](const VectorXd& b) {
    const VectorXd r = y - x * b;
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += r[i] * (tau - (r[i] < 0.0 ? 1.0 : 0.0));
    return s / n + lambda.cwiseProduct(b.cwiseAbs()).sum();
  };
  return *enumerate_vertices(d, planes, [](const VectorXd&) { return true; }, obj, argmin);
}

/// min ||d||_1 s.t. ||S d - e_j||_inf <= gamma, |X_i^T d| <= L by enumerating
/// vertices of the feasible polyhedron refined by the orthant hyperplanes.
inline std::optional<double> brute_force_clime(const MatrixXd& sigma, const MatrixXd& x, int j, double gamma,
                                               double bound_l) {
  const int d = static_cast<int>(sigma.cols());
  std::vector<Hyperplane> planes;
  for (int k = 0; k < d; ++k) {
    const double ek = k == j ? 1.0 : 0.0;
    planes.push_back({sigma.row(k).transpose(), ek + gamma});
    planes.push_back({sigma.row(k).transpose(), ek - gamma});
  }
  for (int i = 0; i < x.rows(); ++i) {
    planes.push_back({x.row(i).transpose(), bound_l});
    planes.push_back({x.row(i).transpose(), -bound_l});
  }
  for (int k = 0; k < d; ++k) {
    VectorXd e = VectorXd::Zero(d);
    e[k] = 1.0;
    planes.push_back({e, 0.0});
  }
  auto feasible = [&](const VectorXd& v) {
    VectorXd r = sigma * v;
    r[j] -= 1.0;
    if (r.cwiseAbs().maxCoeff() > gamma + 1e-9) return false;
    return (x * v).cwiseAbs().maxCoeff() <= bound_l + 1e-9;
  };
  return enumerate_vertices(d, planes, feasible, [](const VectorXd& v) { return v.cwiseAbs().sum(); });
}

inline MatrixXd random_matrix(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = g(rng);
  return m;
}

/// Design with a leading column of ones followed by Gaussian covariates.
inline MatrixXd random_design(int n, int p, std::mt19937_64& rng) {
  MatrixXd x(n, p + 1);
  x.col(0).setOnes();
  if (p > 0) x.rightCols(p) = random_matrix(n, p, rng);
  return x;
}

}  // namespace hdqr::oracle
