#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace hdqr {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Response plus design; column 0 of `x` is the intercept (all ones).
struct Dataset {
  VectorXd y;
  MatrixXd x;

  Index n() const { return x.rows(); }
  /// Number of non-intercept covariates.
  Index p() const { return x.cols() - 1; }

  /// Builds a dataset from covariates without the intercept column.
  static Dataset with_intercept(VectorXd y, const MatrixXd& z) {
    Dataset d;
    d.y = std::move(y);
    d.x.resize(z.rows(), z.cols() + 1);
    d.x.col(0).setOnes();
    d.x.rightCols(z.cols()) = z;
    return d;
  }

  void validate() const {
    if (n() < 2) throw std::invalid_argument("dataset: need at least two observations");
    if (y.size() != n()) throw std::invalid_argument("dataset: response length does not match design rows");
    if (x.cols() < 1) throw std::invalid_argument("dataset: design has no columns");
    if (!y.allFinite() || !x.allFinite()) throw std::invalid_argument("dataset: non-finite entries");
    for (Index i = 0; i < n(); ++i)
      if (x(i, 0) != 1.0) throw std::invalid_argument("dataset: column 0 must be the intercept");
    for (Index j = 1; j < x.cols(); ++j) {
      const double first = x(0, j);
      if ((x.col(j).array() == first).all())
        throw std::invalid_argument("dataset: covariate x" + std::to_string(j) + " is constant");
    }
  }
};

/// Uniformly spaced quantile levels inside [epsilon, 1 - epsilon].
struct TauGrid {
  double epsilon = 0.05;
  double step = 0.0;
  std::vector<double> points;

  /// Points a, a+step, ..., b (b included when it lies on the lattice).
  static TauGrid range(double a, double b, double step) {
    if (!(a > 0.0 && b < 1.0 && a <= b)) throw std::invalid_argument("tau grid: need 0 < a <= b < 1");
    if (a < b && !(step > 0.0)) throw std::invalid_argument("tau grid: step must be positive");
    TauGrid g;
    g.step = a < b ? step : 0.0;
    g.epsilon = std::min(a, 1.0 - b);
    const Index count = a < b ? static_cast<Index>(std::floor((b - a) / step + 1e-9)) + 1 : 1;
    for (Index k = 0; k < count; ++k) g.points.push_back(snap(a + static_cast<double>(k) * step));
    return g;
  }

  /// Grid symmetric about 1/2 on [epsilon, 1 - epsilon].
  static TauGrid symmetric(double epsilon, double step) {
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw std::invalid_argument("tau grid: epsilon must lie in (0, 0.5)");
    const Index half = static_cast<Index>(std::floor((0.5 - epsilon) / step + 1e-9));
    TauGrid g;
    g.step = step;
    g.epsilon = epsilon;
    for (Index k = -half; k <= half; ++k) g.points.push_back(snap(0.5 + static_cast<double>(k) * step));
    g.epsilon = g.points.front();
    return g;
  }

  static TauGrid single(double tau) { return range(tau, tau, 0.0); }

  Index size() const { return static_cast<Index>(points.size()); }
  double front() const { return points.front(); }
  double back() const { return points.back(); }

  /// Position of `tau` in the grid, or -1.
  Index index_of(double tau) const {
    for (Index k = 0; k < size(); ++k)
      if (std::abs(points[static_cast<std::size_t>(k)] - tau) < 1e-9) return k;
    return -1;
  }

  void validate() const {
    if (points.empty()) throw std::invalid_argument("tau grid: empty");
    for (std::size_t k = 0; k < points.size(); ++k) {
      if (!(points[k] > 0.0 && points[k] < 1.0)) throw std::invalid_argument("tau grid: points must lie in (0, 1)");
      if (k > 0 && !(points[k] > points[k - 1])) throw std::invalid_argument("tau grid: points must increase");
    }
  }

  /// Rounds to 12 decimals so that lattice points compare exactly.
  static double snap(double t) { return std::round(t * 1e12) / 1e12; }
};

}  // namespace hdqr
