#pragma once

// Column-wise l1-minimal approximate inverse of the sample covariance with
// design-projection bounds, and its magnitude-based symmetrization.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdqr/dataset.hpp"
#include "hdqr/lp.hpp"

namespace hdqr {

/// n^{-1} X^T X including the intercept column.
inline MatrixXd sample_covariance(const Dataset& data) {
  MatrixXd s = MatrixXd::Zero(data.x.cols(), data.x.cols());
  s.selfadjointView<Eigen::Lower>().rankUpdate(data.x.transpose(), 1.0 / static_cast<double>(data.n()));
  return s.selfadjointView<Eigen::Lower>();
}

struct ClimeColumn {
  lp::Status status = lp::Status::IterationLimit;
  VectorXd d;
  lp::Index iterations = 0;
};

/// min ||d||_1  s.t.  ||Sigma d - e_j||_inf <= gamma,  |X_i^T d| <= L for all i.
/// Pass L = inf to drop the projection rows.
inline ClimeColumn clime_column(const MatrixXd& sigma, const MatrixXd& x, Index j, double gamma, double L) {
  const Index d = sigma.rows();
  if (sigma.cols() != d || x.cols() != d) throw std::invalid_argument("clime_column: dimension mismatch");
  if (j < 0 || j >= d) throw std::invalid_argument("clime_column: column index out of range");
  if (!(gamma > 0.0) || !(L > 0.0)) throw std::invalid_argument("clime_column: gamma and L must be positive");
  const bool project = std::isfinite(L);
  lp::LpProblem prob(2 * d);
  prob.cost().setOnes();
  for (Index k = 0; k < d; ++k) prob.set_twins(k, d + k);
  prob.reserve_rows(d + (project ? x.rows() : 0));
  VectorXd row(2 * d);
  for (Index a = 0; a < d; ++a) {
    row.head(d) = sigma.row(a).transpose();
    row.tail(d) = -sigma.row(a).transpose();
    const double e = a == j ? 1.0 : 0.0;
    prob.add_row(row, lp::Relation::Range, e - gamma, e + gamma);
  }
  if (project)
    for (Index i = 0; i < x.rows(); ++i) {
      row.head(d) = x.row(i).transpose();
      row.tail(d) = -x.row(i).transpose();
      prob.add_row(row, lp::Relation::Range, -L, L);
    }
  auto sol = lp::solve_bounded_lp(prob);
  ClimeColumn out;
  out.status = sol.status;
  out.iterations = sol.iterations;
  out.d = sol.x.head(d) - sol.x.tail(d);
  return out;
}

/// Defaults gamma = c2 sqrt(log(max(p, n)) / n) and L = c3 sqrt(log(max(p, n))).
struct Tuning {
  double gamma = 0.0;
  double L = 0.0;
};

inline constexpr double kDefaultC2 = 1.0;
inline constexpr double kDefaultC3 = 2.0;
inline constexpr int kMaxEscalations = 6;

inline Tuning default_tuning(Index n, Index p, double c2 = kDefaultC2, double c3 = kDefaultC3) {
  const double lg = std::log(static_cast<double>(std::max(p, n)));
  return {c2 * std::sqrt(lg / static_cast<double>(n)), c3 * std::sqrt(lg)};
}

inline Tuning default_tuning(const Dataset& data, double c2 = kDefaultC2, double c3 = kDefaultC3) {
  return default_tuning(data.n(), data.p(), c2, c3);
}

/// One solved pre-symmetrization column and the parameters it needed.
struct ColumnRecord {
  VectorXd d;
  double gamma = 0.0;
  double L = 0.0;
  int escalations = 0;
};

/// Symmetrized estimate. The full estimate holds every row; a partial one
/// holds the requested rows only, each identical to the corresponding row of
/// the full estimate.
struct PrecisionEstimate {
  MatrixXd sigma;
  double gamma = 0.0;
  double L = 0.0;
  std::vector<Index> rows;
  /// rows.size() x (p+1); row r is row rows[r] of the symmetrized matrix.
  MatrixXd d_rows;
  std::map<Index, ColumnRecord> columns;

  Index dim() const { return sigma.rows(); }
  bool complete() const { return static_cast<Index>(rows.size()) == dim(); }

  Index slot(Index j) const {
    const auto it = std::find(rows.begin(), rows.end(), j);
    if (it == rows.end()) throw std::invalid_argument("precision: row " + std::to_string(j) + " was not estimated");
    return static_cast<Index>(it - rows.begin());
  }

  VectorXd row(Index j) const { return d_rows.row(slot(j)).transpose(); }

  MatrixXd full() const {
    if (!complete()) throw std::logic_error("precision: estimate holds only some rows");
    MatrixXd m(dim(), dim());
    for (std::size_t r = 0; r < rows.size(); ++r) m.row(rows[r]) = d_rows.row(static_cast<Index>(r));
    return m;
  }

  /// D x for x supported on the held rows (D is symmetric).
  VectorXd apply(const VectorXd& x) const {
    VectorXd out = VectorXd::Zero(dim());
    for (Index j = 0; j < x.size(); ++j)
      if (x[j] != 0.0) out += x[j] * row(j);
    return out;
  }

  /// x^T D Sigma D x.
  double sandwich(const VectorXd& x) const {
    const VectorXd dx = apply(x);
    return dx.dot(sigma * dx);
  }

  /// Columns whose parameters had to be escalated.
  std::vector<Index> escalated() const {
    std::vector<Index> out;
    for (const auto& [j, rec] : columns)
      if (rec.escalations > 0) out.push_back(j);
    return out;
  }
};

struct EscalationError : std::runtime_error {
  Index column;
  EscalationError(const std::string& what, Index j) : std::runtime_error(what), column(j) {}
};

namespace detail {

/// Solves column j, doubling the parameter responsible for infeasibility:
/// gamma when the covariance rows alone are infeasible, L otherwise.
inline ColumnRecord solve_column_escalating(const MatrixXd& sigma, const MatrixXd& x, Index j, double gamma, double L,
                                            int max_escalations) {
  ColumnRecord rec;
  rec.gamma = gamma;
  rec.L = L;
  for (int attempt = 0;; ++attempt) {
    auto col = clime_column(sigma, x, j, rec.gamma, rec.L);
    if (col.status == lp::Status::Optimal) {
      rec.d = std::move(col.d);
      rec.escalations = attempt;
      return rec;
    }
    if (col.status != lp::Status::Infeasible)
      throw std::runtime_error("precision: column " + std::to_string(j) + " LP ended with status " +
                               lp::to_string(col.status));
    if (attempt == max_escalations)
      throw EscalationError("precision: column " + std::to_string(j) + " infeasible after " +
                                std::to_string(max_escalations) + " escalations",
                            j);
    const auto relaxed = clime_column(sigma, x, j, rec.gamma, lp::kInf);
    if (relaxed.status == lp::Status::Optimal) rec.L *= 2.0;
    else rec.gamma *= 2.0;
  }
}

/// Entry a of column b, i.e. d^p_{ab}.
inline double entry(const std::map<Index, ColumnRecord>& cols, Index a, Index b) { return cols.at(b).d[a]; }

/// Symmetrized (i, k) entry: the smaller-magnitude of d^p_ik and d^p_ki,
/// with a tie resolved in favour of the entry above the diagonal.
inline double symmetric_entry(const std::map<Index, ColumnRecord>& cols, Index i, Index k) {
  const Index a = std::min(i, k), b = std::max(i, k);
  const double upper = entry(cols, a, b), lower = entry(cols, b, a);
  return std::abs(upper) <= std::abs(lower) ? upper : lower;
}

inline PrecisionEstimate estimate_rows(const Dataset& data, const std::vector<Index>& wanted, double gamma, double L,
                                       int max_escalations) {
  if (!(gamma > 0.0) || !(L > 0.0)) throw std::invalid_argument("precision: gamma and L must be positive");
  PrecisionEstimate est;
  est.sigma = sample_covariance(data);
  est.gamma = gamma;
  est.L = L;
  const Index d = est.dim();
  auto ensure = [&](Index j) {
    if (!est.columns.count(j)) est.columns.emplace(j, solve_column_escalating(est.sigma, data.x, j, gamma, L, max_escalations));
  };
  std::set<Index> seen;
  for (Index j : wanted) {
    if (j < 0 || j >= d) throw std::invalid_argument("precision: row index out of range");
    if (!seen.insert(j).second) continue;
    est.rows.push_back(j);
    ensure(j);
  }
  // Row j needs column k wherever d^p_kj is nonzero or the pair ties.
  for (Index j : est.rows) {
    const VectorXd dj = est.columns.at(j).d;
    for (Index k = 0; k < d; ++k)
      if (k != j && dj[k] != 0.0) ensure(k);
  }
  est.d_rows = MatrixXd::Zero(static_cast<Index>(est.rows.size()), d);
  for (std::size_t r = 0; r < est.rows.size(); ++r) {
    const Index j = est.rows[r];
    const VectorXd& dj = est.columns.at(j).d;
    for (Index k = 0; k < d; ++k) {
      if (k == j) est.d_rows(static_cast<Index>(r), k) = dj[j];
      else if (dj[k] != 0.0) est.d_rows(static_cast<Index>(r), k) = symmetric_entry(est.columns, j, k);
    }
  }
  return est;
}

}  // namespace detail

/// All p+1 columns, symmetrized.
inline PrecisionEstimate estimate_precision(const Dataset& data, double gamma, double L,
                                            int max_escalations = kMaxEscalations) {
  data.validate();
  std::vector<Index> all(static_cast<std::size_t>(data.x.cols()));
  for (Index j = 0; j < data.x.cols(); ++j) all[static_cast<std::size_t>(j)] = j;
  return detail::estimate_rows(data, all, gamma, L, max_escalations);
}

/// Only the rows in `wanted`, each equal to the matching row of the full
/// symmetrized estimate. Solves column j and every column k with d^p_kj != 0.
inline PrecisionEstimate estimate_precision_rows(const Dataset& data, const std::vector<Index>& wanted, double gamma,
                                                 double L, int max_escalations = kMaxEscalations) {
  data.validate();
  return detail::estimate_rows(data, wanted, gamma, L, max_escalations);
}

}  // namespace hdqr
