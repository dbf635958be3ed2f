#pragma once

// l1-penalized and oracle quantile regression solved as exact LPs.
//
// Columns with a zero penalty enter as free variables, columns with an
// infinite penalty are dropped, and the rest are split b = b+ - b-. The
// residual is split u = u+ - u-, one equality row per observation. Costs are
// scaled by n so that the optimal row duals are y_i = xi_i - (1 - tau), with
// xi the regression rank scores.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "hdqr/dataset.hpp"
#include "hdqr/lp.hpp"

namespace hdqr {

inline double check_loss(double z, double tau) { return z * (tau - (z < 0.0 ? 1.0 : 0.0)); }
inline double score(double z, double tau) { return tau - (z < 0.0 ? 1.0 : 0.0); }

/// Residuals with |r| at or below this are treated as interpolated.
inline constexpr double kZeroResidual = 1e-8;

/// lambda0 = c1 * sqrt(log(p) / n) with c1 = 2; p is floored at 2 so the
/// rule stays positive for a single covariate.
inline double default_lambda0(Index n, Index p, double c1 = 2.0) {
  return c1 * std::sqrt(std::log(static_cast<double>(std::max<Index>(p, 2))) / static_cast<double>(n));
}

/// lambda_j = lambda0 * sqrt(tau (1 - tau)) * sigma_j, sigma_j^2 = mean of
/// x_ij^2; the intercept is unpenalized.
inline VectorXd default_penalties(const Dataset& data, double tau, double lambda0) {
  if (!(lambda0 >= 0.0)) throw std::invalid_argument("default_penalties: lambda0 must be nonnegative");
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("default_penalties: tau must lie in (0, 1)");
  VectorXd lam = VectorXd::Zero(data.x.cols());
  const double scale = lambda0 * std::sqrt(tau * (1.0 - tau));
  for (Index j = 1; j < data.x.cols(); ++j) {
    const double sd = std::sqrt(data.x.col(j).squaredNorm() / static_cast<double>(data.n()));
    if (!(sd > 0.0)) throw std::invalid_argument("default_penalties: column " + std::to_string(j) + " is zero");
    lam[j] = scale * sd;
  }
  return lam;
}

struct QuantileFit {
  double tau = 0.5;
  VectorXd beta;
  VectorXd residuals;
  /// n^{-1} sum rho_tau(r_i) + sum lambda_j |beta_j|.
  double objective = 0.0;
  VectorXd penalties;
  /// Optimal LP row duals: psi_i in [tau - 1, tau], equal to score(r_i) off
  /// the interpolated set, with |n^{-1} X^T psi| <= lambda.
  VectorXd subgradient;
  lp::Status lp_status = lp::Status::IterationLimit;
  lp::Index iterations = 0;
  /// Final basis, reusable as a warm start for a problem of the same shape.
  lp::Basis basis;

  Index active_count(double tol = 0.0) const { return (beta.array().abs() > tol).count(); }
  Index interpolated_count() const { return (residuals.array().abs() <= kZeroResidual).count(); }
};

struct QuantilePath {
  TauGrid grid;
  std::vector<QuantileFit> fits;
};

/// Penalized objective evaluated at `beta`.
inline double penalized_objective(const Dataset& data, double tau, const VectorXd& penalties, const VectorXd& beta) {
  const VectorXd r = data.y - data.x * beta;
  double loss = 0.0;
  for (Index i = 0; i < r.size(); ++i) loss += check_loss(r[i], tau);
  double pen = 0.0;
  for (Index j = 0; j < beta.size(); ++j)
    if (beta[j] != 0.0) pen += penalties[j] * std::abs(beta[j]);
  return loss / static_cast<double>(data.n()) + pen;
}

namespace detail {

/// Column layout of the primal program for a given penalty vector.
struct PrimalLayout {
  std::vector<Index> plus;   // LP index of b+_j or the free b_j; -1 if dropped
  std::vector<Index> minus;  // LP index of b-_j, -1 if free or dropped
  Index u_base = 0;          // u+_i at u_base + 2i, u-_i at u_base + 2i + 1

  explicit PrimalLayout(const VectorXd& lam) {
    const auto d = static_cast<std::size_t>(lam.size());
    plus.assign(d, -1);
    minus.assign(d, -1);
    Index v = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double l = lam[static_cast<Index>(j)];
      if (std::isinf(l)) continue;
      plus[j] = v++;
      if (l > 0.0) minus[j] = v++;
    }
    u_base = v;
  }
};

/// Basis of the intercept-only fit: the intercept interpolates the
/// observation at the order-statistic tau-quantile and every other residual
/// is basic on the side of its sign.
inline lp::Basis quantile_start_basis(const Dataset& data, const PrimalLayout& lay, Index vars, double tau) {
  const Index n = data.n();
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  const auto k = std::clamp<Index>(static_cast<Index>(std::ceil(tau * static_cast<double>(n) - 1e-12)), 1, n) - 1;
  std::nth_element(order.begin(), order.begin() + k, order.end(),
                   [&](Index a, Index b) { return data.y[a] < data.y[b] || (data.y[a] == data.y[b] && a < b); });
  const Index pivot_row = order[static_cast<std::size_t>(k)];
  const double q = data.y[pivot_row];

  lp::Basis b;
  b.structural.assign(static_cast<std::size_t>(vars), lp::VarStatus::AtLower);
  for (std::size_t j = 0; j < lay.plus.size(); ++j)
    if (lay.plus[j] >= 0 && lay.minus[j] < 0) b.structural[static_cast<std::size_t>(lay.plus[j])] = lp::VarStatus::Free;
  b.structural[static_cast<std::size_t>(lay.plus[0])] = lp::VarStatus::Basic;
  for (Index i = 0; i < n; ++i) {
    if (i == pivot_row) continue;
    const Index col = lay.u_base + 2 * i + (data.y[i] >= q ? 0 : 1);
    b.structural[static_cast<std::size_t>(col)] = lp::VarStatus::Basic;
  }
  b.logical.assign(static_cast<std::size_t>(n), lp::VarStatus::AtLower);
  return b;
}


/// Costs scaled by n so the residual weights are tau and 1 - tau.
template <class Sink>
void for_each_primal_cost(const Dataset& data, double tau, const VectorXd& penalties, const PrimalLayout& lay,
                          Sink&& sink) {
  const Index n = data.n();
  const double nd = static_cast<double>(n);
  for (Index j = 0; j < data.x.cols(); ++j) {
    const auto uj = static_cast<std::size_t>(j);
    if (lay.minus[uj] < 0) continue;
    sink(lay.plus[uj], nd * penalties[j]);
    sink(lay.minus[uj], nd * penalties[j]);
  }
  for (Index i = 0; i < n; ++i) {
    sink(lay.u_base + 2 * i, tau);
    sink(lay.u_base + 2 * i + 1, 1.0 - tau);
  }
}

inline void set_primal_costs(lp::LpProblem& prob, const Dataset& data, double tau, const VectorXd& penalties,
                             const PrimalLayout& lay) {
  for_each_primal_cost(data, tau, penalties, lay, [&](Index v, double c) { prob.cost()[v] = c; });
}

/// Split-variable LP of the penalized fit: b = b+ - b-, residual = u+ - u-.
inline lp::LpProblem primal_problem(const Dataset& data, double tau, const VectorXd& penalties,
                                    const PrimalLayout& lay) {
  const Index n = data.n(), d = data.x.cols();
  const Index vars = lay.u_base + 2 * n;
  lp::LpProblem prob(vars);
  for (Index j = 0; j < d; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    if (lay.plus[uj] >= 0 && lay.minus[uj] < 0) prob.set_bounds(lay.plus[uj], -lp::kInf, lp::kInf);
  }
  set_primal_costs(prob, data, tau, penalties, lay);
  for (Index j = 0; j < d; ++j)
    if (lay.minus[static_cast<std::size_t>(j)] >= 0)
      prob.set_twins(lay.plus[static_cast<std::size_t>(j)], lay.minus[static_cast<std::size_t>(j)]);
  for (Index i = 0; i < n; ++i) prob.set_twins(lay.u_base + 2 * i, lay.u_base + 2 * i + 1);
  prob.reserve_rows(n);
  std::vector<double> row(static_cast<std::size_t>(vars));
  for (Index i = 0; i < n; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (Index j = 0; j < d; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      if (lay.plus[uj] >= 0) row[static_cast<std::size_t>(lay.plus[uj])] = data.x(i, j);
      if (lay.minus[uj] >= 0) row[static_cast<std::size_t>(lay.minus[uj])] = -data.x(i, j);
    }
    row[static_cast<std::size_t>(lay.u_base + 2 * i)] = 1.0;
    row[static_cast<std::size_t>(lay.u_base + 2 * i + 1)] = -1.0;
    prob.add_row(row, lp::Relation::Equal, data.y[i]);
  }
  return prob;
}

inline VectorXd checked_penalties(const Dataset& data, double tau, VectorXd penalties) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("fit_penalized: tau must lie in (0, 1)");
  if (penalties.size() != data.x.cols()) throw std::invalid_argument("fit_penalized: penalty length mismatch");
  for (Index j = 0; j < penalties.size(); ++j)
    if (!(penalties[j] >= 0.0)) throw std::invalid_argument("fit_penalized: penalties must be nonnegative");
  penalties[0] = 0.0;
  return penalties;
}

inline QuantileFit extract_fit(const Dataset& data, double tau, const VectorXd& penalties, const PrimalLayout& lay,
                               lp::LpSolution&& sol) {
  const Index d = data.x.cols();
  QuantileFit fit;
  fit.tau = tau;
  fit.penalties = penalties;
  fit.lp_status = sol.status;
  fit.iterations = sol.iterations;
  fit.basis = std::move(sol.basis);
  fit.beta = VectorXd::Zero(d);
  for (Index j = 0; j < d; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    if (lay.plus[uj] < 0) continue;
    double b = sol.x[lay.plus[uj]];
    if (lay.minus[uj] >= 0) b -= sol.x[lay.minus[uj]];
    fit.beta[j] = b;
  }
  fit.residuals = data.y - data.x * fit.beta;
  fit.subgradient = std::move(sol.row_duals);
  fit.objective = penalized_objective(data, tau, penalties, fit.beta);
  return fit;
}

/// True when two penalty vectors have the same zero/finite/infinite pattern,
/// so their split LPs share a layout.
inline bool same_pattern(const VectorXd& a, const VectorXd& b) {
  if (a.size() != b.size()) return false;
  for (Index j = 0; j < a.size(); ++j) {
    if (std::isinf(a[j]) != std::isinf(b[j])) return false;
    if ((a[j] == 0.0) != (b[j] == 0.0)) return false;
  }
  return true;
}

}  // namespace detail

/// Exact minimizer of n^{-1} sum rho_tau(Y_i - X_i b) + sum_j lambda_j |b_j|.
/// The intercept is never penalized: penalties[0] is ignored and reported as
/// zero. An infinite lambda_j pins b_j at zero. `warm` may carry the basis of
/// an earlier fit with the same pattern of zero/finite/infinite penalties.
inline QuantileFit fit_penalized(const Dataset& data, double tau, VectorXd penalties,
                                 const lp::Basis* warm = nullptr, const lp::SolverOptions& options = {}) {
  penalties = detail::checked_penalties(data, tau, std::move(penalties));
  const Index n = data.n();
  detail::PrimalLayout lay(penalties);
  const Index vars = lay.u_base + 2 * n;
  const lp::LpProblem prob = detail::primal_problem(data, tau, penalties, lay);
  const lp::Basis start = detail::quantile_start_basis(data, lay, vars, tau);
  const bool use_warm = warm != nullptr && static_cast<Index>(warm->structural.size()) == vars &&
                        static_cast<Index>(warm->logical.size()) == n;
  auto sol = lp::solve_bounded_lp(prob, options, use_warm ? warm : &start);
  return detail::extract_fit(data, tau, penalties, lay, std::move(sol));
}

/// Re-solves one split LP across quantile levels, changing only the costs;
/// each solve starts from the previous optimal basis.
class PrimalPathSolver {
 public:
  PrimalPathSolver(const Dataset& data, double tau, const VectorXd& penalties, const lp::SolverOptions& options = {})
      : data_(data), pen0_(detail::checked_penalties(data, tau, penalties)), lay_(pen0_),
        solver_(detail::primal_problem(data, tau, pen0_, lay_), options), tau0_(tau) {}

  QuantileFit fit(double tau, const VectorXd& penalties) {
    VectorXd pen = detail::checked_penalties(data_, tau, penalties);
    if (!detail::same_pattern(pen, pen0_))
      throw std::invalid_argument("PrimalPathSolver: penalty pattern changed along the path");
    lp::LpSolution sol;
    if (!started_) {
      const auto start = detail::quantile_start_basis(data_, lay_, lay_.u_base + 2 * data_.n(), tau0_);
      detail::for_each_primal_cost(data_, tau, pen, lay_, [&](Index v, double c) { solver_.set_cost(v, c); });
      sol = solver_.solve(&start);
      started_ = true;
    } else {
      detail::for_each_primal_cost(data_, tau, pen, lay_, [&](Index v, double c) { solver_.set_cost(v, c); });
      sol = solver_.solve();
    }
    return detail::extract_fit(data_, tau, pen, lay_, std::move(sol));
  }

 private:
  const Dataset& data_;
  VectorXd pen0_;
  detail::PrimalLayout lay_;
  lp::Resolver solver_;
  double tau0_;
  bool started_ = false;
};

/// Penalized fits along `grid` with the default penalty rule. With
/// `warm_start` each level re-enters the simplex from its left neighbour's
/// optimum; otherwise every level is solved from the crash basis.
inline QuantilePath fit_path(const Dataset& data, const TauGrid& grid, double lambda0, bool warm_start = true) {
  grid.validate();
  QuantilePath path;
  path.grid = grid;
  path.fits.reserve(grid.points.size());
  if (!warm_start) {
    for (double tau : grid.points) path.fits.push_back(fit_penalized(data, tau, default_penalties(data, tau, lambda0)));
    return path;
  }
  PrimalPathSolver solver(data, grid.front(), default_penalties(data, grid.front(), lambda0));
  for (double tau : grid.points) path.fits.push_back(solver.fit(tau, default_penalties(data, tau, lambda0)));
  return path;
}

/// Unpenalized quantile regression on the columns in `support` (which must
/// contain 0); every other coefficient is exactly zero.
inline QuantileFit fit_oracle(const Dataset& data, const std::vector<Index>& support, double tau) {
  if (std::find(support.begin(), support.end(), Index{0}) == support.end())
    throw std::invalid_argument("fit_oracle: support must contain the intercept");
  if (static_cast<Index>(support.size()) >= data.n())
    throw std::invalid_argument("fit_oracle: support must be smaller than n");
  MatrixXd xs(data.n(), static_cast<Index>(support.size()));
  VectorXd lam = VectorXd::Constant(data.x.cols(), std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < support.size(); ++k) {
    const Index j = support[k];
    if (j < 0 || j >= data.x.cols()) throw std::invalid_argument("fit_oracle: support index out of range");
    xs.col(static_cast<Index>(k)) = data.x.col(j);
    lam[j] = 0.0;
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(xs);
  qr.setThreshold(1e-10);
  if (qr.rank() < xs.cols()) throw std::invalid_argument("fit_oracle: support columns are collinear");
  return fit_penalized(data, tau, lam);
}

}  // namespace hdqr
