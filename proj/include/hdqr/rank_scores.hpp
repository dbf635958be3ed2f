#pragma once

// Regression rank scores (the dual of the quantile program), the scale rank
// statistic built from their increments along a tau-grid, and the
// second-difference sparsity estimators.
//
// The dual of the penalized fit reads
//   max Y^T xi  s.t.  xi in [0,1]^n,  |X_j^T xi - (1 - tau) X_j^T 1| <= n lambda_j,
// with an equality row wherever lambda_j = 0 and no row where lambda_j is
// infinite. Its row multipliers are the primal coefficients.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdqr/dataset.hpp"
#include "hdqr/lp.hpp"
#include "hdqr/quantile_fit.hpp"

namespace hdqr {

enum class RankKind { Penalized, Oracle };

struct RankScores {
  double tau = 0.5;
  VectorXd xi;
  /// Per-column primal penalties; the dual bound on column j is n * lambda[j].
  VectorXd lambda;
  RankKind kind = RankKind::Penalized;
  /// Row multipliers of the dual program, i.e. a primal solution beta(tau).
  VectorXd beta;
  lp::Status lp_status = lp::Status::IterationLimit;
  lp::Index iterations = 0;
  lp::Basis basis;

  /// n^{-1} sum Y_i (xi_i - (1 - tau)); equals the primal optimum.
  double dual_value(const Dataset& data) const {
    return (data.y.dot(xi) - (1.0 - tau) * data.y.sum()) / static_cast<double>(data.n());
  }
};

namespace detail {

/// Starting basis from the intercept-only dual: the largest floor((1-tau) n)
/// responses at 1, one fractional score, the intercept row tight.
inline lp::Basis knapsack_basis(const Dataset& data, double tau, Index rows, Index intercept_row) {
  const Index n = data.n();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return data.y[a] > data.y[b]; });
  const double mass = (1.0 - tau) * static_cast<double>(n);
  const auto ones = std::min<Index>(static_cast<Index>(std::floor(mass + 1e-12)), n - 1);
  lp::Basis basis;
  basis.structural.assign(static_cast<std::size_t>(n), lp::VarStatus::AtLower);
  for (Index k = 0; k < ones; ++k) basis.structural[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = lp::VarStatus::AtUpper;
  basis.structural[static_cast<std::size_t>(order[static_cast<std::size_t>(ones)])] = lp::VarStatus::Basic;
  basis.logical.assign(static_cast<std::size_t>(rows), lp::VarStatus::Basic);
  basis.logical[static_cast<std::size_t>(intercept_row)] = lp::VarStatus::AtLower;
  return basis;
}

inline RankScores solve_rank_dual(const Dataset& data, double tau, const VectorXd& lambda, RankKind kind,
                                  const lp::Basis* warm) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("rank scores: tau must lie in (0, 1)");
  const Index n = data.n(), d = data.x.cols();
  const double nd = static_cast<double>(n);
  lp::LpProblem prob(n, lp::Sense::Maximize);
  prob.cost() = data.y;
  for (Index i = 0; i < n; ++i) prob.set_bounds(i, 0.0, 1.0);
  std::vector<Index> row_of(static_cast<std::size_t>(d), -1);
  Index intercept_row = -1;
  prob.reserve_rows(d);
  for (Index j = 0; j < d; ++j) {
    const double l = lambda[j];
    if (std::isinf(l)) continue;
    const VectorXd col = data.x.col(j);
    const double centre = (1.0 - tau) * col.sum();
    const Index r = l == 0.0 ? prob.add_row(col, lp::Relation::Equal, centre)
                             : prob.add_row(col, lp::Relation::Range, centre - nd * l, centre + nd * l);
    row_of[static_cast<std::size_t>(j)] = r;
    if (j == 0) intercept_row = r;
  }
  if (intercept_row < 0 || lambda[0] != 0.0)
    throw std::invalid_argument("rank scores: the intercept constraint must be an equality");

  lp::Basis start;
  const bool use_warm = warm != nullptr && static_cast<Index>(warm->structural.size()) == n &&
                        static_cast<Index>(warm->logical.size()) == prob.num_rows();
  if (!use_warm) start = knapsack_basis(data, tau, prob.num_rows(), intercept_row);
  auto sol = lp::solve_bounded_lp(prob, {}, use_warm ? warm : &start);

  RankScores rs;
  rs.tau = tau;
  rs.lambda = lambda;
  rs.kind = kind;
  rs.lp_status = sol.status;
  rs.iterations = sol.iterations;
  rs.xi = sol.x;
  rs.beta = VectorXd::Zero(d);
  for (Index j = 0; j < d; ++j)
    if (row_of[static_cast<std::size_t>(j)] >= 0) rs.beta[j] = sol.row_duals[row_of[static_cast<std::size_t>(j)]];
  rs.basis = std::move(sol.basis);
  return rs;
}

}  // namespace detail

/// Penalized rank scores; lambda[0] is ignored (the intercept row is always an
/// equality), matching `fit_penalized`.
inline RankScores rank_scores_penalized(const Dataset& data, double tau, VectorXd lambda,
                                        const lp::Basis* warm = nullptr) {
  if (lambda.size() != data.x.cols()) throw std::invalid_argument("rank scores: penalty length mismatch");
  for (Index j = 0; j < lambda.size(); ++j)
    if (!(lambda[j] >= 0.0)) throw std::invalid_argument("rank scores: penalties must be nonnegative");
  lambda[0] = 0.0;
  return detail::solve_rank_dual(data, tau, lambda, RankKind::Penalized, warm);
}

/// Scalar penalty broadcast to every non-intercept column.
inline RankScores rank_scores_penalized(const Dataset& data, double tau, double lambda,
                                        const lp::Basis* warm = nullptr) {
  return rank_scores_penalized(data, tau, VectorXd::Constant(data.x.cols(), lambda), warm);
}

/// Oracle rank scores: equality constraints on the columns in `support`
/// (which must contain the intercept), no constraint elsewhere.
inline RankScores rank_scores_oracle(const Dataset& data, const std::vector<Index>& support, double tau,
                                     const lp::Basis* warm = nullptr) {
  if (std::find(support.begin(), support.end(), Index{0}) == support.end())
    throw std::invalid_argument("rank scores: support must contain the intercept");
  VectorXd lambda = VectorXd::Constant(data.x.cols(), std::numeric_limits<double>::infinity());
  for (Index j : support) {
    if (j < 0 || j >= data.x.cols()) throw std::invalid_argument("rank scores: support index out of range");
    lambda[j] = 0.0;
  }
  return detail::solve_rank_dual(data, tau, lambda, RankKind::Oracle, warm);
}

/// phi(t) = sign(t - 1/2) with phi(1/2) = +1.
inline double phi(double t) { return t >= 0.5 ? 1.0 : -1.0; }

/// Scale rank statistic on a tau-grid, anchored at zero on the left edge.
/// S(tau_m) = n^{-1} sum_i Y_i sum_{k<m} phi(mid_k) (xi_i(tau_k) - xi_i(tau_{k+1})),
/// i.e. the integral of phi against the increments of 1 - xi. Rank scores
/// decrease in tau, so this orientation makes S converge to
/// int phi(t) F^{-1}(t) dt.
struct ScalePath {
  TauGrid grid;
  VectorXd S;
  /// Rank scores, one column per grid point.
  MatrixXd xi;
  /// Total simplex iterations over the sweep.
  lp::Index iterations = 0;

  double at(double tau) const {
    const Index k = grid.index_of(tau);
    if (k < 0) throw std::invalid_argument("scale path: tau " + std::to_string(tau) + " is not a grid point");
    return S[k];
  }
};

/// Builds S from rank scores stored column-wise along `grid`.
inline VectorXd integrate_scale(const TauGrid& grid, const VectorXd& y, const MatrixXd& xi) {
  const Index m = grid.size();
  VectorXd s = VectorXd::Zero(m);
  const double nd = static_cast<double>(y.size());
  for (Index k = 0; k + 1 < m; ++k) {
    const double mid = 0.5 * (grid.points[static_cast<std::size_t>(k)] + grid.points[static_cast<std::size_t>(k + 1)]);
    const double inc = y.dot(xi.col(k) - xi.col(k + 1)) / nd;
    s[k + 1] = s[k] + phi(mid) * inc;
  }
  return s;
}

/// Rank scores read off the row multipliers of a penalized primal fit:
/// xi_i = psi_i + 1 - tau for the subgradient psi_i in [tau - 1, tau].
inline VectorXd rank_scores_from_fit(const QuantileFit& fit) {
  VectorXd xi = (fit.subgradient.array() + (1.0 - fit.tau)).matrix();
  return xi.cwiseMax(0.0).cwiseMin(1.0);
}

/// Fits and rank scores from one left-to-right sweep of a grid.
struct Sweep {
  ScalePath scale;
  QuantilePath path;
};

namespace detail {

inline void check_scale_grid(const TauGrid& grid) {
  grid.validate();
  for (std::size_t k = 0; k + 1 < grid.points.size(); ++k)
    if (grid.points[k] < 0.5 && grid.points[k + 1] > 0.5)
      throw std::invalid_argument("scale path: a grid interval straddles 0.5; include 0.5 as a grid point");
}

/// Re-solves the primal program left to right from the previous optimum and
/// reads the rank scores off its multipliers; this is the same LP pair as
/// `rank_scores_penalized`.
template <class Penalties>
Sweep sweep(const Dataset& data, const TauGrid& grid, Penalties&& penalties, bool keep_fits) {
  check_scale_grid(grid);
  Sweep out;
  out.scale.grid = grid;
  out.path.grid = grid;
  out.scale.xi.resize(data.n(), grid.size());
  PrimalPathSolver solver(data, grid.front(), penalties(grid.front()));
  for (Index k = 0; k < grid.size(); ++k) {
    const double tau = grid.points[static_cast<std::size_t>(k)];
    auto fit = solver.fit(tau, penalties(tau));
    if (fit.lp_status != lp::Status::Optimal)
      throw std::runtime_error("scale path: LP failed at tau " + std::to_string(tau) + ": " +
                               lp::to_string(fit.lp_status));
    out.scale.xi.col(k) = rank_scores_from_fit(fit);
    out.scale.iterations += fit.iterations;
    if (keep_fits) out.path.fits.push_back(std::move(fit));
  }
  out.scale.S = integrate_scale(grid, data.y, out.scale.xi);
  return out;
}

inline VectorXd oracle_penalties(const Dataset& data, const std::vector<Index>& support) {
  if (std::find(support.begin(), support.end(), Index{0}) == support.end())
    throw std::invalid_argument("oracle: support must contain the intercept");
  VectorXd lam = VectorXd::Constant(data.x.cols(), std::numeric_limits<double>::infinity());
  for (Index j : support) {
    if (j < 0 || j >= data.x.cols()) throw std::invalid_argument("oracle: support index out of range");
    lam[j] = 0.0;
  }
  return lam;
}

}  // namespace detail

/// Penalized rank scores along `grid` (which must contain 0.5 if it crosses
/// it) with lambda_j(tau) from the default penalty rule, and the S path.
inline ScalePath scale_statistic_path(const Dataset& data, const TauGrid& grid, double lambda0) {
  return detail::sweep(data, grid, [&](double t) { return default_penalties(data, t, lambda0); }, false).scale;
}

/// Same sweep with the oracle rank scores of `support`.
inline ScalePath scale_statistic_path_oracle(const Dataset& data, const std::vector<Index>& support,
                                             const TauGrid& grid) {
  const VectorXd lam = detail::oracle_penalties(data, support);
  return detail::sweep(data, grid, [&](double) { return lam; }, false).scale;
}

/// Penalized fits at every grid point together with the S path.
inline Sweep sweep_penalized(const Dataset& data, const TauGrid& grid, double lambda0) {
  return detail::sweep(data, grid, [&](double t) { return default_penalties(data, t, lambda0); }, true);
}

/// Oracle fits on `support` at every grid point together with the S path.
inline Sweep sweep_oracle(const Dataset& data, const std::vector<Index>& support, const TauGrid& grid) {
  const VectorXd lam = detail::oracle_penalties(data, support);
  return detail::sweep(data, grid, [&](double) { return lam; }, true);
}

struct SparsityEstimate {
  double tau = 0.5;
  double value = 0.0;
  double h = 0.0;
  bool corrected = false;
  /// True when the raw estimate fell below the floor.
  bool floored = false;
};

inline constexpr double kSparsityFloor = 1e-3;

/// Raised when a bandwidth window is invalid for the requested tau.
struct BandwidthError : std::invalid_argument {
  double tau;
  BandwidthError(const std::string& what, double t) : std::invalid_argument(what), tau(t) {}
};

/// Window rules for the sparsity estimators. By default a window around
/// tau != 1/2 may not contain 1/2; `allow_straddle` lifts that rule.
struct SparsityOptions {
  bool allow_straddle = false;
};

namespace detail {

inline void check_window(const ScalePath& path, double tau, double g, const SparsityOptions& opt) {
  const auto where = "tau " + std::to_string(tau) + " with window " + std::to_string(g);
  if (!(g > 0.0)) throw BandwidthError("sparsity: bandwidth must be positive (" + where + ")", tau);
  if (tau - g < path.grid.front() - 1e-9 || tau + g > path.grid.back() + 1e-9)
    throw BandwidthError("sparsity: window leaves the scale grid at " + where, tau);
  if (!opt.allow_straddle && ((tau < 0.5 && tau + g > 0.5 + 1e-12) || (tau > 0.5 && tau - g < 0.5 - 1e-12)))
    throw BandwidthError("sparsity: window straddles 0.5 at " + where, tau);
  for (double t : {tau - g, tau, tau + g})
    if (path.grid.index_of(TauGrid::snap(t)) < 0)
      throw BandwidthError("sparsity: " + where + " does not land on the scale grid", tau);
}

/// Q(b) - Q(a) where dQ = phi dS, summed over the grid intervals in [a, b].
/// Q has no kink at 1/2, and Q'' = S'' phi away from it.
inline double unsigned_increment(const ScalePath& path, double a, double b) {
  const Index ka = path.grid.index_of(TauGrid::snap(a)), kb = path.grid.index_of(TauGrid::snap(b));
  double sum = 0.0;
  for (Index k = ka; k < kb; ++k) {
    const double mid = 0.5 * (path.grid.points[static_cast<std::size_t>(k)] + path.grid.points[static_cast<std::size_t>(k + 1)]);
    sum += phi(mid) * (path.S[k + 1] - path.S[k]);
  }
  return sum;
}

/// Second difference of Q at tau. When the window does not contain 1/2 this
/// is phi(tau) (S(t+g) - 2 S(t) + S(t-g)); at 1/2 it is S(t+g) - S(t-g).
inline double signed_second_difference(const ScalePath& path, double tau, double g) {
  return unsigned_increment(path, tau, tau + g) - unsigned_increment(path, tau - g, tau);
}

inline SparsityEstimate finish_estimate(double tau, double h, double raw, bool corrected) {
  SparsityEstimate e;
  e.tau = tau;
  e.h = h;
  e.corrected = corrected;
  e.floored = !(raw >= kSparsityFloor);
  e.value = e.floored ? kSparsityFloor : raw;
  return e;
}

}  // namespace detail

/// h^{-2} times the phi-signed second difference of S at tau.
inline SparsityEstimate sparsity_estimate(const ScalePath& path, double tau, double h,
                                          const SparsityOptions& opt = {}) {
  detail::check_window(path, tau, h, opt);
  return detail::finish_estimate(tau, h, detail::signed_second_difference(path, tau, h) / (h * h), false);
}

/// Richardson combination (4/3) D_h - (1/12) D_2h of the signed second
/// differences, exact for quartic S.
inline SparsityEstimate sparsity_estimate_corrected(const ScalePath& path, double tau, double h,
                                                    const SparsityOptions& opt = {}) {
  detail::check_window(path, tau, 2.0 * h, opt);
  detail::check_window(path, tau, h, opt);
  const double d1 = detail::signed_second_difference(path, tau, h) / (h * h);
  const double d2 = detail::signed_second_difference(path, tau, 2.0 * h) / (h * h);
  return detail::finish_estimate(tau, h, 4.0 / 3.0 * d1 - d2 / 12.0, true);
}

/// c4 s^{1/4} n^{-1/8} log^{1/8}(max(p, n)) before any snapping.
inline double raw_bandwidth(Index n, Index p, Index s_hat, double c4) {
  if (s_hat < 1) throw std::invalid_argument("bandwidth: s_hat must be at least 1");
  const double big = static_cast<double>(std::max(p, n));
  return c4 * std::pow(static_cast<double>(s_hat), 0.25) * std::pow(static_cast<double>(n), -0.125) *
         std::pow(std::log(big), 0.125);
}

inline constexpr double kDefaultC4 = 0.4;

/// Snaps the rule to the nearest positive multiple of the grid step, then
/// shrinks it until tau +- 2h stays inside the grid for every tau in `taus`
/// and h <= (grid range) / 4.
inline double default_bandwidth(Index n, Index p, Index s_hat, const TauGrid& grid, const std::vector<double>& taus,
                                double c4 = kDefaultC4) {
  const double step = grid.step;
  if (!(step > 0.0)) throw std::invalid_argument("bandwidth: scale grid needs a positive step");
  double h = std::max(1.0, std::round(raw_bandwidth(n, p, s_hat, c4) / step)) * step;
  double cap = (grid.back() - grid.front()) / 4.0;
  for (double t : taus) cap = std::min(cap, std::min(t - grid.front(), grid.back() - t) / 2.0);
  const double cap_steps = std::floor(cap / step + 1e-9);
  if (cap_steps < 1.0) throw std::invalid_argument("bandwidth: scale grid too narrow for the requested taus");
  return TauGrid::snap(std::min(h / step, cap_steps) * step);
}

}  // namespace hdqr
