#pragma once

// Debiased estimator, confidence intervals and bands, Wald-type tests, and
// the critical values behind them.

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdqr/dataset.hpp"
#include "hdqr/parallel.hpp"
#include "hdqr/precision.hpp"
#include "hdqr/quantile_fit.hpp"
#include "hdqr/rank_scores.hpp"
#include "hdqr/rng.hpp"

namespace hdqr {

// ---------------------------------------------------------------- critical values

enum class CriticalKind { Normal, Chi2, KolmogorovSup, BesselSup };

inline const char* to_string(CriticalKind k) {
  switch (k) {
    case CriticalKind::Normal: return "normal";
    case CriticalKind::Chi2: return "chi2";
    case CriticalKind::KolmogorovSup: return "kolmogorov";
    case CriticalKind::BesselSup: return "bessel";
  }
  return "unknown";
}

/// Functional of a d-dimensional Brownian bridge whose supremum is taken.
enum class BridgeFunctional {
  Norm,         // ||B_d(t)||
  NormalizedSq  // ||B_d(t)||^2 / (t (1 - t))
};

struct CriticalValue {
  CriticalKind kind = CriticalKind::Normal;
  double alpha = 0.05;
  double value = 0.0;
  int d = 1;
  // Monte Carlo metadata (BesselSup only).
  BridgeFunctional functional = BridgeFunctional::Norm;
  std::uint64_t seed = 0;
  long n_paths = 0;
  long n_steps = 0;
  double t_lo = 0.0;
  double t_hi = 1.0;
};

inline void check_alpha(double alpha, const char* who) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument(std::string(who) + ": alpha must lie in (0, 1)");
}

/// z_alpha, the (1 - alpha) standard normal quantile.
inline double normal_quantile(double alpha) {
  check_alpha(alpha, "normal_quantile");
  return boost::math::quantile(boost::math::complement(boost::math::normal_distribution<double>(), alpha));
}

inline CriticalValue normal_critical(double alpha) {
  CriticalValue cv;
  cv.kind = CriticalKind::Normal;
  cv.alpha = alpha;
  cv.value = normal_quantile(alpha);
  return cv;
}

/// P(chi2_d <= x) through the regularized lower incomplete gamma function.
inline double chi2_cdf(int d, double x) {
  if (d < 1) throw std::invalid_argument("chi2: degrees of freedom must be at least 1");
  if (!(x > 0.0)) return 0.0;
  if (std::isinf(x)) return 1.0;
  return boost::math::gamma_p(0.5 * d, 0.5 * x);
}

/// Root of chi2_cdf(d, x) = level by bisection.
inline double chi2_quantile(int d, double level) {
  if (d < 1) throw std::invalid_argument("chi2_quantile: degrees of freedom must be at least 1");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("chi2_quantile: level must lie in (0, 1)");
  double lo = 0.0, hi = std::max(1.0, static_cast<double>(d));
  while (chi2_cdf(d, hi) < level) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    (chi2_cdf(d, mid) < level ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline CriticalValue chi2_critical(int d, double alpha) {
  check_alpha(alpha, "chi2_critical");
  CriticalValue cv;
  cv.kind = CriticalKind::Chi2;
  cv.alpha = alpha;
  cv.d = d;
  cv.value = chi2_quantile(d, 1.0 - alpha);
  return cv;
}

/// P(sup |B| <= t) = 1 - 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 t^2), summed until
/// a term drops below 1e-12.
inline double kolmogorov_cdf(double t) {
  if (!(t > 0.0)) return 0.0;
  double sum = 0.0;
  for (int k = 1; k < 100000; ++k) {
    const double term = std::exp(-2.0 * k * k * t * t);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-12) break;
  }
  return std::clamp(1.0 - 2.0 * sum, 0.0, 1.0);
}

/// u_alpha = inf{t : P(sup |B| <= t) >= 1 - alpha}, by bisection.
inline CriticalValue kolmogorov_sup_quantile(double alpha) {
  check_alpha(alpha, "kolmogorov_sup_quantile");
  double lo = 0.0, hi = 1.0;
  while (kolmogorov_cdf(hi) < 1.0 - alpha) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    const double mid = 0.5 * (lo + hi);
    (kolmogorov_cdf(mid) < 1.0 - alpha ? lo : hi) = mid;
  }
  CriticalValue cv;
  cv.kind = CriticalKind::KolmogorovSup;
  cv.alpha = alpha;
  cv.value = 0.5 * (lo + hi);
  return cv;
}

inline constexpr std::uint64_t kBridgeSeed = 0xC0FFEE;
inline constexpr long kBridgePaths = 100000;
inline constexpr long kBridgeSteps = 1000;

struct BridgeConfig {
  std::uint64_t seed = kBridgeSeed;
  long n_paths = kBridgePaths;
  long n_steps = kBridgeSteps;
  int threads = 0;
};

/// Sorted Monte Carlo draws of sup_t F(B_d(t)) over a set of lattice points.
struct BridgeLaw {
  int d = 1;
  BridgeFunctional functional = BridgeFunctional::Norm;
  BridgeConfig config;
  double t_lo = 0.0;
  double t_hi = 1.0;
  std::vector<double> draws;

  /// Empirical (1 - alpha) quantile: the ceil((1 - alpha) N)-th order statistic.
  double quantile(double alpha) const {
    check_alpha(alpha, "bridge quantile");
    const auto n = static_cast<double>(draws.size());
    auto k = static_cast<std::size_t>(std::ceil((1.0 - alpha) * n - 1e-9));
    k = std::clamp<std::size_t>(k, 1, draws.size());
    return draws[k - 1];
  }

  /// Fraction of draws at or above x.
  double tail(double x) const {
    const auto it = std::lower_bound(draws.begin(), draws.end(), x);
    return static_cast<double>(draws.end() - it) / static_cast<double>(draws.size());
  }

  CriticalValue critical(double alpha) const {
    CriticalValue cv;
    cv.kind = CriticalKind::BesselSup;
    cv.alpha = alpha;
    cv.value = quantile(alpha);
    cv.d = d;
    cv.functional = functional;
    cv.seed = config.seed;
    cv.n_paths = config.n_paths;
    cv.n_steps = config.n_steps;
    cv.t_lo = t_lo;
    cv.t_hi = t_hi;
    return cv;
  }
};

namespace detail {

/// Lattice indices k (t = k / steps) nearest to the given levels.
inline std::vector<long> lattice_points(const std::vector<double>& taus, long steps) {
  std::vector<long> ks;
  for (double t : taus) {
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("bridge: evaluation points must lie in (0, 1)");
    ks.push_back(std::clamp<long>(std::lround(t * static_cast<double>(steps)), 1, steps - 1));
  }
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  return ks;
}

}  // namespace detail

/// Simulates d independent bridges B(t) = W(t) - t W(1) on the lattice
/// k / n_steps and records the supremum of the functional over `ks`.
/// Paths are generated in blocks of 1000, block b from stream (seed, b), so
/// the draws do not depend on the worker count.
inline BridgeLaw simulate_bridge_law(int d, const std::vector<long>& ks, BridgeFunctional functional,
                                     const BridgeConfig& config) {
  if (d < 1) throw std::invalid_argument("bridge: dimension must be at least 1");
  if (config.n_paths < 1 || config.n_steps < 2) throw std::invalid_argument("bridge: need paths >= 1 and steps >= 2");
  if (ks.empty()) throw std::invalid_argument("bridge: no evaluation points");
  BridgeLaw law;
  law.d = d;
  law.functional = functional;
  law.config = config;
  law.draws.assign(static_cast<std::size_t>(config.n_paths), 0.0);
  const long steps = config.n_steps;
  const double dt = 1.0 / static_cast<double>(steps);
  const double sd = std::sqrt(dt);
  constexpr long kBlock = 1000;
  const long blocks = (config.n_paths + kBlock - 1) / kBlock;
  parallel_for(static_cast<std::size_t>(blocks), resolve_threads(config.threads), [&](std::size_t b) {
    auto g = make_stream(config.seed, b);
    NormalSampler normal;
    std::vector<double> w(static_cast<std::size_t>(d * (steps + 1)));
    std::vector<double> sq(ks.size());
    const long first = static_cast<long>(b) * kBlock;
    const long last = std::min(config.n_paths, first + kBlock);
    for (long path = first; path < last; ++path) {
      std::fill(sq.begin(), sq.end(), 0.0);
      for (int c = 0; c < d; ++c) {
        double* wc = w.data() + static_cast<std::size_t>(c) * static_cast<std::size_t>(steps + 1);
        wc[0] = 0.0;
        for (long k = 1; k <= steps; ++k) wc[k] = wc[k - 1] + sd * normal(g);
        const double w1 = wc[steps];
        for (std::size_t e = 0; e < ks.size(); ++e) {
          const double t = static_cast<double>(ks[e]) * dt;
          const double bt = wc[ks[e]] - t * w1;
          sq[e] += bt * bt;
        }
      }
      double best = 0.0;
      for (std::size_t e = 0; e < ks.size(); ++e) {
        const double t = static_cast<double>(ks[e]) * dt;
        const double v = functional == BridgeFunctional::Norm ? std::sqrt(sq[e]) : sq[e] / (t * (1.0 - t));
        best = std::max(best, v);
      }
      law.draws[static_cast<std::size_t>(path)] = best;
    }
  });
  std::sort(law.draws.begin(), law.draws.end());
  law.t_lo = static_cast<double>(ks.front()) * dt;
  law.t_hi = static_cast<double>(ks.back()) * dt;
  return law;
}

/// Law of the supremum over the lattice points inside [lo, hi].
inline BridgeLaw bridge_law_interval(int d, double lo, double hi, BridgeFunctional functional,
                                     const BridgeConfig& config = {}) {
  if (!(lo >= 0.0 && hi <= 1.0 && lo <= hi)) throw std::invalid_argument("bridge: need 0 <= lo <= hi <= 1");
  std::vector<long> ks;
  const long steps = config.n_steps;
  for (long k = 1; k < steps; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(steps);
    if (t >= lo - 1e-12 && t <= hi + 1e-12) ks.push_back(k);
  }
  if (ks.empty()) throw std::invalid_argument("bridge: interval contains no lattice point");
  return simulate_bridge_law(d, ks, functional, config);
}

/// Law of the supremum over the grid points (each snapped to the lattice).
inline BridgeLaw bridge_law_grid(int d, const TauGrid& grid, BridgeFunctional functional,
                                 const BridgeConfig& config = {}) {
  return simulate_bridge_law(d, detail::lattice_points(grid.points, config.n_steps), functional, config);
}

/// nu_alpha for sup over the range of T of the requested functional.
inline CriticalValue bessel_sup_quantile(int d, const TauGrid& grid, double alpha,
                                         BridgeFunctional functional = BridgeFunctional::Norm,
                                         const BridgeConfig& config = {}) {
  check_alpha(alpha, "bessel_sup_quantile");
  return bridge_law_grid(d, grid, functional, config).critical(alpha);
}

inline CriticalValue bessel_sup_quantile(int d, double lo, double hi, double alpha,
                                         BridgeFunctional functional = BridgeFunctional::Norm,
                                         const BridgeConfig& config = {}) {
  check_alpha(alpha, "bessel_sup_quantile");
  return bridge_law_interval(d, lo, hi, functional, config).critical(alpha);
}

// ---------------------------------------------------------------- debiasing

/// psi_tau of each residual; interpolated residuals count as nonnegative.
inline VectorXd residual_scores(const VectorXd& residuals, double tau) {
  VectorXd psi(residuals.size());
  for (Index i = 0; i < residuals.size(); ++i)
    psi[i] = std::abs(residuals[i]) <= kZeroResidual ? tau : score(residuals[i], tau);
  return psi;
}

/// beta + n^{-1} sparsity D sum_i X_i psi(r_i). Coordinates whose precision
/// row was not estimated are NaN.
inline VectorXd debias(const QuantileFit& fit, const PrecisionEstimate& D, double sparsity, const Dataset& data) {
  if (!(sparsity > 0.0)) throw std::invalid_argument("debias: sparsity must be positive");
  if (D.dim() != data.x.cols() || fit.beta.size() != data.x.cols())
    throw std::invalid_argument("debias: dimension mismatch");
  const VectorXd g = data.x.transpose() * residual_scores(fit.residuals, fit.tau) / static_cast<double>(data.n());
  VectorXd out = VectorXd::Constant(fit.beta.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t r = 0; r < D.rows.size(); ++r) {
    const Index j = D.rows[r];
    out[j] = fit.beta[j] + sparsity * D.d_rows.row(static_cast<Index>(r)).dot(g);
  }
  return out;
}

enum class SparsityMode { Estimated, Known };

struct DebiasOptions {
  SparsityMode mode = SparsityMode::Estimated;
  /// Analytic sparsity tau -> 1 / f(F^{-1}(tau)) for SparsityMode::Known.
  std::function<double(double)> known;
  /// Use the Richardson-corrected estimator.
  bool corrected = false;
  /// Allow windows that contain 1/2 (second difference of the unsigned path).
  bool allow_straddle = true;
};

struct DebiasedPath {
  TauGrid grid;
  Index n = 0;
  std::vector<VectorXd> beta_hat;
  std::vector<VectorXd> beta_check;
  /// Sparsity used at each grid point.
  VectorXd sparsity;
  double h = 0.0;
  SparsityMode mode = SparsityMode::Estimated;
  std::vector<bool> floored;

  Index index(double tau) const {
    const Index k = grid.index_of(tau);
    if (k < 0) throw std::invalid_argument("debiased path: tau " + std::to_string(tau) + " is not a grid point");
    return k;
  }
};

/// Sparsity at tau: analytic in known mode, else from the scale path.
inline SparsityEstimate sparsity_at(const ScalePath& scale, double tau, double h, const DebiasOptions& opt) {
  if (opt.mode == SparsityMode::Known) {
    if (!opt.known) throw std::invalid_argument("debias: known mode needs an analytic sparsity function");
    SparsityEstimate e;
    e.tau = tau;
    e.value = opt.known(tau);
    if (!(e.value > 0.0) || !std::isfinite(e.value)) throw std::invalid_argument("debias: analytic sparsity must be positive");
    return e;
  }
  const SparsityOptions so{opt.allow_straddle};
  return opt.corrected ? sparsity_estimate_corrected(scale, tau, h, so) : sparsity_estimate(scale, tau, h, so);
}

/// Debiased fits at every level of `path`, with the sparsity at each level
/// estimated from `scale` with bandwidth h (or supplied analytically).
inline DebiasedPath debias_path(const QuantilePath& path, const PrecisionEstimate& D, const ScalePath& scale, double h,
                                const Dataset& data, const DebiasOptions& opt = {}) {
  DebiasedPath out;
  out.grid = path.grid;
  out.n = data.n();
  out.h = h;
  out.mode = opt.mode;
  out.sparsity.resize(path.grid.size());
  for (std::size_t k = 0; k < path.fits.size(); ++k) {
    const auto& fit = path.fits[k];
    const auto est = sparsity_at(scale, fit.tau, h, opt);
    out.sparsity[static_cast<Index>(k)] = est.value;
    out.floored.push_back(est.floored);
    out.beta_hat.push_back(fit.beta);
    out.beta_check.push_back(debias(fit, D, est.value, data));
  }
  return out;
}

// ---------------------------------------------------------------- intervals

struct Interval {
  double tau = 0.5;
  double centre = 0.0;
  double half_width = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double sandwich = 0.0;
  /// The raw sandwich was negative and its absolute value was used.
  bool sandwich_clamped = false;

  bool contains(double v) const { return lower <= v && v <= upper; }
};

/// x^T D Sigma D x, with the absolute value taken (and flagged) when rounding
/// makes it negative.
inline double checked_sandwich(const PrecisionEstimate& D, const VectorXd& x, bool& clamped) {
  const double s = D.sandwich(x);
  clamped = s < 0.0;
  return std::abs(s);
}

inline Interval make_interval(const DebiasedPath& dp, Index k, const VectorXd& x, double crit,
                              const PrecisionEstimate& D) {
  const double tau = dp.grid.points[static_cast<std::size_t>(k)];
  Interval iv;
  iv.tau = tau;
  iv.centre = x.dot(dp.beta_check[static_cast<std::size_t>(k)].unaryExpr([](double v) { return std::isnan(v) ? 0.0 : v; }));
  for (Index j = 0; j < x.size(); ++j)
    if (x[j] != 0.0 && std::isnan(dp.beta_check[static_cast<std::size_t>(k)][j]))
      throw std::invalid_argument("interval: coordinate " + std::to_string(j) + " was not debiased");
  iv.sandwich = checked_sandwich(D, x, iv.sandwich_clamped);
  iv.half_width = dp.sparsity[k] * crit * std::sqrt(tau * (1.0 - tau) * iv.sandwich) / std::sqrt(static_cast<double>(dp.n));
  iv.lower = iv.centre - iv.half_width;
  iv.upper = iv.centre + iv.half_width;
  return iv;
}

/// Two-sided (1 - 2 alpha) interval x^T beta_check +- sparsity z_alpha sqrt(tau (1-tau) x^T D Sigma D x / n).
inline Interval pointwise_ci(const DebiasedPath& dp, const VectorXd& x, double tau, double alpha,
                             const PrecisionEstimate& D) {
  if (!(alpha > 0.0 && alpha < 0.5)) throw std::invalid_argument("pointwise_ci: alpha must lie in (0, 0.5)");
  return make_interval(dp, dp.index(tau), x, normal_quantile(alpha), D);
}

struct Band {
  CriticalValue critical;
  std::vector<Interval> intervals;

  /// True when reference(tau) lies inside every interval.
  bool covers(const std::function<double(double)>& reference) const {
    for (const auto& iv : intervals)
      if (!iv.contains(reference(iv.tau))) return false;
    return true;
  }
};

/// Per-level intervals over T using a supplied critical value.
inline Band band_with(const DebiasedPath& dp, const VectorXd& e, const TauGrid& T, const CriticalValue& cv,
                      const PrecisionEstimate& D) {
  Band b;
  b.critical = cv;
  for (double tau : T.points) b.intervals.push_back(make_interval(dp, dp.index(tau), e, cv.value, D));
  return b;
}

/// Uniform band over T with the Kolmogorov critical value u_alpha.
inline Band uniform_band(const DebiasedPath& dp, const VectorXd& e, const TauGrid& T, double alpha,
                         const PrecisionEstimate& D) {
  return band_with(dp, e, T, kolmogorov_sup_quantile(alpha), D);
}

struct SimultaneousBand {
  CriticalValue critical;
  /// bands[w] holds the intervals of loading w over T.
  std::vector<Band> bands;
};

/// Bands for every loading w = (1, w~) with ||w~||_0 <= d, sharing the
/// critical value of sup ||B_d|| over T.
inline SimultaneousBand simultaneous_band(const DebiasedPath& dp, const std::vector<VectorXd>& W, const TauGrid& T,
                                          double alpha, int d, const PrecisionEstimate& D,
                                          const BridgeConfig& mc = {}) {
  if (d < 1) throw std::invalid_argument("simultaneous_band: d must be at least 1");
  for (std::size_t w = 0; w < W.size(); ++w) {
    const auto& v = W[w];
    if (v.size() < 1 || v[0] != 1.0)
      throw std::invalid_argument("simultaneous_band: loading " + std::to_string(w) + " must start with 1");
    if ((v.tail(v.size() - 1).array() != 0.0).count() > d)
      throw std::invalid_argument("simultaneous_band: loading " + std::to_string(w) + " has more than d nonzeros");
  }
  SimultaneousBand sb;
  sb.critical = bessel_sup_quantile(d, T, alpha, BridgeFunctional::Norm, mc);
  for (const auto& w : W) sb.bands.push_back(band_with(dp, w, T, sb.critical, D));
  return sb;
}

// ---------------------------------------------------------------- tests

struct TestResult {
  double statistic = 0.0;
  CriticalValue critical;
  double p_value = 1.0;
  bool reject = false;
  double tau_lo = 0.5;
  double tau_hi = 0.5;
  /// Level attaining the statistic.
  double tau_max = 0.5;
  MatrixXd M;
  VectorXd r;
};

struct SingularSandwich : std::runtime_error {
  std::vector<Index> rows;
  SingularSandwich(const std::string& what, std::vector<Index> r) : std::runtime_error(what), rows(std::move(r)) {}
};

/// W(tau) = n (M b - r)^T [tau (1 - tau) sparsity^2 M D Sigma D M^T]^{-1} (M b - r).
inline double wald_value(const DebiasedPath& dp, const MatrixXd& M, const VectorXd& r, Index k,
                         const PrecisionEstimate& D) {
  const Index dd = M.rows();
  if (M.cols() != D.dim() || r.size() != dd) throw std::invalid_argument("wald: M or r has the wrong shape");
  const double tau = dp.grid.points[static_cast<std::size_t>(k)];
  const VectorXd& b = dp.beta_check[static_cast<std::size_t>(k)];
  VectorXd diff(dd);
  MatrixXd DM(D.dim(), dd);
  for (Index a = 0; a < dd; ++a) {
    double s = -r[a];
    for (Index j = 0; j < M.cols(); ++j)
      if (M(a, j) != 0.0) {
        if (std::isnan(b[j])) throw std::invalid_argument("wald: coordinate " + std::to_string(j) + " was not debiased");
        s += M(a, j) * b[j];
      }
    diff[a] = s;
    DM.col(a) = D.apply(M.row(a).transpose());
  }
  const double sp = dp.sparsity[k];
  MatrixXd V = tau * (1.0 - tau) * sp * sp * (DM.transpose() * D.sigma * DM);
  V = 0.5 * (V + V.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(V);
  const VectorXd ev = eig.eigenvalues();
  const double top = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  if (!(ev.minCoeff() > 1e-12 * top)) {
    std::vector<Index> rows;
    const VectorXd null = eig.eigenvectors().col(0);
    for (Index a = 0; a < dd; ++a)
      if (std::abs(null[a]) > 1e-8) rows.push_back(a);
    std::string list;
    for (Index a : rows) list += (list.empty() ? "" : ",") + std::to_string(a);
    throw SingularSandwich("wald: sandwich is singular; rows " + list + " of M are involved", rows);
  }
  const VectorXd sol = eig.eigenvectors() * (ev.cwiseInverse().asDiagonal() * (eig.eigenvectors().transpose() * diff));
  return static_cast<double>(dp.n) * diff.dot(sol);
}

/// Wald test at a single level against chi2_d.
inline TestResult wald_stat(const DebiasedPath& dp, const MatrixXd& M, const VectorXd& r, double tau,
                            const PrecisionEstimate& D, double alpha = 0.05) {
  TestResult t;
  const Index k = dp.index(tau);
  t.statistic = wald_value(dp, M, r, k, D);
  t.critical = chi2_critical(static_cast<int>(M.rows()), alpha);
  t.p_value = 1.0 - chi2_cdf(static_cast<int>(M.rows()), t.statistic);
  t.reject = t.statistic > t.critical.value;
  t.tau_lo = t.tau_hi = t.tau_max = tau;
  t.M = M;
  t.r = r;
  return t;
}

/// sup-Wald over the points of T, calibrated by a Monte Carlo law of
/// sup ||B_d(t)||^2 / (t (1 - t)) on the same points.
inline TestResult sup_wald(const DebiasedPath& dp, const MatrixXd& M, const VectorXd& r, const TauGrid& T,
                           const PrecisionEstimate& D, double alpha, const BridgeLaw& law) {
  if (law.d != M.rows() || law.functional != BridgeFunctional::NormalizedSq)
    throw std::invalid_argument("sup_wald: bridge law does not match the hypothesis dimension");
  TestResult t;
  t.statistic = -1.0;
  for (double tau : T.points) {
    const double w = wald_value(dp, M, r, dp.index(tau), D);
    if (w > t.statistic) {
      t.statistic = w;
      t.tau_max = tau;
    }
  }
  t.critical = law.critical(alpha);
  t.p_value = law.tail(t.statistic);
  t.reject = t.statistic > t.critical.value;
  t.tau_lo = T.front();
  t.tau_hi = T.back();
  t.M = M;
  t.r = r;
  return t;
}

inline TestResult sup_wald(const DebiasedPath& dp, const MatrixXd& M, const VectorXd& r, const TauGrid& T,
                           const PrecisionEstimate& D, double alpha, const BridgeConfig& mc = {}) {
  return sup_wald(dp, M, r, T, D, alpha,
                  bridge_law_grid(static_cast<int>(M.rows()), T, BridgeFunctional::NormalizedSq, mc));
}

/// Hypothesis beta_k(tau) = beta_j(tau): M = e_k - e_j, r = 0.
inline std::pair<MatrixXd, VectorXd> structural_hypothesis(Index dim, Index k, Index j) {
  if (k == j || k < 0 || j < 0 || k >= dim || j >= dim)
    throw std::invalid_argument("structural hypothesis: need two distinct valid coordinates");
  MatrixXd M = MatrixXd::Zero(1, dim);
  M(0, k) = 1.0;
  M(0, j) = -1.0;
  return {M, VectorXd::Zero(1)};
}

}  // namespace hdqr
