#include <gtest/gtest.h>

#include <random>

#include "hdqr/inference.hpp"
#include "oracles.hpp"

using namespace hdqr;

namespace {

struct LowDim {
  Dataset data;
  VectorXd beta;
};

// n >> p location-shift model with N(0, 1) errors.
LowDim low_dim(int n, int p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LowDim m;
  const MatrixXd x = oracle::random_design(n, p, rng);
  m.beta = VectorXd::Zero(p + 1);
  m.beta[1] = 1.0;
  m.beta[2] = -0.5;
  std::normal_distribution<double> g;
  VectorXd y = x * m.beta;
  for (int i = 0; i < n; ++i) y[i] += g(rng);
  m.data = {y, x};
  return m;
}

DebiasedPath known_path(const Dataset& data, const TauGrid& grid, const PrecisionEstimate& D, double lambda0) {
  const auto sw = sweep_penalized(data, grid, lambda0);
  DebiasOptions opt;
  opt.mode = SparsityMode::Known;
  opt.known = [](double t) {
    const double q = normal_quantile(1.0 - t);
    return std::sqrt(2.0 * M_PI) * std::exp(0.5 * q * q);
  };
  return debias_path(sw.path, D, sw.scale, 0.05, data, opt);
}

}  // namespace

TEST(Critical, NormalAndChi2) {
  EXPECT_NEAR(normal_quantile(0.025), 1.959964, 1e-6);
  EXPECT_NEAR(normal_critical(0.05).value, 1.644854, 1e-6);
  EXPECT_NEAR(chi2_quantile(2, 0.95), -2.0 * std::log(0.05), 1e-9);
  EXPECT_NEAR(chi2_quantile(1, 0.95), 3.841459, 1e-6);
  EXPECT_NEAR(chi2_cdf(3, chi2_quantile(3, 0.9)), 0.9, 1e-10);
  EXPECT_NEAR(chi2_critical(1, 0.05).value, normal_quantile(0.025) * normal_quantile(0.025), 1e-9);
  EXPECT_THROW(normal_quantile(0.0), std::invalid_argument);
  EXPECT_THROW(chi2_critical(1, 1.0), std::invalid_argument);
}

TEST(Critical, KolmogorovSeries) {
  EXPECT_NEAR(kolmogorov_sup_quantile(0.05).value, 1.3581, 1e-3);
  EXPECT_NEAR(kolmogorov_sup_quantile(0.01).value, 1.6276, 1e-3);
  EXPECT_NEAR(kolmogorov_cdf(kolmogorov_sup_quantile(0.1).value), 0.9, 1e-10);
  EXPECT_EQ(kolmogorov_cdf(0.0), 0.0);
  double prev = 0.0;
  for (double t = 0.2; t < 3.0; t += 0.1) {
    const double c = kolmogorov_cdf(t);
    EXPECT_GE(c, prev);
    prev = c;
  }
}

TEST(Bridge, FullRangeMatchesKolmogorov) {
  BridgeConfig mc;
  mc.n_paths = 20000;
  const auto cv = bessel_sup_quantile(1, 0.0, 1.0, 0.05, BridgeFunctional::Norm, mc);
  // Lattice discretization biases the supremum low.
  EXPECT_NEAR(cv.value, 1.3581, 0.025 * 1.3581);
  EXPECT_EQ(cv.kind, CriticalKind::BesselSup);
  EXPECT_EQ(cv.n_paths, 20000);
}

TEST(Bridge, SinglePointIsChiSquare) {
  BridgeConfig mc;
  mc.n_paths = 40000;
  mc.n_steps = 100;
  const auto law = bridge_law_grid(2, TauGrid::single(0.5), BridgeFunctional::NormalizedSq, mc);
  EXPECT_NEAR(law.quantile(0.05), chi2_quantile(2, 0.95), 0.15);
}

TEST(Bridge, IndependentOfThreadCount) {
  BridgeConfig a;
  a.n_paths = 3500;
  a.n_steps = 200;
  a.threads = 1;
  BridgeConfig b = a;
  b.threads = 3;
  const auto la = bridge_law_interval(2, 0.2, 0.8, BridgeFunctional::NormalizedSq, a);
  const auto lb = bridge_law_interval(2, 0.2, 0.8, BridgeFunctional::NormalizedSq, b);
  EXPECT_EQ(la.draws, lb.draws);
  b.seed = 99;
  EXPECT_NE(la.draws, bridge_law_interval(2, 0.2, 0.8, BridgeFunctional::NormalizedSq, b).draws);
}

TEST(Bridge, MonotoneInDimensionAndRange) {
  BridgeConfig mc;
  mc.n_paths = 5000;
  mc.n_steps = 200;
  const double d1 = bessel_sup_quantile(1, 0.2, 0.8, 0.05, BridgeFunctional::Norm, mc).value;
  const double d2 = bessel_sup_quantile(2, 0.2, 0.8, 0.05, BridgeFunctional::Norm, mc).value;
  const double d3 = bessel_sup_quantile(3, 0.2, 0.8, 0.05, BridgeFunctional::Norm, mc).value;
  EXPECT_LT(d1, d2);
  EXPECT_LT(d2, d3);
  const double narrow = bessel_sup_quantile(1, 0.4, 0.6, 0.05, BridgeFunctional::Norm, mc).value;
  EXPECT_LT(narrow, d1);
  const auto law = bridge_law_interval(1, 0.2, 0.8, BridgeFunctional::Norm, mc);
  EXPECT_NEAR(law.tail(law.quantile(0.05)), 0.05, 2e-3);
}

TEST(Bridge, RejectsBadInput) {
  EXPECT_THROW(simulate_bridge_law(0, {1}, BridgeFunctional::Norm, {}), std::invalid_argument);
  EXPECT_THROW(bridge_law_interval(1, 0.6, 0.4, BridgeFunctional::Norm), std::invalid_argument);
  EXPECT_THROW(bessel_sup_quantile(1, 0.2, 0.8, 0.0), std::invalid_argument);
}

TEST(Debias, ResidualScores) {
  VectorXd r(4);
  r << -1.0, 0.0, 1e-9, 2.0;
  const VectorXd psi = residual_scores(r, 0.3);
  EXPECT_DOUBLE_EQ(psi[0], -0.7);
  EXPECT_DOUBLE_EQ(psi[1], 0.3);
  EXPECT_DOUBLE_EQ(psi[2], 0.3);
  EXPECT_DOUBLE_EQ(psi[3], 0.3);
}

TEST(Debias, OneStepFormulaAndUnheldRows) {
  const auto m = low_dim(200, 4, 1);
  const auto t = default_tuning(m.data);
  const auto D = estimate_precision_rows(m.data, {1, 3}, t.gamma, t.L);
  const auto fit = fit_penalized(m.data, 0.5, default_penalties(m.data, 0.5, 0.05));
  const VectorXd b = debias(fit, D, 2.0, m.data);
  const VectorXd g = m.data.x.transpose() * residual_scores(fit.residuals, 0.5) / 200.0;
  EXPECT_NEAR(b[1], fit.beta[1] + 2.0 * D.row(1).dot(g), 1e-12);
  EXPECT_NEAR(b[3], fit.beta[3] + 2.0 * D.row(3).dot(g), 1e-12);
  EXPECT_TRUE(std::isnan(b[0]));
  EXPECT_TRUE(std::isnan(b[2]));
  EXPECT_THROW(debias(fit, D, 0.0, m.data), std::invalid_argument);
}

TEST(Debias, RemovesShrinkageBias) {
  // Heavy penalty shrinks beta_1 towards 0; the one-step correction restores it.
  const auto m = low_dim(1500, 3, 2);
  const auto D = estimate_precision(m.data, 0.01, lp::kInf);
  const auto fit = fit_penalized(m.data, 0.5, default_penalties(m.data, 0.5, 0.1));
  const VectorXd b = debias(fit, D, std::sqrt(2.0 * M_PI), m.data);
  EXPECT_LT(fit.beta[1], 0.9);
  EXPECT_NEAR(b[1], 1.0, 0.1);
  EXPECT_NEAR(b[2], -0.5, 0.1);
}

TEST(Debias, EstimatedSparsityNearTruth) {
  const auto m = low_dim(1000, 3, 3);
  const TauGrid grid = TauGrid::symmetric(0.2, 0.02);
  const auto sw = sweep_penalized(m.data, grid, 0.0);
  const auto D = estimate_precision_rows(m.data, {1}, 0.01, lp::kInf);
  QuantilePath at;
  at.grid = TauGrid::range(0.4, 0.6, 0.1);
  for (double t : at.grid.points) at.fits.push_back(sw.path.fits[static_cast<std::size_t>(grid.index_of(t))]);
  const auto dp = debias_path(at, D, sw.scale, 0.2, m.data);
  EXPECT_NEAR(dp.sparsity[dp.index(0.5)], std::sqrt(2.0 * M_PI), 0.4);
  EXPECT_NEAR(dp.sparsity[dp.index(0.4)], 1.0 / 0.3867, 0.5);
  EXPECT_EQ(dp.mode, SparsityMode::Estimated);
  // The window at 0.4 spans 0.5.
  DebiasOptions strict;
  strict.allow_straddle = false;
  EXPECT_THROW(debias_path(at, D, sw.scale, 0.2, m.data, strict), BandwidthError);
  // Window leaves the grid.
  EXPECT_THROW(debias_path(sw.path, D, sw.scale, 0.1, m.data), BandwidthError);
  DebiasOptions known;
  known.mode = SparsityMode::Known;
  EXPECT_THROW(debias_path(at, D, sw.scale, 0.2, m.data, known), std::invalid_argument);
}

TEST(Interval, HalfWidthFormula) {
  const auto m = low_dim(300, 3, 4);
  const auto D = estimate_precision(m.data, 0.02, lp::kInf);
  const TauGrid grid = TauGrid::range(0.4, 0.6, 0.1);
  const auto sw = sweep_penalized(m.data, grid, 0.02);
  DebiasOptions opt;
  opt.mode = SparsityMode::Known;
  opt.known = [](double) { return 2.5; };
  const auto dp = debias_path(sw.path, D, sw.scale, 0.1, m.data, opt);
  VectorXd e = VectorXd::Zero(4);
  e[1] = 1.0;
  const auto ci = pointwise_ci(dp, e, 0.6, 0.025, D);
  const double want = 2.5 * normal_quantile(0.025) * std::sqrt(0.24 * D.sandwich(e) / 300.0);
  EXPECT_NEAR(ci.half_width, want, 1e-12);
  EXPECT_NEAR(ci.centre, dp.beta_check[2][1], 1e-15);
  EXPECT_NEAR(ci.upper - ci.lower, 2.0 * want, 1e-12);
  EXPECT_FALSE(ci.sandwich_clamped);
  EXPECT_THROW(pointwise_ci(dp, e, 0.55, 0.025, D), std::invalid_argument);
  EXPECT_THROW(pointwise_ci(dp, e, 0.5, 0.5, D), std::invalid_argument);

  const auto band = uniform_band(dp, e, grid, 0.05, D);
  ASSERT_EQ(band.intervals.size(), 3u);
  EXPECT_NEAR(band.intervals[2].half_width / ci.half_width, 1.3581 / normal_quantile(0.025), 1e-3);
  EXPECT_TRUE(band.covers([&](double t) { return dp.beta_check[dp.index(t)][1]; }));
}

TEST(Interval, UndebiasedCoordinateRejected) {
  const auto m = low_dim(200, 3, 5);
  const auto D = estimate_precision_rows(m.data, {1}, 0.05, lp::kInf);
  const auto sw = sweep_penalized(m.data, TauGrid::single(0.5), 0.02);
  DebiasOptions opt;
  opt.mode = SparsityMode::Known;
  opt.known = [](double) { return 2.5; };
  const auto dp = debias_path(sw.path, D, sw.scale, 0.1, m.data, opt);
  VectorXd e = VectorXd::Zero(4);
  e[2] = 1.0;
  EXPECT_THROW(pointwise_ci(dp, e, 0.5, 0.025, D), std::invalid_argument);
}

TEST(SimultaneousBand, ValidatesLoadings) {
  const auto m = low_dim(200, 3, 6);
  const auto D = estimate_precision(m.data, 0.05, lp::kInf);
  const TauGrid grid = TauGrid::range(0.4, 0.6, 0.1);
  const auto sw = sweep_penalized(m.data, grid, 0.02);
  DebiasOptions opt;
  opt.mode = SparsityMode::Known;
  opt.known = [](double) { return 2.5; };
  const auto dp = debias_path(sw.path, D, sw.scale, 0.1, m.data, opt);
  BridgeConfig mc;
  mc.n_paths = 2000;
  mc.n_steps = 100;
  VectorXd w1(4), w2(4), bad(4);
  w1 << 1.0, 0.5, 0.0, 0.0;
  w2 << 1.0, 0.0, -1.0, 2.0;
  bad << 0.5, 1.0, 0.0, 0.0;
  EXPECT_THROW(simultaneous_band(dp, {w2}, grid, 0.05, 1, D, mc), std::invalid_argument);
  EXPECT_THROW(simultaneous_band(dp, {bad}, grid, 0.05, 2, D, mc), std::invalid_argument);
  const auto sb = simultaneous_band(dp, {w1, w2}, grid, 0.05, 2, D, mc);
  ASSERT_EQ(sb.bands.size(), 2u);
  EXPECT_EQ(sb.critical.d, 2);
  EXPECT_NEAR(sb.bands[0].intervals[0].half_width / sb.critical.value,
              make_interval(dp, 0, w1, 1.0, D).half_width, 1e-12);
}

TEST(Wald, SingleRowIsSquaredZ) {
  const auto m = low_dim(300, 3, 7);
  const auto D = estimate_precision(m.data, 0.02, lp::kInf);
  const auto sw = sweep_penalized(m.data, TauGrid::single(0.5), 0.02);
  DebiasOptions opt;
  opt.mode = SparsityMode::Known;
  opt.known = [](double) { return 2.5; };
  const auto dp = debias_path(sw.path, D, sw.scale, 0.1, m.data, opt);
  MatrixXd M = MatrixXd::Zero(1, 4);
  M(0, 1) = 1.0;
  VectorXd r(1);
  r << 0.8;
  const auto t = wald_stat(dp, M, r, 0.5, D);
  VectorXd e = VectorXd::Zero(4);
  e[1] = 1.0;
  const auto ci = make_interval(dp, 0, e, 1.0, D);
  const double z = (ci.centre - 0.8) / ci.half_width;
  EXPECT_NEAR(t.statistic, z * z, 1e-9);
  EXPECT_NEAR(t.p_value, 1.0 - chi2_cdf(1, z * z), 1e-12);
  EXPECT_EQ(t.reject, t.statistic > chi2_quantile(1, 0.95));
  // Rejection of H0 <=> r outside the 95% interval.
  const auto ci95 = make_interval(dp, 0, e, normal_quantile(0.025), D);
  EXPECT_EQ(t.reject, !ci95.contains(0.8));
}

TEST(Wald, InvariantToRowScaling) {
  const auto m = low_dim(300, 3, 8);
  const auto D = estimate_precision(m.data, 0.02, lp::kInf);
  const auto sw = sweep_penalized(m.data, TauGrid::single(0.5), 0.02);
  DebiasOptions opt;
  opt.mode = SparsityMode::Known;
  opt.known = [](double) { return 2.5; };
  const auto dp = debias_path(sw.path, D, sw.scale, 0.1, m.data, opt);
  MatrixXd M = MatrixXd::Zero(2, 4);
  M(0, 1) = 1.0;
  M(1, 2) = 1.0;
  VectorXd r(2);
  r << 1.0, -0.5;
  const double a = wald_stat(dp, M, r, 0.5, D).statistic;
  MatrixXd M2 = M;
  M2.row(1) *= 3.0;
  VectorXd r2 = r;
  r2[1] *= 3.0;
  EXPECT_NEAR(wald_stat(dp, M2, r2, 0.5, D).statistic, a, 1e-9 * std::max(1.0, a));
}

TEST(Wald, SingularSandwichNamesRows) {
  const auto m = low_dim(300, 3, 9);
  const auto D = estimate_precision(m.data, 0.02, lp::kInf);
  const auto sw = sweep_penalized(m.data, TauGrid::single(0.5), 0.02);
  DebiasOptions opt;
  opt.mode = SparsityMode::Known;
  opt.known = [](double) { return 2.5; };
  const auto dp = debias_path(sw.path, D, sw.scale, 0.1, m.data, opt);
  MatrixXd M = MatrixXd::Zero(2, 4);
  M(0, 1) = 1.0;
  M(1, 1) = 1.0;
  try {
    wald_stat(dp, M, VectorXd::Zero(2), 0.5, D);
    FAIL();
  } catch (const SingularSandwich& e) {
    EXPECT_EQ(e.rows, (std::vector<Index>{0, 1}));
  }
}

TEST(Wald, SupWaldDominatesPointwise) {
  const auto m = low_dim(300, 3, 10);
  const auto D = estimate_precision(m.data, 0.02, lp::kInf);
  const TauGrid grid = TauGrid::range(0.3, 0.7, 0.1);
  const auto sw = sweep_penalized(m.data, grid, 0.02);
  DebiasOptions opt;
  opt.mode = SparsityMode::Known;
  opt.known = [](double) { return 2.5; };
  const auto dp = debias_path(sw.path, D, sw.scale, 0.1, m.data, opt);
  const auto [M, r] = structural_hypothesis(4, 1, 3);
  BridgeConfig mc;
  mc.n_paths = 4000;
  mc.n_steps = 100;
  const auto sup = sup_wald(dp, M, r, grid, D, 0.05, mc);
  for (double tau : grid.points) EXPECT_GE(sup.statistic, wald_stat(dp, M, r, tau, D).statistic);
  EXPECT_GT(sup.critical.value, chi2_quantile(1, 0.95));
  EXPECT_TRUE(sup.reject);
  EXPECT_EQ(sup.tau_lo, 0.3);
  EXPECT_EQ(sup.tau_hi, 0.7);
  EXPECT_THROW(structural_hypothesis(4, 2, 2), std::invalid_argument);
  const auto wrong = bridge_law_grid(2, grid, BridgeFunctional::NormalizedSq, mc);
  EXPECT_THROW(sup_wald(dp, M, r, grid, D, 0.05, wrong), std::invalid_argument);
}

TEST(Coverage, LowDimensionalKnownSparsity) {
  // 95% intervals in a well-posed model cover about 95% of the time.
  const int reps = 150;
  int hits = 0;
  for (int rep = 0; rep < reps; ++rep) {
    const auto m = low_dim(400, 3, 1000 + rep);
    const auto D = estimate_precision_rows(m.data, {1}, 0.02, lp::kInf);
    const auto dp = known_path(m.data, TauGrid::single(0.5), D, 0.0);
    VectorXd e = VectorXd::Zero(4);
    e[1] = 1.0;
    hits += pointwise_ci(dp, e, 0.5, 0.025, D).contains(1.0) ? 1 : 0;
  }
  const double cov = static_cast<double>(hits) / reps;
  EXPECT_GT(cov, 0.95 - 3.0 * std::sqrt(0.95 * 0.05 / reps));
  EXPECT_LE(cov, 1.0);
}
