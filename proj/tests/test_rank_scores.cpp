#include <gtest/gtest.h>

#include <random>

#include "hdqr/rank_scores.hpp"
#include "oracles.hpp"

using namespace hdqr;

namespace {

Dataset location_data(int n, int p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const MatrixXd x = oracle::random_design(n, p, rng);
  std::normal_distribution<double> g;
  VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = 1.0 + (p > 1 ? 0.5 * x(i, 1) - x(i, 2) : 0.0) + g(rng);
  return {y, x};
}

// Dual of the penalized program, written out directly.
lp::LpProblem dual_lp(const Dataset& data, double tau, const VectorXd& lambda) {
  const Index n = data.n();
  lp::LpProblem prob(n, lp::Sense::Maximize);
  prob.cost() = data.y;
  for (Index i = 0; i < n; ++i) prob.set_bounds(i, 0.0, 1.0);
  for (Index j = 0; j < data.x.cols(); ++j) {
    const VectorXd col = data.x.col(j);
    const double c = (1.0 - tau) * col.sum();
    if (j == 0) prob.add_row(col, lp::Relation::Equal, c);
    else prob.add_row(col, lp::Relation::Range, c - n * lambda[j], c + n * lambda[j]);
  }
  return prob;
}

}  // namespace

TEST(RankScores, InterceptOnlyRanks) {
  // Without covariates xi_i(tau) = 1 on the top (1 - tau) n responses.
  VectorXd y(5);
  y << 3.0, 1.0, 4.0, 0.5, 2.0;
  const Dataset data{y, MatrixXd::Ones(5, 1)};
  const auto rs = rank_scores_penalized(data, 0.3, VectorXd::Zero(1));
  ASSERT_EQ(rs.lp_status, lp::Status::Optimal);
  EXPECT_NEAR(rs.xi[2], 1.0, 1e-12);
  EXPECT_NEAR(rs.xi[0], 1.0, 1e-12);
  EXPECT_NEAR(rs.xi[4], 1.0, 1e-12);
  EXPECT_NEAR(rs.xi[1], 0.5, 1e-12);
  EXPECT_NEAR(rs.xi[3], 0.0, 1e-12);
  EXPECT_NEAR(rs.beta[0], 1.0, 1e-12);
}

TEST(RankScores, StrongDualityOnRandomInstances) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> nn(15, 60), pp(1, 120);
  for (int inst = 0; inst < 12; ++inst) {
    const int n = nn(rng), p = pp(rng);
    const Dataset data = location_data(n, p, 100 + inst);
    for (double tau = 0.1; tau < 0.95; tau += 0.2) {
      const VectorXd lam = default_penalties(data, tau, default_lambda0(n, p));
      const auto fit = fit_penalized(data, tau, lam);
      const auto rs = rank_scores_penalized(data, tau, lam);
      ASSERT_EQ(rs.lp_status, lp::Status::Optimal);
      EXPECT_NEAR(fit.objective, rs.dual_value(data), 1e-7) << "n=" << n << " p=" << p << " tau=" << tau;
    }
  }
}

TEST(RankScores, MatchesVertexEnumeration) {
  std::mt19937_64 rng(5);
  for (int inst = 0; inst < 6; ++inst) {
    const int n = 6 + inst % 3, p = 1 + inst % 2;
    const Dataset data = location_data(n, p, 300 + inst);
    const double tau = 0.25 + 0.1 * inst;
    VectorXd lam = VectorXd::Constant(p + 1, 0.05);
    lam[0] = 0.0;
    const auto rs = rank_scores_penalized(data, tau, lam);
    const auto ref = oracle::brute_force_lp(dual_lp(data, tau, lam));
    ASSERT_TRUE(ref.has_value());
    EXPECT_NEAR(data.y.dot(rs.xi), *ref, 1e-8);
    const double primal = oracle::brute_force_penalized_qr(data.x, data.y, tau, lam);
    EXPECT_NEAR(rs.dual_value(data), primal, 1e-8);
  }
}

TEST(RankScores, FeasibleBoxAndConstraints) {
  const Dataset data = location_data(50, 80, 9);
  const double tau = 0.3, l0 = default_lambda0(50, 80);
  const VectorXd lam = default_penalties(data, tau, l0);
  const auto rs = rank_scores_penalized(data, tau, lam);
  ASSERT_EQ(rs.lp_status, lp::Status::Optimal);
  EXPECT_GE(rs.xi.minCoeff(), -1e-12);
  EXPECT_LE(rs.xi.maxCoeff(), 1.0 + 1e-12);
  const VectorXd g = data.x.transpose() * (rs.xi.array() - (1.0 - tau)).matrix() / 50.0;
  EXPECT_NEAR(g[0], 0.0, 1e-10);
  for (Index j = 1; j < g.size(); ++j) EXPECT_LE(std::abs(g[j]), lam[j] + 1e-10);
}

TEST(RankScores, OracleConstraints) {
  const Dataset data = location_data(60, 30, 21);
  const std::vector<Index> support{0, 1, 2, 7};
  for (double tau = 0.1; tau < 0.95; tau += 0.1) {
    const auto rs = rank_scores_oracle(data, support, tau);
    ASSERT_EQ(rs.lp_status, lp::Status::Optimal);
    EXPECT_NEAR(rs.xi.mean(), 1.0 - tau, 1e-10);
    for (Index j : support) {
      const VectorXd col = data.x.col(j);
      EXPECT_NEAR(col.dot(rs.xi), (1.0 - tau) * col.sum(), 1e-8) << "j=" << j;
    }
  }
}

TEST(RankScores, OracleMatchesUnpenalizedFitOnSupport) {
  const Dataset data = location_data(40, 10, 4);
  const std::vector<Index> support{0, 1, 2};
  const auto rs = rank_scores_oracle(data, support, 0.6);
  const auto fit = fit_oracle(data, support, 0.6);
  EXPECT_NEAR(rs.dual_value(data), fit.objective, 1e-9);
}

TEST(RankScores, NonincreasingInTauForInterceptOnly) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  VectorXd y(30);
  for (auto& v : y) v = g(rng);
  const Dataset data{y, MatrixXd::Ones(30, 1)};
  VectorXd prev = VectorXd::Ones(30);
  for (double tau = 0.05; tau < 1.0; tau += 0.05) {
    const auto rs = rank_scores_penalized(data, tau, VectorXd::Zero(1));
    EXPECT_LE((rs.xi - prev).maxCoeff(), 1e-10);
    prev = rs.xi;
  }
}

TEST(RankScores, FromFitAgreesWithDualObjective) {
  const Dataset data = location_data(45, 60, 13);
  const double tau = 0.55;
  const VectorXd lam = default_penalties(data, tau, default_lambda0(45, 60));
  const auto fit = fit_penalized(data, tau, lam);
  const VectorXd xi = rank_scores_from_fit(fit);
  const double dual = (data.y.dot(xi) - (1.0 - tau) * data.y.sum()) / 45.0;
  EXPECT_NEAR(dual, fit.objective, 1e-8);
}

TEST(RankScores, WarmStartMatchesCold) {
  const Dataset data = location_data(40, 50, 17);
  const VectorXd lam = default_penalties(data, 0.4, 0.1);
  const auto a = rank_scores_penalized(data, 0.4, lam);
  const VectorXd lam2 = default_penalties(data, 0.45, 0.1);
  const auto warm = rank_scores_penalized(data, 0.45, lam2, &a.basis);
  const auto cold = rank_scores_penalized(data, 0.45, lam2);
  EXPECT_NEAR(warm.dual_value(data), cold.dual_value(data), 1e-9);
}

TEST(RankScores, RejectsBadInput) {
  const Dataset data = location_data(20, 3, 1);
  EXPECT_THROW(rank_scores_penalized(data, 0.0, 0.1), std::invalid_argument);
  EXPECT_THROW(rank_scores_penalized(data, 1.0, 0.1), std::invalid_argument);
  EXPECT_THROW(rank_scores_penalized(data, 0.5, VectorXd::Zero(2)), std::invalid_argument);
  EXPECT_THROW(rank_scores_oracle(data, {1, 2}, 0.5), std::invalid_argument);
  EXPECT_THROW(rank_scores_oracle(data, {0, 9}, 0.5), std::invalid_argument);
}

TEST(ScalePath, RejectsGridStraddlingHalf) {
  const Dataset data = location_data(30, 2, 3);
  EXPECT_THROW(scale_statistic_path(data, TauGrid::range(0.31, 0.71, 0.04), 0.1), std::invalid_argument);
}

TEST(ScalePath, AnchoredAndMatchesDirectRankScores) {
  const Dataset data = location_data(40, 20, 8);
  const TauGrid grid = TauGrid::range(0.3, 0.7, 0.05);
  const double l0 = default_lambda0(40, 20);
  const auto sp = scale_statistic_path(data, grid, l0);
  EXPECT_EQ(sp.S[0], 0.0);
  for (Index k = 0; k < grid.size(); ++k) {
    const double tau = grid.points[static_cast<std::size_t>(k)];
    const auto rs = rank_scores_penalized(data, tau, default_penalties(data, tau, l0));
    // Rank scores need not be unique; the dual objective is.
    EXPECT_NEAR(data.y.dot(sp.xi.col(k)), data.y.dot(rs.xi), 1e-7) << "tau=" << tau;
  }
}

TEST(ScalePath, LocationModelRecoversQuantileIntegral) {
  // No covariates: S(tau) - S(t0) ~ int phi F^{-1}.
  const int n = 1000;
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VectorXd y(n);
  for (auto& v : y) v = u(rng);
  const Dataset data{y, MatrixXd::Ones(n, 1)};
  const TauGrid grid = TauGrid::range(0.2, 0.8, 0.02);
  const auto sp = scale_statistic_path_oracle(data, {0}, grid);
  // -int_0.2^0.5 t dt + int_0.5^0.8 t dt = 0.09.
  EXPECT_NEAR(sp.S[grid.size() - 1], 0.09, 0.01);
  // int_0.2^0.5 (-t) dt = -0.105.
  EXPECT_NEAR(sp.at(0.5), -0.105, 0.01);
}

TEST(Sparsity, UniformAndGaussianLocation) {
  const int n = 2000;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::normal_distribution<double> g;
  VectorXd yu(n), yg(n);
  for (int i = 0; i < n; ++i) {
    yu[i] = u(rng);
    yg[i] = g(rng);
  }
  const TauGrid grid = TauGrid::symmetric(0.05, 0.005);
  const auto su = scale_statistic_path_oracle({yu, MatrixXd::Ones(n, 1)}, {0}, grid);
  const auto sg = scale_statistic_path_oracle({yg, MatrixXd::Ones(n, 1)}, {0}, grid);
  const double h = 0.1;
  for (double tau : {0.25, 0.5, 0.75}) EXPECT_NEAR(sparsity_estimate(su, tau, h).value, 1.0, 0.1) << tau;
  EXPECT_NEAR(sparsity_estimate(sg, 0.5, h).value, std::sqrt(2.0 * M_PI), 0.25);
  EXPECT_NEAR(sparsity_estimate_corrected(sg, 0.5, h).value, std::sqrt(2.0 * M_PI), 0.25);
}

TEST(Sparsity, ExactOnQuadraticPath) {
  // phi-signed Q = c (t - 1/2)^2 / 2 gives second difference c h^2.
  ScalePath sp;
  sp.grid = TauGrid::range(0.1, 0.9, 0.01);
  sp.S = VectorXd::Zero(sp.grid.size());
  const double c = 3.0;
  auto q = [&](double t) { return 0.5 * c * (t - 0.5) * (t - 0.5) + 0.2 * t; };
  for (Index k = 1; k < sp.grid.size(); ++k) {
    const double a = sp.grid.points[static_cast<std::size_t>(k - 1)], b = sp.grid.points[static_cast<std::size_t>(k)];
    sp.S[k] = sp.S[k - 1] + phi(0.5 * (a + b)) * (q(b) - q(a));
  }
  SparsityOptions straddle{true};
  for (double tau : {0.3, 0.5, 0.7}) {
    EXPECT_NEAR(sparsity_estimate(sp, tau, 0.1).value, c, 1e-9);
    EXPECT_NEAR(sparsity_estimate_corrected(sp, tau, 0.05, straddle).value, c, 1e-9);
  }
  EXPECT_NEAR(sparsity_estimate(sp, 0.45, 0.1, straddle).value, c, 1e-9);
}

TEST(Sparsity, CorrectionExactOnQuarticPath) {
  ScalePath sp;
  sp.grid = TauGrid::range(0.5, 0.9, 0.01);
  sp.S = VectorXd::Zero(sp.grid.size());
  auto q = [](double t) { return std::pow(t - 0.5, 4) + (t - 0.5) * (t - 0.5); };
  for (Index k = 0; k < sp.grid.size(); ++k) sp.S[k] = q(sp.grid.points[static_cast<std::size_t>(k)]) - q(0.5);
  const double tau = 0.7, h = 0.05;
  // Q'' = 12 (t - 1/2)^2 + 2.
  const double truth = 12.0 * 0.04 + 2.0;
  EXPECT_NEAR(sparsity_estimate_corrected(sp, tau, h).value, truth, 1e-9);
  EXPECT_GT(std::abs(sparsity_estimate(sp, tau, h).value - truth), 1e-3);
}

TEST(Sparsity, WindowChecks) {
  ScalePath sp;
  sp.grid = TauGrid::range(0.2, 0.8, 0.01);
  sp.S = VectorXd::Zero(sp.grid.size());
  EXPECT_THROW(sparsity_estimate(sp, 0.25, 0.1), BandwidthError);
  EXPECT_THROW(sparsity_estimate(sp, 0.45, 0.1), BandwidthError);
  EXPECT_NO_THROW(sparsity_estimate(sp, 0.45, 0.1, SparsityOptions{true}));
  EXPECT_THROW(sparsity_estimate(sp, 0.5, 0.0), BandwidthError);
  EXPECT_THROW(sparsity_estimate(sp, 0.5, 0.105), BandwidthError);
  try {
    sparsity_estimate(sp, 0.75, 0.1);
    FAIL();
  } catch (const BandwidthError& e) {
    EXPECT_DOUBLE_EQ(e.tau, 0.75);
  }
}

TEST(Sparsity, FloorFlagged) {
  ScalePath sp;
  sp.grid = TauGrid::range(0.3, 0.7, 0.05);
  sp.S = VectorXd::Zero(sp.grid.size());
  const auto e = sparsity_estimate(sp, 0.5, 0.1);
  EXPECT_TRUE(e.floored);
  EXPECT_DOUBLE_EQ(e.value, kSparsityFloor);
}

TEST(Bandwidth, SnapsAndCaps) {
  const TauGrid grid = TauGrid::symmetric(0.05, 0.005);
  const double h = default_bandwidth(400, 500, 10, grid, {0.5});
  EXPECT_NEAR(std::fmod(h + 1e-12, 0.005), 0.0, 1e-9);
  EXPECT_LE(0.5 + 2 * h, grid.back() + 1e-12);
  EXPECT_THROW(raw_bandwidth(400, 500, 0, 0.4), std::invalid_argument);
  // tau = 0.1 leaves room for 2h <= 0.05.
  EXPECT_NEAR(default_bandwidth(400, 500, 10, grid, {0.1}), 0.025, 1e-12);
}
