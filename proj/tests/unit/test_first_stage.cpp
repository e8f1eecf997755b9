#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <numeric>
#include <random>

#include "namedemand/benchmark_runner.hpp"
#include "namedemand/first_stage.hpp"
#include "namedemand/simulation.hpp"
#include "test_util.hpp"

namespace namedemand {
namespace {

using testing::vec;

TEST(Kernel, MedianPairwiseDistance) {
  Matrix Z(4, 1);
  Z << 0, 1, 3, 6;
  // pairwise: 1,3,6,2,5,3 -> sorted 1,2,3,3,5,6 -> median 3
  EXPECT_DOUBLE_EQ(median_pairwise_distance(Z), 3.0);
  Matrix Z2(3, 2);
  Z2 << 0, 0, 3, 4, 0, 1;
  // 5, 1, sqrt(9+9)
  EXPECT_DOUBLE_EQ(median_pairwise_distance(Z2), std::sqrt(18.0));
  EXPECT_DOUBLE_EQ(median_pairwise_distance(Matrix::Zero(1, 2)), 1.0);
  EXPECT_DOUBLE_EQ(median_pairwise_distance(Matrix::Zero(5, 2)), 1.0);
}

TEST(Kernel, GaussianValues) {
  Matrix A(2, 1), B(1, 1);
  A << 0, 2;
  B << 1;
  Matrix K = gaussian_kernel(A, B, 2.0);
  EXPECT_NEAR(K(0, 0), std::exp(-1.0 / 8.0), 1e-15);
  EXPECT_NEAR(K(1, 0), std::exp(-1.0 / 8.0), 1e-15);
  EXPECT_DOUBLE_EQ(gaussian_kernel(A, A, 1.0)(0, 0), 1.0);
}

TEST(ProjectToSimplex, ClampAndRenormalize) {
  SimplexVector s = project_to_simplex(vec({-0.2, 0.6, 0.9}));
  EXPECT_DOUBLE_EQ(s[0], 0.0);
  EXPECT_NEAR(s[1], 0.4, 1e-15);
  EXPECT_NEAR(s[2], 0.6, 1e-15);
  SimplexVector u = project_to_simplex(vec({-1.0, -2.0}));
  EXPECT_DOUBLE_EQ(u[0], 0.5);
  SimplexVector big = project_to_simplex(vec({3.0, 0.2}));
  EXPECT_DOUBLE_EQ(big[0], 1.0 / 1.2);
}

TEST(FitMarket, AllChooseOneGood) {
  std::mt19937_64 rng(1);
  Matrix Z = testing::random_matrix(rng, 30, 2);
  std::vector<int> d(30, 1);
  MarketPredictor mp = fit_market(0, Z, d, 1, KernelSpec{}, 0.1);
  SharePredictor pred({mp}, KernelSpec{}, 0.1);
  for (int i = 0; i < 30; ++i) {
    SimplexVector s = pred.predict(Z.row(i).transpose(), 0);
    EXPECT_NEAR(s[0], 0.0, 1e-12);
    EXPECT_NEAR(s[1], 1.0, 1e-12);
  }
}

TEST(FitMarket, SingleIndividualPredictsItsChoice) {
  Matrix Z(1, 1);
  Z << 0.3;
  std::vector<int> d = {2};
  SharePredictor pred({fit_market(4, Z, d, 2, KernelSpec{}, 1.0)}, KernelSpec{}, 1.0);
  SimplexVector s = pred.predict(vec({0.3}), 4);
  EXPECT_EQ(s.probs(), vec({0.0, 0.0, 1.0}));
}

TEST(FitMarket, InterpolatesAtTinyLambda) {
  Matrix Z(12, 1);
  std::vector<int> d;
  for (int i = 0; i < 12; ++i) {
    Z(i, 0) = i;
    d.push_back(i % 3 == 0 ? 1 : 0);
  }
  KernelSpec k;
  k.bandwidth = 0.5;
  MarketPredictor mp = fit_market(0, Z, d, 1, k, 1e-10);
  Matrix raw = mp.predict_raw_batch(Z);
  for (int i = 0; i < 12; ++i) {
    EXPECT_NEAR(raw(i, 1), d[i] == 1 ? 1.0 : 0.0, 1e-6);
    EXPECT_NEAR(raw(i, 0), d[i] == 0 ? 1.0 : 0.0, 1e-6);
  }
}

TEST(FitMarket, LargeLambdaApproachesFrequencies) {
  std::mt19937_64 rng(17);
  const int N = 5000;
  Matrix Z = testing::random_matrix(rng, N, 1);
  std::discrete_distribution<int> choice({0.5, 0.3, 0.2});
  std::vector<int> d(N);
  Vector freq = Vector::Zero(3);
  for (int i = 0; i < N; ++i) {
    d[i] = choice(rng);
    freq[d[i]] += 1.0 / N;
  }
  SharePredictor pred({fit_market(0, Z, d, 2, KernelSpec{}, 1e4)}, KernelSpec{}, 1e4);
  for (double z : {-1.5, 0.0, 0.7, 2.0}) {
    EXPECT_LT((pred.predict(vec({z}), 0).probs() - freq).lpNorm<Eigen::Infinity>(), 0.02);
  }
}

TEST(FitMarket, Errors) {
  Matrix Z = Matrix::Zero(5, 1);
  std::vector<int> d = {0, 1, 0, 1, 1};
  EXPECT_THROW(fit_market(0, Z, d, 1, KernelSpec{}, 0.0), DataError);
  EXPECT_THROW(fit_market(0, Matrix(0, 1), std::vector<int>{}, 1, KernelSpec{}, 1.0), DataError);
  std::vector<int> bad = {0, 1, 0, 1, 2};
  EXPECT_THROW(fit_market(0, Z, bad, 1, KernelSpec{}, 1.0), DataError);
  // identical rows make K rank one
  try {
    fit_market(0, Z, d, 1, KernelSpec{}, 1e-300);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("condition"), std::string::npos);
  }
}

TEST(SharePredictor, UnknownMarket) {
  Matrix Z(2, 1);
  Z << 0, 1;
  std::vector<int> d = {0, 1};
  SharePredictor pred({fit_market(0, Z, d, 1, KernelSpec{}, 1.0)}, KernelSpec{}, 1.0);
  EXPECT_THROW(pred.predict(vec({0.0}), 1), DataError);
  EXPECT_THROW(pred.predict(vec({0.0, 1.0}), 0), DataError);
}

MisspecConfig small_config(int M, int N) {
  MisspecConfig cfg;
  cfg.M = M;
  cfg.N = N;
  return cfg;
}

TEST(SharePredictor, AlwaysOnSimplexIncludingFarAway) {
  SimulatedMarkets sim = gen_misspec(small_config(3, 300), 4);
  SharePredictor pred = SharePredictor::fit(sim.dataset, KernelSpec{}, 0.01);
  for (double z : {-50.0, -3.0, 0.0, 1.0, 4.0, 1e6}) {
    for (int m = 0; m < 3; ++m) {
      SimplexVector s = pred.predict(vec({z}), m);
      EXPECT_GE(s.probs().minCoeff(), 0.0);
      EXPECT_NEAR(s.probs().sum(), 1.0, 1e-12);
    }
  }
}

TEST(SharePredictor, IdenticalMarketsPredictIdentically) {
  SimulatedMarkets sim = gen_misspec(small_config(1, 200), 6);
  const MarketData& mk = sim.dataset.market(0);
  std::vector<MarketData> markets = {mk, MarketData(1, mk.X, mk.P, mk.W, mk.observed_shares)};
  std::vector<IndividualData> inds = sim.dataset.individuals();
  const std::size_t n = inds.size();
  for (std::size_t i = 0; i < n; ++i) inds.push_back({1, inds[i].Z, inds[i].d});
  Dataset ds = validate_dataset(markets, inds);
  SharePredictor pred = SharePredictor::fit(ds, KernelSpec{}, 1.0);
  for (double z : {-1.0, 0.2, 1.3})
    EXPECT_EQ(pred.predict(vec({z}), 0).probs(), pred.predict(vec({z}), 1).probs());
}

TEST(SharePredictor, PermutationInvariant) {
  std::mt19937_64 rng(9);
  Matrix Z = testing::random_matrix(rng, 80, 2);
  std::vector<int> d(80);
  for (int i = 0; i < 80; ++i) d[i] = static_cast<int>(rng() % 3);
  std::vector<int> perm(80);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix Zp(80, 2);
  std::vector<int> dp(80);
  for (int i = 0; i < 80; ++i) {
    Zp.row(i) = Z.row(perm[i]);
    dp[i] = d[perm[i]];
  }
  MarketPredictor a = fit_market(0, Z, d, 2, KernelSpec{}, 0.5);
  MarketPredictor b = fit_market(0, Zp, dp, 2, KernelSpec{}, 0.5);
  EXPECT_DOUBLE_EQ(a.bandwidth, b.bandwidth);
  for (int t = 0; t < 10; ++t) {
    Vector z = testing::random_vector(rng, 2);
    EXPECT_LT((a.predict_raw(z) - b.predict_raw(z)).lpNorm<Eigen::Infinity>(), 1e-10);
  }
}

TEST(SharePredictor, BatchMatchesPointwise) {
  SimulatedMarkets sim = gen_misspec(small_config(2, 150), 8);
  SharePredictor pred = SharePredictor::fit(sim.dataset, KernelSpec{}, 1.0);
  Matrix Zq(3, 1);
  Zq << -0.5, 0.0, 0.9;
  Matrix batch = pred.predict_batch(Zq, 1);
  for (int i = 0; i < 3; ++i)
    EXPECT_TRUE(batch.row(i).transpose().isApprox(pred.predict(Zq.row(i).transpose(), 1).probs(), 1e-14));
}

TEST(SharePredictor, JsonRoundTrip) {
  SimulatedMarkets sim = gen_misspec(small_config(2, 50), 2);
  SharePredictor pred = SharePredictor::fit(sim.dataset, KernelSpec{}, 0.3);
  SharePredictor back = SharePredictor::from_json(nlohmann::json::parse(pred.to_json().dump()));
  EXPECT_EQ(back.lambda(), 0.3);
  for (double z : {-1.0, 0.5})
    for (int m = 0; m < 2; ++m) EXPECT_EQ(back.predict(vec({z}), m).probs(), pred.predict(vec({z}), m).probs());
}

TEST(SharePredictor, MedianPredictionCloseToTruth) {
  SimulatedMarkets sim = gen_misspec(MisspecConfig{}, 1);
  SharePredictor pred = SharePredictor::fit(sim.dataset, KernelSpec{}, kDefaultLambda);
  const Vector z0 = median_covariates(sim.dataset);
  auto truth = true_shares_at(MisspecConfig{}, sim, z0[0]);
  double mean_err = 0.0, max_err = 0.0;
  for (std::size_t m = 0; m < sim.dataset.num_markets(); ++m) {
    const double e = (pred.predict(z0, sim.dataset.market(m).market_id).probs() - truth[m].probs())
                         .lpNorm<Eigen::Infinity>();
    mean_err += e / static_cast<double>(sim.dataset.num_markets());
    max_err = std::max(max_err, e);
  }
  EXPECT_LT(mean_err, 0.05);
  EXPECT_LT(max_err, 0.12);
}

TEST(SharePredictor, ErrorShrinksWithN) {
  int ok = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::array<double, 3> err{};
    int idx = 0;
    for (int N : {250, 1000, 4000}) {
      // sup over markets and goods
      SimulatedMarkets sim = gen_misspec(small_config(10, N), seed);
      SharePredictor pred = SharePredictor::fit(sim.dataset, KernelSpec{}, kDefaultLambda);
      const auto truth = true_shares_at(MisspecConfig{}, sim, 0.0);
      double e = 0.0;
      for (int m = 0; m < 10; ++m) {
        const int id = sim.dataset.market(m).market_id;
        e = std::max(e, (pred.predict(vec({0.0}), id).probs() - truth[m].probs()).lpNorm<Eigen::Infinity>());
      }
      err[idx++] = e;
    }
    if (err[1] <= err[0] && err[2] <= err[1]) ++ok;
  }
  EXPECT_GE(ok, 8);
}

TEST(SelectLambda, SingleElementGrid) {
  SimulatedMarkets sim = gen_misspec(small_config(2, 40), 1);
  std::vector<double> grid = {0.7};
  EXPECT_EQ(select_lambda(sim.dataset, KernelSpec{}, grid), 0.7);
  EXPECT_THROW(select_lambda(sim.dataset, KernelSpec{}, std::vector<double>{}), DataError);
}

TEST(SelectLambda, PureNoisePicksLargest) {
  std::mt19937_64 rng(12);
  std::vector<IndividualData> inds;
  for (int i = 0; i < 200; ++i) inds.push_back({0, testing::random_vector(rng, 2), static_cast<int>(rng() % 2)});
  Dataset ds = validate_dataset({testing::uniform_market(0, 1)}, inds);
  std::vector<double> grid = {1e-4, 1e-2, 1.0, 1e2, 1e4};
  EXPECT_EQ(select_lambda(ds, KernelSpec{}, grid), 1e4);
}

TEST(SelectLambda, ReturnsGridArgmin) {
  SimulatedMarkets sim = gen_misspec(small_config(3, 200), 5);
  std::vector<double> grid = {0.1, 1.0, 10.0, 100.0};
  const double chosen = select_lambda(sim.dataset, KernelSpec{}, grid);
  EXPECT_NE(std::find(grid.begin(), grid.end(), chosen), grid.end());
}

}  // namespace
}  // namespace namedemand
