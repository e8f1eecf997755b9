#include <random>

#include <benchmark/benchmark.h>

#include "namedemand/benchmark_runner.hpp"
#include "namedemand/estimators.hpp"
#include "namedemand/first_stage.hpp"
#include "namedemand/logit.hpp"
#include "namedemand/simulation.hpp"
#include "namedemand/sparse.hpp"

using namespace namedemand;

namespace {

SimplexVector random_shares(int J, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Vector p(J + 1);
  for (int j = 0; j <= J; ++j) p[j] = u(rng);
  return SimplexVector(p / p.sum());
}

const SimulatedMarkets& misspec_data() {
  static const SimulatedMarkets data = gen_misspec(MisspecConfig{}, 1);
  return data;
}

}  // namespace

static void BM_InvertLogit(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const SimplexVector s = random_shares(static_cast<int>(state.range(0)), rng);
  for (auto _ : state) benchmark::DoNotOptimize(invert_logit(s));
}
BENCHMARK(BM_InvertLogit)->Arg(2)->Arg(6);

static void BM_BlpContraction(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const int J = static_cast<int>(state.range(0));
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix X(J, 2);
  for (int j = 0; j < J; ++j) X(j, 0) = n(rng), X(j, 1) = n(rng);
  const MarketData mk(0, X, Vector::Ones(J), Matrix(J, 0), random_shares(J, rng));
  const ThetaPoint theta(Vector::Zero(2), 1.0, Vector::Constant(2, 1.0));
  const QuadratureRule quad = QuadratureRule::normal_draws(kDefaultQuadratureDraws, 2, 7);
  for (auto _ : state) benchmark::DoNotOptimize(blp_contraction(mk.observed_shares, theta, mk, quad));
}
BENCHMARK(BM_BlpContraction)->Arg(2)->Arg(6);

static void BM_KernelRidgeFit(benchmark::State& state) {
  const auto& ds = misspec_data().dataset;
  const auto& s = ds.sample(0);
  const Eigen::Index n = state.range(0);
  const Matrix Z = s.Z.topRows(n);
  const std::vector<int> d(s.choices.begin(), s.choices.begin() + n);
  for (auto _ : state) benchmark::DoNotOptimize(fit_market(0, Z, d, ds.num_goods(), {}, kDefaultLambda));
}
BENCHMARK(BM_KernelRidgeFit)->Arg(250)->Arg(1000)->Unit(benchmark::kMillisecond);

static void BM_ParametricLoss(benchmark::State& state) {
  const auto& ds = misspec_data().dataset;
  OptimizerConfig opt;
  opt.max_iter = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(estimate_parametric(ds, ParametricSpec::quadratic(), oracle_moments(), opt));
  }
}
BENCHMARK(BM_ParametricLoss)->Unit(benchmark::kMillisecond);

static void BM_SparseScore(benchmark::State& state) {
  SparseConfig cfg;
  cfg.p = static_cast<int>(state.range(0));
  const SparseMarket mk = gen_sparse_market(cfg, 1, 0);
  for (auto _ : state) benchmark::DoNotOptimize(score_market(mk.Z, mk.choices));
}
BENCHMARK(BM_SparseScore)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
