#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "namedemand/estimators.hpp"
#include "namedemand/simulation.hpp"
#include "test_util.hpp"

namespace namedemand {
namespace {

using testing::vec;

// Markets whose shares are exactly logit at theta, with xi residualized on
// (1, X, P) so the covariance moments vanish at the truth.
struct ExactLogit {
  Dataset dataset;
  std::vector<SimplexVector> shares;
  Matrix xi;
};

ExactLogit exact_logit_markets(int M, int J, const ThetaPoint& theta, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int k = static_cast<int>(theta.beta.size());
  std::vector<Matrix> X;
  std::vector<Vector> P;
  Matrix design(M * J, 2 + k);
  Vector raw(M * J);
  for (int m = 0; m < M; ++m) {
    X.push_back(testing::random_matrix(rng, J, k));
    P.push_back(testing::random_vector(rng, J).cwiseAbs().array() + 0.5);
    for (int j = 0; j < J; ++j) {
      design(m * J + j, 0) = 1.0;
      design.block(m * J + j, 1, 1, k) = X[m].row(j);
      design(m * J + j, 1 + k) = P[m][j];
      raw[m * J + j] = 0.5 * testing::random_vector(rng, 1)[0];
    }
  }
  const Vector resid = raw - design * design.colPivHouseholderQr().solve(raw);
  ExactLogit out;
  out.xi.resize(M, J);
  std::vector<MarketData> markets;
  for (int m = 0; m < M; ++m) {
    Vector xi = resid.segment(m * J, J);
    out.xi.row(m) = xi.transpose();
    Vector delta = X[m] * theta.beta - theta.alpha * P[m] + xi;
    SimplexVector s(testing::logit_oracle(delta));
    markets.emplace_back(m, X[m], P[m], Matrix(J, 0), s);
    out.shares.push_back(s);
  }
  out.dataset = validate_dataset(markets, {});
  return out;
}

TEST(EstimateName, ExactSharesRecoverTruth) {
  ThetaPoint truth(vec({0.8}), 1.2);
  ExactLogit data = exact_logit_markets(30, 2, truth, 4);
  OptimizerConfig cfg;
  EstimationResult r = estimate_name_from_shares(data.dataset, data.shares, vec({0.0}), name_moments(), cfg);
  EXPECT_TRUE(r.converged) << r.message;
  EXPECT_LT(r.final_loss, 1e-8);
  EXPECT_NEAR(r.theta.beta[0], 0.8, 1e-4);
  EXPECT_NEAR(r.theta.alpha, 1.2, 1e-4);
  EXPECT_LT((r.xi.values() - data.xi).lpNorm<Eigen::Infinity>(), 1e-3);
  EXPECT_GE(r.elapsed_seconds, 0.0);
}

TEST(EstimateName, LossAtTruthIsZero) {
  ThetaPoint truth(vec({0.8, -0.4}), 1.2);
  ExactLogit data = exact_logit_markets(20, 3, truth, 8);
  NameOptions opt;
  opt.start = truth;
  OptimizerConfig cfg;
  cfg.max_iter = 1;
  EstimationResult r = estimate_name_from_shares(data.dataset, data.shares, vec({0.0}), name_moments(), cfg, opt);
  const Matrix xi0 = [&] {
    Matrix xi(20, 3);
    for (int m = 0; m < 20; ++m) {
      const auto& mk = data.dataset.market(m);
      xi.row(m) = (invert_logit(data.shares[m]) - mk.X * truth.beta + truth.alpha * mk.P).transpose();
    }
    return xi;
  }();
  EXPECT_LT((xi0 - data.xi).lpNorm<Eigen::Infinity>(), 1e-12);
  auto mv = build_moments(data.dataset, XiMatrix(xi0), nullptr, name_moments().moments);
  EXPECT_LT(md_loss(mv, Matrix()), 1e-8);
  EXPECT_LE(r.final_loss, 1e-8);
}

// Independent loss: xi from log ratios, scaled covariances with X and P.
double oracle_loss(const ExactLogit& d, const std::vector<SimplexVector>& shares, double beta, double alpha) {
  std::vector<double> x, p, xi;
  for (std::size_t m = 0; m < d.dataset.num_markets(); ++m) {
    const auto& mk = d.dataset.market(m);
    for (int j = 0; j < mk.num_goods(); ++j) {
      const double delta = std::log(shares[m][j + 1] / shares[m][0]);
      x.push_back(mk.X(j, 0));
      p.push_back(mk.P[j]);
      xi.push_back(delta - beta * mk.X(j, 0) + alpha * mk.P[j]);
    }
  }
  auto cov = [](const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
    ma /= a.size();
    mb /= b.size();
    double c = 0;
    for (std::size_t i = 0; i < a.size(); ++i) c += (a[i] - ma) * (b[i] - mb);
    return c / (a.size() - 1);
  };
  const double h1 = cov(x, xi) / std::sqrt(cov(x, x));
  const double h2 = cov(p, xi) / std::sqrt(cov(p, p));
  return h1 * h1 + h2 * h2;
}

TEST(EstimateName, MatchesGridSearch) {
  // single market, noisy shares so the loss minimum is not at the truth
  ThetaPoint truth(vec({0.5}), 1.0);
  ExactLogit data = exact_logit_markets(1, 6, truth, 21);
  std::mt19937_64 rng(3);
  std::vector<SimplexVector> noisy;
  for (const auto& s : data.shares) {
    Vector p = s.probs();
    for (Eigen::Index j = 0; j < p.size(); ++j) p[j] *= std::exp(0.3 * testing::random_vector(rng, 1)[0]);
    noisy.emplace_back(p / p.sum());
  }
  double best = std::numeric_limits<double>::infinity(), bb = 0, ba = 0;
  const double step = 0.01;
  for (int i = -300; i <= 300; ++i)
    for (int a = -300; a <= 300; ++a) {
      const double l = oracle_loss(data, noisy, 0.5 + i * step, 1.0 + a * step);
      if (l < best) best = l, bb = 0.5 + i * step, ba = 1.0 + a * step;
    }
  EstimationResult r = estimate_name_from_shares(data.dataset, noisy, vec({0.0}), name_moments(), OptimizerConfig{});
  EXPECT_LE(r.final_loss, best + 1e-12);
  EXPECT_LE(oracle_loss(data, noisy, r.theta.beta[0], r.theta.alpha), best + 1e-12);
  // just identified: the loss vanishes on the solution of two linear equations
  const auto& mk = data.dataset.market(0);
  const Vector x = mk.X.col(0), pr = mk.P;
  Vector d(6);
  for (int j = 0; j < 6; ++j) d[j] = std::log(noisy[0][j + 1] / noisy[0][0]);
  auto cov = [](const Vector& a, const Vector& b) {
    return (a.array() - a.mean()).matrix().dot((b.array() - b.mean()).matrix()) / (a.size() - 1);
  };
  Eigen::Matrix2d A;
  A << cov(x, x), -cov(x, pr), cov(x, pr), -cov(pr, pr);
  const Eigen::Vector2d root = A.fullPivLu().solve(Eigen::Vector2d(cov(x, d), cov(pr, d)));
  EXPECT_NEAR(r.theta.beta[0], root[0], 1e-3);
  EXPECT_NEAR(r.theta.alpha, root[1], 1e-3);
  // the grid minimizer lies near the root, up to the shape of the loss valley
  EXPECT_NEAR(bb, root[0], 5 * step);
  EXPECT_NEAR(ba, root[1], 5 * step);
}

TEST(EstimateName, FromPredictorOnSimulatedData) {
  MisspecConfig cfg;
  cfg.M = 25;
  cfg.N = 600;
  SimulatedMarkets sim = gen_misspec(cfg, 5);
  SharePredictor pred = SharePredictor::fit(sim.dataset, KernelSpec{}, 10.0);
  EstimationResult r = estimate_name(sim.dataset, pred, median_covariates(sim.dataset), name_moments(), OptimizerConfig{});
  EXPECT_TRUE(r.converged) << r.message;
  EXPECT_NEAR(r.theta.alpha, 1.0, 0.4);
  EXPECT_EQ(r.theta.eval_point, median_covariates(sim.dataset));
  EXPECT_EQ(r.xi.markets(), 25);
}

TEST(EstimateName, RandomCoefficientsOption) {
  ThetaPoint truth(vec({0.8}), 1.2, vec({0.6}));
  std::mt19937_64 rng(6);
  QuadratureRule q = QuadratureRule::normal_draws(200, 1, 7);
  std::vector<MarketData> markets;
  std::vector<SimplexVector> shares;
  for (int m = 0; m < 20; ++m) {
    MarketData mk = testing::random_market(rng, m, 3, 1, 2);
    mk.W = mk.X * testing::random_matrix(rng, 1, 2) + 0.3 * testing::random_matrix(rng, 3, 2);
    SimplexVector s = rc_shares(truth, 0.2 * testing::random_vector(rng, 3), mk, q);
    markets.emplace_back(m, mk.X, mk.P, mk.W, s);
    shares.push_back(s);
  }
  Dataset ds = validate_dataset(markets, {});
  NameOptions opt;
  opt.random_coefficients = true;
  MomentSpec spec({MomentId::kCovXXi, MomentId::kCovPXi, MomentId::kCovWXi});
  EstimationResult r = estimate_name_from_shares(ds, shares, vec({0.0}), spec, OptimizerConfig{}, opt);
  ASSERT_TRUE(r.theta.has_random_coefficients());
  EXPECT_GE((*r.theta.sigma)[0], 0.0);
  EXPECT_EQ(r.quadrature_seed, 7u);
  EXPECT_TRUE(std::isfinite(r.final_loss));
  EXPECT_EQ(r.parameters.size(), 3);
}

TEST(EstimateName, RejectsBoundaryShares) {
  ExactLogit data = exact_logit_markets(3, 1, ThetaPoint(vec({1.0}), 1.0), 1);
  std::vector<SimplexVector> s = data.shares;
  s[1] = testing::simplex({0.0, 1.0});
  EXPECT_THROW(estimate_name_from_shares(data.dataset, s, vec({0.0}), name_moments(), OptimizerConfig{}), DataError);
  s.pop_back();
  EXPECT_THROW(estimate_name_from_shares(data.dataset, s, vec({0.0}), name_moments(), OptimizerConfig{}), DataError);
}

TEST(FloorShares, RaisesAndRenormalizes) {
  SimplexVector s = floor_shares(testing::simplex({0.0, 0.25, 0.75}), 0.01);
  EXPECT_TRUE(s.interior());
  EXPECT_NEAR(s[0], 0.01 / 1.01, 1e-15);
  SimplexVector same = testing::simplex({0.2, 0.8});
  EXPECT_EQ(floor_shares(same, 0.01).probs(), same.probs());
}

TEST(ParametricSpec, BuildersAndParse) {
  EXPECT_EQ(ParametricSpec::quadratic().num_params(), 4);
  EXPECT_EQ(ParametricSpec::quadratic_without_linear().num_params(), 3);
  EXPECT_EQ(ParametricSpec::quadratic().describe(), "1,z,z2");
  EXPECT_EQ(ParametricSpec::quadratic_without_linear().describe(), "1,z2");
  EXPECT_EQ(ParametricSpec::parse("oracle").describe(), "1,z,z2");
  EXPECT_EQ(ParametricSpec::parse("misspecified").describe(), "1,z2");
  ParametricSpec two = ParametricSpec::parse("1, z; z3_1", 2);
  EXPECT_EQ(two.describe(), "1,z;z3_1");
  EXPECT_EQ(two.num_params(), 4);
  EXPECT_THROW(ParametricSpec::parse("1,q"), DataError);
  EXPECT_THROW(ParametricSpec::parse("1,z", 2), DataError);
  EXPECT_THROW(ParametricSpec::parse("z0"), DataError);
  Vector beta = ParametricSpec::quadratic().beta_at(vec({1.0, 0.5, 0.5, 9.0}), vec({2.0}));
  EXPECT_DOUBLE_EQ(beta[0], 1.0 + 1.0 + 2.0);
  Vector b2 = two.beta_at(vec({1.0, 2.0, 3.0, 0.0}), vec({0.5, 2.0}));
  EXPECT_DOUBLE_EQ(b2[0], 2.0);
  EXPECT_DOUBLE_EQ(b2[1], 24.0);
}

MisspecConfig medium_config() {
  MisspecConfig cfg;
  cfg.M = 50;
  cfg.N = 1000;
  return cfg;
}

TEST(EstimateParametric, MicroMomentsNearZeroAtTruth) {
  MisspecConfig cfg = medium_config();
  SimulatedMarkets sim = gen_misspec(cfg, 11);
  const Dataset& ds = sim.dataset;
  IndividualProbabilities truth = [&](std::size_t m) {
    const auto& s = ds.sample(m);
    Matrix pr(s.size(), ds.num_goods() + 1);
    for (Eigen::Index i = 0; i < s.size(); ++i)
      pr.row(i) = true_shares_at(cfg, ds.market(m), sim.xi.row(m).transpose(), s.Z(i, 0)).probs().transpose();
    return pr;
  };
  auto mv = build_moments(ds, XiMatrix(sim.xi), &truth, {MomentId::kCovZChoiceX, MomentId::kCovZ2ChoiceX});
  const double n = static_cast<double>(ds.num_individuals());
  for (const auto& v : mv) EXPECT_LT(std::abs(v.sample), 4.0 / std::sqrt(n)) << v.identifier;
}

TEST(EstimateParametric, OracleSpecRecoversTruth) {
  MisspecConfig cfg = medium_config();
  SimulatedMarkets sim = gen_misspec(cfg, 12);
  EstimationResult r = estimate_parametric(sim.dataset, ParametricSpec::quadratic(), oracle_moments(), OptimizerConfig{});
  EXPECT_TRUE(r.converged) << r.message;
  ASSERT_EQ(r.parameters.size(), 4);
  EXPECT_NEAR(r.theta.alpha, 1.0, 0.35);
  EXPECT_NEAR(r.parameters[1], 0.5, 0.3);
  EXPECT_NEAR(r.parameters[2], 0.5, 0.3);
  EXPECT_NEAR(r.theta.beta[0], cfg.beta(r.theta.eval_point[0]), 0.4);
  EXPECT_EQ(r.xi.markets(), 50);
}

TEST(EstimateParametric, MisspecifiedSpecRuns) {
  MisspecConfig cfg = medium_config();
  cfg.M = 20;
  cfg.N = 400;
  SimulatedMarkets sim = gen_misspec(cfg, 13);
  EstimationResult r = estimate_parametric(sim.dataset, ParametricSpec::quadratic_without_linear(),
                                           misspecified_moments(), OptimizerConfig{});
  EXPECT_EQ(r.parameters.size(), 3);
  EXPECT_TRUE(std::isfinite(r.theta.alpha));
}

TEST(EstimateParametric, ConstantSpecMatchesLogitHomogeneous) {
  // beta(Z) = g0 has no heterogeneity; the nested fixed point reduces to logit
  ExactLogit data = exact_logit_markets(20, 2, ThetaPoint(vec({0.7}), 0.9), 3);
  std::vector<IndividualData> inds;
  for (int m = 0; m < 20; ++m)
    for (int i = 0; i < 3; ++i) inds.push_back({m, vec({double(i)}), i});
  Dataset ds = validate_dataset(data.dataset.markets(), inds);
  EstimationResult r = estimate_parametric(ds, ParametricSpec::parse("1"), name_moments(), OptimizerConfig{});
  EXPECT_NEAR(r.parameters[0], 0.7, 1e-4);
  EXPECT_NEAR(r.theta.alpha, 0.9, 1e-4);
}

TEST(EstimateParametric, Errors) {
  ExactLogit data = exact_logit_markets(3, 1, ThetaPoint(vec({1.0}), 1.0), 1);
  EXPECT_THROW(estimate_parametric(data.dataset, ParametricSpec::quadratic(), name_moments(), OptimizerConfig{}),
               DataError);
  ParametricSpec bad = ParametricSpec::quadratic();
  bad.initial = vec({1.0});
  MisspecConfig cfg;
  cfg.M = 2;
  cfg.N = 20;
  SimulatedMarkets sim = gen_misspec(cfg, 1);
  EXPECT_THROW(estimate_parametric(sim.dataset, bad, name_moments(), OptimizerConfig{}), DataError);
  EXPECT_THROW(estimate_parametric(sim.dataset, ParametricSpec::parse("1,z_3"), name_moments(), OptimizerConfig{}),
               DataError);
}

TEST(Box, HalfOpenWithInclusiveInfinity) {
  const double inf = std::numeric_limits<double>::infinity();
  Box b{vec({0.0}), vec({1.0})};
  EXPECT_TRUE(b.contains(vec({0.0})));
  EXPECT_FALSE(b.contains(vec({1.0})));
  Box open{vec({-inf}), vec({inf})};
  EXPECT_TRUE(open.contains(vec({1e300})));
  EXPECT_TRUE(open.contains(vec({inf})));
}

TEST(BunchingSpec, CutsPartition) {
  BunchingSpec spec = BunchingSpec::cuts(2, 1, {0.5, -0.5});
  ASSERT_EQ(spec.regions.size(), 3u);
  for (double z : {-3.0, -0.5, 0.0, 0.5, 2.0}) {
    int hits = 0;
    for (const auto& r : spec.regions) hits += r.contains(vec({7.0, z}));
    EXPECT_EQ(hits, 1) << z;
  }
  EXPECT_THROW(BunchingSpec::cuts(1, 1, {0.0}), DataError);
}

// Piecewise-constant beta: beta = b_lo for z < 0, b_hi otherwise; alpha = 1.
Dataset piecewise_dataset(double b_lo, double b_hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::extreme_value_distribution<double> g;
  std::vector<MarketData> markets;
  std::vector<IndividualData> inds;
  for (int m = 0; m < 50; ++m) {
    Matrix X(2, 1);
    Vector P(2), xi(2);
    for (int j = 0; j < 2; ++j) {
      X(j, 0) = n(rng);
      P[j] = std::abs(n(rng)) + 0.5;
      xi[j] = 0.5 * n(rng);
    }
    Vector counts = Vector::Zero(3);
    for (int i = 0; i < 1000; ++i) {
      const double z = n(rng);
      const double b = z < 0 ? b_lo : b_hi;
      Vector u(3);
      u[0] = g(rng);
      for (int j = 0; j < 2; ++j) u[j + 1] = b * X(j, 0) - P[j] + xi[j] + g(rng);
      Eigen::Index d;
      u.maxCoeff(&d);
      counts[d] += 1;
      inds.push_back({m, vec({z}), static_cast<int>(d)});
    }
    if ((counts.array() == 0).any()) counts.setOnes();  // observed shares are unused by bunching
    markets.emplace_back(m, X, P, Matrix(2, 0), SimplexVector(counts / counts.sum()));
  }
  return validate_dataset(markets, inds);
}

TEST(Bunching, SingleRegionEqualsPooledEstimate) {
  MisspecConfig cfg;
  cfg.M = 20;
  cfg.N = 300;
  SimulatedMarkets sim = gen_misspec(cfg, 3);
  BunchingSpec one = BunchingSpec::cuts(1, 0, {});
  auto regions = estimate_bunching(sim.dataset, one, name_moments(), OptimizerConfig{});
  ASSERT_EQ(regions.size(), 1u);
  std::vector<SimplexVector> shares;
  for (const auto& mk : sim.dataset.markets()) shares.push_back(mk.observed_shares);
  EstimationResult pooled =
      estimate_name_from_shares(sim.dataset, shares, median_covariates(sim.dataset), name_moments(), OptimizerConfig{});
  EXPECT_EQ(regions[0].theta.alpha, pooled.theta.alpha);
  EXPECT_EQ(regions[0].theta.beta, pooled.theta.beta);
}

TEST(Bunching, PiecewiseConstantTruth) {
  std::vector<double> a_lo, a_hi, b_lo, b_hi;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    Dataset ds = piecewise_dataset(0.5, 2.0, seed);
    auto r = estimate_bunching(ds, BunchingSpec::cuts(1, 0, {0.0}), name_moments(), OptimizerConfig{});
    ASSERT_EQ(r.size(), 2u);
    a_lo.push_back(r[0].theta.alpha);
    a_hi.push_back(r[1].theta.alpha);
    b_lo.push_back(r[0].theta.beta[0]);
    b_hi.push_back(r[1].theta.beta[0]);
  }
  auto check = [](const std::vector<double>& v, double truth) {
    double mean = 0, var = 0;
    for (double x : v) mean += x / v.size();
    for (double x : v) var += (x - mean) * (x - mean) / (v.size() - 1);
    const double se = std::sqrt(var / v.size());
    // floor on the SE guards against a degenerate spread
    EXPECT_LT(std::abs(mean - truth), 2.0 * std::max(se, 0.02)) << "mean " << mean << " se " << se;
  };
  check(a_lo, 1.0);
  check(a_hi, 1.0);
  check(b_lo, 0.5);
  check(b_hi, 2.0);
}

TEST(Bunching, QuantileSplitIsDiscontinuous) {
  MisspecConfig cfg;
  SimulatedMarkets sim = gen_misspec(cfg, 4);
  BunchingSpec spec = BunchingSpec::quantile_cuts(sim.dataset, 0, 2);
  ASSERT_EQ(spec.regions.size(), 2u);
  auto r = estimate_bunching(sim.dataset, spec, name_moments(), OptimizerConfig{});
  // region averages of beta(Z): about 1.1 below the median and 1.9 above,
  // while beta at the cut is 1.0
  EXPECT_GT(r[1].theta.beta[0] - r[0].theta.beta[0], 0.3);
  EXPECT_GT(r[0].theta.beta[0], cfg.beta(0.0) - 0.2);
}

TEST(Bunching, Errors) {
  MisspecConfig cfg;
  cfg.M = 3;
  cfg.N = 50;
  SimulatedMarkets sim = gen_misspec(cfg, 3);
  // a region beyond the data holds nobody
  EXPECT_THROW(estimate_bunching(sim.dataset, BunchingSpec::cuts(1, 0, {50.0}), name_moments(), OptimizerConfig{}),
               DataError);
  BunchingSpec gap{{Box{vec({0.0}), vec({1.0})}}};
  EXPECT_THROW(estimate_bunching(sim.dataset, gap, name_moments(), OptimizerConfig{}), DataError);
  EXPECT_THROW(estimate_bunching(sim.dataset, BunchingSpec{}, name_moments(), OptimizerConfig{}), DataError);
}

}  // namespace
}  // namespace namedemand
