#include <gtest/gtest.h>

#include "namedemand/moments.hpp"
#include "namedemand/simulation.hpp"
#include "test_util.hpp"

namespace namedemand {
namespace {

using testing::vec;

Dataset tiny_dataset() {
  // M=2, J=1, N=3 per market
  std::vector<MarketData> markets = {
      MarketData(0, (Matrix(1, 1) << 1.0).finished(), vec({1.0}), Matrix(1, 0), testing::simplex({0.4, 0.6})),
      MarketData(1, (Matrix(1, 1) << 3.0).finished(), vec({2.0}), Matrix(1, 0), testing::simplex({0.7, 0.3}))};
  std::vector<IndividualData> inds = {{0, vec({0.1}), 1}, {0, vec({0.5}), 0}, {0, vec({-0.2}), 1},
                                      {1, vec({1.0}), 0}, {1, vec({0.0}), 1}, {1, vec({0.3}), 0}};
  return validate_dataset(markets, inds);
}

TEST(Moments, ZeroXiGivesZeroCovariances) {
  Dataset ds = tiny_dataset();
  auto mv = build_moments(ds, XiMatrix(Matrix::Zero(2, 1)), nullptr, {MomentId::kCovXXi, MomentId::kCovPXi});
  ASSERT_EQ(mv.size(), 2u);
  EXPECT_EQ(mv[0].sample, 0.0);
  EXPECT_EQ(mv[1].sample, 0.0);
  EXPECT_EQ(mv[0].target, 0.0);
}

TEST(Moments, HandComputedCovariance) {
  Dataset ds = tiny_dataset();
  // cells: X = (1, 3), xi = (0.5, -0.25); means 2, 0.125
  // cov = ((-1)(0.375) + (1)(-0.375)) / 1 = -0.75
  auto mv = build_moments(ds, XiMatrix((Matrix(2, 1) << 0.5, -0.25).finished()), nullptr,
                          {MomentId::kCovXXi}, false);
  EXPECT_DOUBLE_EQ(mv[0].sample, -0.75);
  EXPECT_EQ(mv[0].identifier, "cov_x_xi[0]");
  // scaled version divides by sd(X) = sqrt(2)
  auto scaled = build_moments(ds, XiMatrix((Matrix(2, 1) << 0.5, -0.25).finished()), nullptr,
                              {MomentId::kCovXXi});
  EXPECT_NEAR(scaled[0].sample, -0.75 / std::sqrt(2.0), 1e-15);
}

TEST(Moments, EmpiricalProbabilitiesZeroMicroMoments) {
  SimulatedMarkets sim = gen_misspec([] {
    MisspecConfig c;
    c.M = 4;
    c.N = 100;
    return c;
  }(), 3);
  const Dataset& ds = sim.dataset;
  IndividualProbabilities one_hot = [&](std::size_t m) {
    const auto& s = ds.sample(m);
    Matrix pr = Matrix::Zero(s.size(), ds.num_goods() + 1);
    for (Eigen::Index i = 0; i < s.size(); ++i) pr(i, s.choices[static_cast<std::size_t>(i)]) = 1.0;
    return pr;
  };
  auto mv = build_moments(ds, XiMatrix(sim.xi), &one_hot,
                          {MomentId::kCovZChoiceX, MomentId::kCovZ2ChoiceX});
  ASSERT_EQ(mv.size(), 2u);
  EXPECT_NEAR(mv[0].sample, 0.0, 1e-15);
  EXPECT_NEAR(mv[1].sample, 0.0, 1e-15);
}

TEST(Moments, MicroMomentHandComputed) {
  Dataset ds = tiny_dataset();
  // Every individual predicted to buy with probability 0.5.
  IndividualProbabilities half = [](std::size_t) { return Matrix::Constant(3, 2, 0.5); };
  auto mv = build_moments(ds, XiMatrix(Matrix::Zero(2, 1)), &half, {MomentId::kCovZChoiceX}, false);
  // resid = X_d - 0.5 X: market 0 (X=1): 0.5, -0.5, 0.5; market 1 (X=3): -1.5, 1.5, -1.5
  Vector z = vec({0.1, 0.5, -0.2, 1.0, 0.0, 0.3});
  Vector r = vec({0.5, -0.5, 0.5, -1.5, 1.5, -1.5});
  const double zm = z.mean(), rm = r.mean();
  double cov = 0.0;
  for (int i = 0; i < 6; ++i) cov += (z[i] - zm) * (r[i] - rm);
  EXPECT_NEAR(mv[0].sample, cov / 5.0, 1e-15);
}

TEST(Moments, MissingPredictorIsAnError) {
  Dataset ds = tiny_dataset();
  try {
    build_moments(ds, XiMatrix(Matrix::Zero(2, 1)), nullptr, {MomentId::kCovZChoiceX});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("predictor"), std::string::npos);
  }
  EXPECT_THROW(build_moments(ds, XiMatrix(Matrix::Zero(2, 1)), nullptr, {MomentId::kCovWXi}), DataError);
  EXPECT_THROW(build_moments(ds, XiMatrix(Matrix::Zero(3, 1)), nullptr, {MomentId::kCovXXi}), DataError);
}

TEST(Moments, InstrumentMoment) {
  std::vector<MarketData> markets = {
      MarketData(0, Matrix::Ones(2, 1), vec({1, 2}), (Matrix(2, 1) << 1, 2).finished(),
                 testing::simplex({0.2, 0.3, 0.5})),
      MarketData(1, Matrix::Ones(2, 1), vec({1, 2}), (Matrix(2, 1) << 3, 5).finished(),
                 testing::simplex({0.2, 0.3, 0.5}))};
  Dataset ds = validate_dataset(markets, {});
  Matrix xi(2, 2);
  xi << 1, 0, 0, 1;
  auto mv = build_moments(ds, XiMatrix(xi), nullptr, {MomentId::kCovWXi}, false);
  EXPECT_NEAR(mv[0].sample, sample_covariance(vec({1, 2, 3, 5}), vec({1, 0, 0, 1})), 1e-15);
}

TEST(MdLoss, Examples) {
  EXPECT_EQ(md_loss(Vector::Zero(3), Matrix::Identity(3, 3)), 0.0);
  EXPECT_NEAR(md_loss(vec({0.1, -0.2}), Matrix::Identity(2, 2)), 0.05, 1e-15);
  EXPECT_NEAR(md_loss(vec({0.1, -0.2}), Matrix()), 0.05, 1e-15);
  AggregateBlock agg{vec({3.0}), Matrix(), 0.0};
  EXPECT_EQ(md_loss(vec({0.1, -0.2}), Matrix(), agg), md_loss(vec({0.1, -0.2}), Matrix()));
  agg.h = 2.0;
  EXPECT_NEAR(md_loss(vec({0.1, -0.2}), Matrix(), agg), 0.05 + 18.0, 1e-12);
  Matrix R(2, 2);
  R << 2, 0.5, 0.5, 1;
  EXPECT_NEAR(md_loss(vec({1.0, 2.0}), R), 2 + 2 * 0.5 * 2 + 4, 1e-15);
  EXPECT_THROW(md_loss(vec({1.0, 2.0}), Matrix::Identity(3, 3)), DataError);
}

TEST(MdLoss, FromMomentValues) {
  std::vector<MomentValue> mv = {{MomentId::kCovXXi, "a", 0.3, 0.1}, {MomentId::kCovPXi, "b", -0.2, 0.0}};
  EXPECT_NEAR(md_loss(mv, Matrix()), 0.04 + 0.04, 1e-15);
}

TEST(SampleCovariance, Basics) {
  EXPECT_DOUBLE_EQ(sample_covariance(vec({1, 2, 3}), vec({2, 4, 6})), 2.0);
  EXPECT_EQ(sample_covariance(vec({1}), vec({2})), 0.0);
  EXPECT_THROW(sample_covariance(vec({1, 2}), vec({1})), DataError);
}

}  // namespace
}  // namespace namedemand
