#include "namedemand/first_stage.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace namedemand {

double median_pairwise_distance(const Matrix& Z) {
  const Eigen::Index n = Z.rows();
  if (n < 2) return 1.0;
  // Squared distances share the ordering; sqrt only the middle ones.
  const Matrix Zt = Z.transpose();
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) d.push_back((Zt.col(i) - Zt.col(j)).squaredNorm());
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  double med = std::sqrt(d[mid]);
  if (d.size() % 2 == 0) {
    med = 0.5 * (med + std::sqrt(*std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid))));
  }
  return med > 0.0 ? med : 1.0;
}

Matrix gaussian_kernel(const Matrix& A, const Matrix& B, double bandwidth) {
  const double scale = -0.5 / (bandwidth * bandwidth);
  const Vector a2 = A.rowwise().squaredNorm();
  const Vector b2 = B.rowwise().squaredNorm();
  Matrix K(A.rows(), B.rows());
  K.noalias() = A * B.transpose();
  // coefficient-wise, so evaluating in place is safe
  K = ((((-2.0 * K).colwise() + a2).rowwise() + b2.transpose()).array().max(0.0) * scale).exp().matrix();
  return K;
}

Vector MarketPredictor::predict_raw(const Vector& z) const {
  if (z.size() != train_Z.cols()) throw DataError("prediction point has wrong dimension");
  const Matrix k = gaussian_kernel(z.transpose(), train_Z, bandwidth);
  return mean + (k * dual).transpose();
}

Matrix MarketPredictor::predict_raw_batch(const Matrix& Zq) const {
  if (Zq.cols() != train_Z.cols()) throw DataError("prediction points have wrong dimension");
  Matrix out = gaussian_kernel(Zq, train_Z, bandwidth) * dual;
  out.rowwise() += mean.transpose();
  return out;
}

SimplexVector project_to_simplex(const Vector& raw) {
  Vector p = raw.cwiseMax(0.0).cwiseMin(1.0);
  const double total = p.sum();
  if (!(total > 0.0)) return SimplexVector(Vector::Constant(raw.size(), 1.0 / raw.size()));
  p /= total;
  p /= p.sum();
  return SimplexVector(std::move(p));
}

MarketPredictor fit_market(int market_id, const Matrix& Z, std::span<const int> choices,
                           int num_goods, const KernelSpec& kernel, double lambda) {
  const Eigen::Index n = Z.rows();
  if (n < 1 || static_cast<std::size_t>(n) != choices.size()) {
    throw DataError("first stage needs at least one individual per market");
  }
  if (!(lambda > 0.0)) throw DataError("ridge penalty must be positive");

  MarketPredictor mp;
  mp.market_id = market_id;
  mp.num_goods = num_goods;
  mp.train_Z = Z;
  mp.bandwidth = kernel.bandwidth > 0.0 ? kernel.bandwidth : median_pairwise_distance(Z);

  Matrix Y = Matrix::Zero(n, num_goods + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int d = choices[static_cast<std::size_t>(i)];
    if (d < 0 || d > num_goods) throw DataError("choice index out of range");
    Y(i, d) = 1.0;
  }
  mp.mean = Y.colwise().mean().transpose();
  Y.rowwise() -= mp.mean.transpose();

  // lower triangle only; LLT reads nothing else
  const double scale = -0.5 / (mp.bandwidth * mp.bandwidth);
  const Vector z2 = Z.rowwise().squaredNorm();
  Matrix K(n, n);
  K.triangularView<Eigen::Lower>().setZero();
  K.selfadjointView<Eigen::Lower>().rankUpdate(Z);
  for (Eigen::Index j = 0; j < n; ++j) {
    auto col = K.col(j).tail(n - j).array();
    col = ((z2.tail(n - j).array() + z2[j] - 2.0 * col).max(0.0) * scale).exp();
  }
  K.diagonal().array() += lambda;
  // Gaussian kernel entries lie in [0,1], so the spectrum of K + lambda I is
  // inside [lambda, n + lambda]; estimate rcond only when that bound is weak.
  const double eps = std::numeric_limits<double>::epsilon();
  Eigen::LLT<Eigen::Ref<Matrix>> llt(K);
  const bool bounded = lambda / (static_cast<double>(n) + lambda) > 1e3 * eps;
  const double rcond = llt.info() != Eigen::Success ? 0.0 : bounded ? 1.0 : llt.rcond();
  if (llt.info() != Eigen::Success || !(rcond > eps)) {
    std::ostringstream os;
    os << "kernel system is numerically singular in market " << market_id
       << " (lambda=" << lambda << ", reciprocal condition estimate " << rcond << ")";
    throw NumericalError(os.str());
  }
  mp.dual = llt.solve(Y);
  return mp;
}

SharePredictor::SharePredictor(std::vector<MarketPredictor> markets, KernelSpec kernel,
                               double lambda)
    : markets_(std::move(markets)), kernel_(kernel), lambda_(lambda) {}

SharePredictor SharePredictor::fit(const Dataset& dataset, const KernelSpec& kernel,
                                   double lambda) {
  std::vector<MarketPredictor> fitted;
  fitted.reserve(dataset.num_markets());
  for (std::size_t m = 0; m < dataset.num_markets(); ++m) {
    const auto& s = dataset.sample(m);
    fitted.push_back(fit_market(dataset.market(m).market_id, s.Z, s.choices, dataset.num_goods(),
                                kernel, lambda));
  }
  return SharePredictor(std::move(fitted), kernel, lambda);
}

const MarketPredictor& SharePredictor::market(int market_id) const {
  for (const auto& mp : markets_)
    if (mp.market_id == market_id) return mp;
  throw DataError("predictor has no fit for market " + std::to_string(market_id));
}

SimplexVector SharePredictor::predict(const Vector& z, int market_id) const {
  return project_to_simplex(market(market_id).predict_raw(z));
}

Matrix SharePredictor::predict_batch(const Matrix& Zq, int market_id) const {
  Matrix raw = market(market_id).predict_raw_batch(Zq);
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    raw.row(i) = project_to_simplex(raw.row(i).transpose()).probs().transpose();
  }
  return raw;
}

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index cols_if_empty) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Matrix(0, cols_if_empty);
  const auto cols = static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j.at(i).size()) != cols) throw DataError("ragged matrix in JSON");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
  }
  return m;
}

}  // namespace

nlohmann::json SharePredictor::to_json() const {
  nlohmann::json out;
  out["kernel"] = {{"type", "gaussian"}, {"bandwidth", kernel_.bandwidth}};
  out["lambda"] = lambda_;
  nlohmann::json ms = nlohmann::json::array();
  for (const auto& mp : markets_) {
    ms.push_back({{"market", mp.market_id},
                  {"goods", mp.num_goods},
                  {"bandwidth", mp.bandwidth},
                  {"mean", std::vector<double>(mp.mean.data(), mp.mean.data() + mp.mean.size())},
                  {"train_Z", matrix_to_json(mp.train_Z)},
                  {"dual", matrix_to_json(mp.dual)}});
  }
  out["markets"] = std::move(ms);
  return out;
}

SharePredictor SharePredictor::from_json(const nlohmann::json& j) {
  KernelSpec kernel;
  if (j.at("kernel").at("type").get<std::string>() != "gaussian") {
    throw DataError("unsupported kernel type in predictor");
  }
  kernel.bandwidth = j.at("kernel").at("bandwidth").get<double>();
  std::vector<MarketPredictor> markets;
  for (const auto& mj : j.at("markets")) {
    MarketPredictor mp;
    mp.market_id = mj.at("market").get<int>();
    mp.num_goods = mj.at("goods").get<int>();
    mp.bandwidth = mj.at("bandwidth").get<double>();
    const auto mean = mj.at("mean").get<std::vector<double>>();
    mp.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    mp.train_Z = matrix_from_json(mj.at("train_Z"), 0);
    mp.dual = matrix_from_json(mj.at("dual"), mp.num_goods + 1);
    markets.push_back(std::move(mp));
  }
  return SharePredictor(std::move(markets), kernel, j.at("lambda").get<double>());
}

double select_lambda(const Dataset& dataset, const KernelSpec& kernel,
                     std::span<const double> grid, int folds) {
  if (grid.empty()) throw DataError("lambda grid is empty");
  if (grid.size() == 1) return grid.front();
  const int J = dataset.num_goods();
  std::vector<double> error(grid.size(), 0.0);

  for (std::size_t m = 0; m < dataset.num_markets(); ++m) {
    const auto& s = dataset.sample(m);
    const Eigen::Index n = s.size();
    if (n < 2) continue;
    const int k = static_cast<int>(std::min<Eigen::Index>(folds, n));
    for (int f = 0; f < k; ++f) {
      std::vector<Eigen::Index> train, test;
      for (Eigen::Index i = 0; i < n; ++i) (i % k == f ? test : train).push_back(i);
      Matrix Ztr(static_cast<Eigen::Index>(train.size()), s.Z.cols());
      std::vector<int> dtr(train.size());
      for (std::size_t i = 0; i < train.size(); ++i) {
        Ztr.row(static_cast<Eigen::Index>(i)) = s.Z.row(train[i]);
        dtr[i] = s.choices[static_cast<std::size_t>(train[i])];
      }
      Matrix Zte(static_cast<Eigen::Index>(test.size()), s.Z.cols());
      Matrix Yte = Matrix::Zero(static_cast<Eigen::Index>(test.size()), J + 1);
      for (std::size_t i = 0; i < test.size(); ++i) {
        Zte.row(static_cast<Eigen::Index>(i)) = s.Z.row(test[i]);
        Yte(static_cast<Eigen::Index>(i), s.choices[static_cast<std::size_t>(test[i])]) = 1.0;
      }
      for (std::size_t g = 0; g < grid.size(); ++g) {
        const MarketPredictor mp = fit_market(dataset.market(m).market_id, Ztr, dtr, J, kernel, grid[g]);
        error[g] += (mp.predict_raw_batch(Zte) - Yte).squaredNorm();
      }
    }
  }

  const double best = *std::min_element(error.begin(), error.end());
  const double mid = 0.5 * static_cast<double>(grid.size() - 1);
  std::size_t choice = grid.size();
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (error[g] != best) continue;
    if (choice == grid.size() ||
        std::abs(static_cast<double>(g) - mid) < std::abs(static_cast<double>(choice) - mid)) {
      choice = g;
    }
  }
  return grid[choice];
}

}  // namespace namedemand
