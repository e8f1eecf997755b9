#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "namedemand/types.hpp"

namespace namedemand {

struct KernelSpec {
  enum class Type { kGaussian };
  Type type = Type::kGaussian;
  // <= 0 selects the median pairwise distance of the training covariates.
  double bandwidth = 0.0;
};

// Median Euclidean distance over all pairs of rows; 1 when undefined.
double median_pairwise_distance(const Matrix& Z);

// exp(-|a-b|^2 / (2 h^2)) for every pair of rows.
Matrix gaussian_kernel(const Matrix& A, const Matrix& B, double bandwidth);

/// Kernel ridge fit of the J+1 choice indicators of one market. Targets are
/// centered at their training means, so the raw predictions always sum to one.
struct MarketPredictor {
  int market_id = 0;
  int num_goods = 0;
  double bandwidth = 1.0;
  Matrix train_Z;   // N x p
  Matrix dual;      // N x (J+1)
  Vector mean;      // J+1 training frequencies

  // Raw regression outputs (not clamped).
  Vector predict_raw(const Vector& z) const;
  // Raw outputs for every row of Zq (n x (J+1)).
  Matrix predict_raw_batch(const Matrix& Zq) const;
};

// Clamp to [0,1], then renormalize. Falls back to uniform if all clamp to 0.
SimplexVector project_to_simplex(const Vector& raw);

MarketPredictor fit_market(int market_id, const Matrix& Z, std::span<const int> choices,
                           int num_goods, const KernelSpec& kernel, double lambda);

/// Per-market fitted predictor of P(d = j | Z = z, market m).
class SharePredictor {
 public:
  SharePredictor() = default;
  SharePredictor(std::vector<MarketPredictor> markets, KernelSpec kernel, double lambda);

  static SharePredictor fit(const Dataset& dataset, const KernelSpec& kernel, double lambda);

  SimplexVector predict(const Vector& z, int market_id) const;
  // Simplex-projected predictions at every row of Zq, as an n x (J+1) matrix.
  Matrix predict_batch(const Matrix& Zq, int market_id) const;

  const MarketPredictor& market(int market_id) const;
  const std::vector<MarketPredictor>& markets() const { return markets_; }
  const KernelSpec& kernel() const { return kernel_; }
  double lambda() const { return lambda_; }

  nlohmann::json to_json() const;
  static SharePredictor from_json(const nlohmann::json& j);

 private:
  std::vector<MarketPredictor> markets_;
  KernelSpec kernel_;
  double lambda_ = 0.0;
};

/// 5-fold cross-validated choice of the ridge penalty, folds stratified by
/// market. Among exactly tied grid points the one closest to the grid
/// midpoint wins.
double select_lambda(const Dataset& dataset, const KernelSpec& kernel,
                     std::span<const double> grid, int folds = 5);

}  // namespace namedemand
