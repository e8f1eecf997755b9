#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "namedemand/types.hpp"

namespace namedemand {

/// Misspecification experiment: one characteristic with beta(Z) quadratic in
/// a scalar Z, exogenous prices, EV1 utility noise.
struct MisspecConfig {
  int M = 50;
  int N = 1000;
  int J = 2;
  Vector gamma = (Vector(3) << 1.0, 0.5, 0.5).finished();
  double alpha = 1.0;
  double xi_sd = 0.5;
  double price_shift = 0.5;  // P = |N(0,1)| + price_shift
  int B = 50;
  std::uint64_t seed = 1;
  int max_redraws = 1000;    // per market, when some good has no buyer

  void validate() const;
  double beta(double z) const;
};

struct SimulatedMarkets {
  Dataset dataset;
  Matrix xi;  // true M x J
};

SimulatedMarkets gen_misspec(const MisspecConfig& config, std::uint64_t seed);

// Conditional logit probabilities of an individual with covariate z.
SimplexVector true_shares_at(const MisspecConfig& config, const MarketData& market,
                             const Vector& xi_row, double z);
std::vector<SimplexVector> true_shares_at(const MisspecConfig& config,
                                          const SimulatedMarkets& data, double z);

/// Sparse design: J = 1, p covariates of which p0 can matter; in every market
/// `active` of the first p0 are drawn and enter as (sum of them) * X_jm.
struct SparseConfig {
  int M = 50;
  int N = 1000;
  int J = 1;
  int p = 1000;
  int p0 = 2;
  int active = 1;
  double alpha = 0.0;        // price coefficient; 0 reproduces the pure design
  double price_shift = 0.5;
  int B = 200;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SparseMarket {
  int market_id = 0;
  Vector X;  // length J
  Vector P;
  std::vector<int> active;  // sorted, 0-based
  Matrix Z;                 // N x p
  std::vector<int> choices;
};

// Market m of a replication; independent streams per market.
SparseMarket gen_sparse_market(const SparseConfig& config, std::uint64_t seed, int m);

struct SparseData {
  Dataset dataset;
  std::vector<std::vector<int>> active;  // per market
  std::vector<int> support;              // union of active sets
};

SparseData gen_sparse(const SparseConfig& config, std::uint64_t seed);

nlohmann::json to_json(const MisspecConfig& config);
nlohmann::json to_json(const SparseConfig& config);
// Missing fields keep their defaults; unknown fields are rejected.
MisspecConfig misspec_config_from_json(const nlohmann::json& j);
SparseConfig sparse_config_from_json(const nlohmann::json& j);

}  // namespace namedemand
