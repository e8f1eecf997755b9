#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "namedemand/types.hpp"

namespace namedemand {

/// Integration rule for the random-coefficient draws nu (R x k) with
/// nonnegative weights summing to one.
struct QuadratureRule {
  Matrix nodes;
  Vector weights;
  std::uint64_t seed = 0;

  QuadratureRule(Matrix nodes, Vector weights, std::uint64_t seed = 0);

  // R pseudo-random standard-normal draws with equal weights.
  static QuadratureRule normal_draws(int draws, int dims, std::uint64_t seed);
  // Single node at the origin; collapses random coefficients to plain logit.
  static QuadratureRule degenerate(int dims);

  Eigen::Index size() const { return nodes.rows(); }
};

inline constexpr int kDefaultQuadratureDraws = 200;

struct ContractionOptions {
  double tol = 1e-12;
  int max_iter = 5000;
  // Plain iterations before switching to safeguarded Newton steps; slow
  // contraction (small outside share) needs them. Negative disables Newton.
  int newton_after = 100;
  bool record_history = false;
};

struct ContractionResult {
  Vector delta;
  Vector xi;  // filled by blp_contraction; empty for the raw solver
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  std::vector<double> residual_history;
};

// beta'X_j - alpha P_j + xi_j for every inside good.
Vector mean_utility(const ThetaPoint& theta, const Vector& xi_row, const MarketData& market);

// Plain-logit simplex for a vector of inside-good utility indices.
SimplexVector logit_from_utilities(const Vector& delta);

SimplexVector logit_shares(const ThetaPoint& theta, const Vector& xi_row, const MarketData& market,
                           const std::optional<Vector>& z_shift = std::nullopt);

// delta_j = log(s_j / s_0). Throws DataError for boundary shares.
Vector invert_logit(const SimplexVector& shares);

/// Mixture of logits: shares averaged over individual utility deviations
/// (R x J) with weights. This is the common kernel behind random
/// coefficients and observed-demographic heterogeneity.
class MixedLogit {
 public:
  MixedLogit(const Matrix& deviations, const Vector& weights);

  // Inside-good shares (length J) at mean utilities delta.
  Vector inside_shares(const Vector& delta) const;
  SimplexVector shares(const Vector& delta) const;
  // Per-node choice probabilities including the outside good (R x (J+1)).
  Matrix node_probabilities(const Vector& delta) const;
  // d inside_shares / d delta (J x J).
  Matrix jacobian(const Vector& delta) const;

  Eigen::Index nodes() const { return deviations_.rows(); }
  Eigen::Index goods() const { return deviations_.cols(); }

 private:
  Vector stable_inside_shares(const Vector& delta) const;

  Matrix deviations_;
  Matrix exp_deviations_;
  Vector weights_;
  bool exp_ok_ = true;
};

/// Fixed point delta <- delta + log(target) - log(implied). Stops when the
/// sup-norm log-share residual is below tol. Does not throw on max_iter;
/// inspect converged.
ContractionResult contract_shares(const SimplexVector& target, const MixedLogit& model,
                                  const Vector& start, const ContractionOptions& options = {});

// Individual utility deviations sum_k sigma_k nu_rk X_jk (R x J).
Matrix random_coefficient_deviations(const ThetaPoint& theta, const MarketData& market,
                                     const QuadratureRule& quad);

SimplexVector rc_shares(const ThetaPoint& theta, const Vector& xi_row, const MarketData& market,
                        const QuadratureRule& quad,
                        const std::optional<Vector>& z_shift = std::nullopt);

// Inverts target shares under the random-coefficient model. xi is reported
// under the normalization that the outside good has mean utility zero.
ContractionResult blp_contraction(const SimplexVector& target, const ThetaPoint& theta,
                                  const MarketData& market, const QuadratureRule& quad,
                                  const ContractionOptions& options = {});

}  // namespace namedemand
