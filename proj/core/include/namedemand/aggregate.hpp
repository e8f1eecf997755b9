#pragma once

#include <functional>
#include <vector>

#include "namedemand/first_stage.hpp"
#include "namedemand/moments.hpp"
#include "namedemand/optimizer.hpp"
#include "namedemand/types.hpp"

namespace namedemand {

/// Loss over K base points with an optional aggregate block:
///   L(theta) = (1/K) sum_k H_k' R_k H_k + h G' R0 G.
/// theta is laid out as [gamma_1..gamma_K, gamma'_1..gamma'_K]. H_k depends
/// on (gamma_k, gamma'_k) only; G depends on the gamma block only.
struct AggregateProblem {
  int K = 0;
  Eigen::Index gamma_dim = 1;
  Eigen::Index prime_dim = 0;
  std::function<Vector(std::size_t k, const Vector& gamma_k, const Vector& prime_k)> block_moments;
  std::vector<Matrix> R;  // per base point; empty entries mean identity
  std::function<Vector(const Vector& gamma)> aggregate;
  Matrix R0;              // empty means identity
  double h = 0.0;

  Eigen::Index num_params() const { return K * (gamma_dim + prime_dim); }
  Vector gamma(const Vector& theta) const { return theta.head(K * gamma_dim); }
  Vector gamma_k(const Vector& theta, std::size_t k) const;
  Vector prime_k(const Vector& theta, std::size_t k) const;
};

double aggregate_loss(const AggregateProblem& problem, const Vector& theta);

// gamma' block from (2/K) J_k' R_k H_k with J_k by central differences of H_k;
// gamma block by central differences of the full loss.
Vector block_gradient(const AggregateProblem& problem, const Vector& theta, double step = 1e-6);

/// NAME instance: base point k carries (alpha_k | beta_k); H_k are the NAME
/// moments at shares predicted at Z_k. G is the mean own-price elasticity
/// -alpha_k P_j (1 - s_jm(Z_k)) over all base points and cells minus a target.
AggregateProblem name_aggregate_problem(const Dataset& dataset,
                                        std::vector<std::vector<SimplexVector>> shares_per_base,
                                        const MomentSpec& moment_spec, double elasticity_target,
                                        double h);

AggregateProblem name_aggregate_problem(const Dataset& dataset, const SharePredictor& predictor,
                                        const std::vector<Vector>& base_points,
                                        const MomentSpec& moment_spec, double elasticity_target,
                                        double h);

// RMS gradient descent driven by block_gradient.
OptimizeResult minimize_aggregate(const AggregateProblem& problem, const Vector& theta0,
                                  const OptimizerConfig& cfg);

}  // namespace namedemand
