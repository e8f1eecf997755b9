#pragma once

#include <optional>
#include <string>
#include <vector>

#include "namedemand/first_stage.hpp"
#include "namedemand/logit.hpp"
#include "namedemand/moments.hpp"
#include "namedemand/optimizer.hpp"
#include "namedemand/types.hpp"

namespace namedemand {

struct NameOptions {
  // Estimate random-coefficient scales at z0 (inversion by contraction).
  bool random_coefficients = false;
  int quadrature_draws = kDefaultQuadratureDraws;
  std::uint64_t quadrature_seed = 7;
  ContractionOptions contraction;
  // Starting point; defaults to beta = 0, alpha = 0, sigma = 0.5.
  std::optional<ThetaPoint> start;
};

/// NAME second stage from shares already predicted at z0 (one simplex per
/// market, in dataset order). Also serves as the known-share benchmark when
/// the true shares are passed in.
EstimationResult estimate_name_from_shares(const Dataset& dataset,
                                           const std::vector<SimplexVector>& shares_at_z0,
                                           const Vector& z0, const MomentSpec& moment_spec,
                                           const OptimizerConfig& optimizer,
                                           const NameOptions& options = {},
                                           const IndividualProbabilities* individual_probs = nullptr);

/// Full NAME: predicts shares at z0 once, then minimizes the moment loss
/// over theta with shares inverted market by market.
EstimationResult estimate_name(const Dataset& dataset, const SharePredictor& predictor,
                               const Vector& z0, const MomentSpec& moment_spec,
                               const OptimizerConfig& optimizer, const NameOptions& options = {});

// Raises entries below floor to floor and renormalizes. estimate_name applies
// it with floor = 0.5 / N_m so that boundary predictions stay invertible.
SimplexVector floor_shares(const SimplexVector& shares, double floor);

// Predicted shares of every market at z.
std::vector<SimplexVector> predict_all(const Dataset& dataset, const SharePredictor& predictor,
                                       const Vector& z);

/// Monomial in one covariate; power 0 is the constant term.
struct BasisTerm {
  int covariate = 0;
  int power = 0;
};

/// beta_c(Z) = sum_t gamma_ct * b_t(Z) for every characteristic c.
struct ParametricSpec {
  std::vector<std::vector<BasisTerm>> beta_terms;  // one list per characteristic
  Vector initial;                                  // gammas then alpha; empty means zeros

  Eigen::Index num_params() const;
  // beta(z) for a parameter vector laid out as [gammas..., alpha].
  Vector beta_at(const Vector& params, const Vector& z) const;
  std::string describe() const;

  // gamma0 + gamma1 z + gamma2 z^2 on covariate 0.
  static ParametricSpec quadratic();
  // gamma0 + gamma2 z^2: drops the linear term.
  static ParametricSpec quadratic_without_linear();
  // Parses "1,z,z2" style lists ("z3" = cube, "z1_2" = covariate 1 squared).
  static ParametricSpec parse(const std::string& text, int characteristics = 1);
};

struct ParametricOptions {
  ContractionOptions contraction;
};

/// Nested fixed point: every loss evaluation inverts the observed aggregate
/// shares at the current gamma, with the individuals' own covariates as
/// integration nodes.
EstimationResult estimate_parametric(const Dataset& dataset, const ParametricSpec& spec,
                                     const MomentSpec& moment_spec,
                                     const OptimizerConfig& optimizer,
                                     const ParametricOptions& options = {});

/// Axis-aligned box [lower, upper) per coordinate; infinite bounds allowed.
struct Box {
  Vector lower;
  Vector upper;
  bool contains(const Vector& z) const;
};

struct BunchingSpec {
  std::vector<Box> regions;

  // K regions cut at pooled quantiles of one covariate.
  static BunchingSpec quantile_cuts(const Dataset& dataset, int covariate, int regions);
  // Regions cut at explicit points of one covariate.
  static BunchingSpec cuts(int covariates, int covariate, const std::vector<double>& points);
};

/// Separate homogeneous logit per region, with region shares recounted from
/// the individuals inside it. Markets where some good has no chooser inside
/// the region are skipped for that region.
std::vector<EstimationResult> estimate_bunching(const Dataset& dataset, const BunchingSpec& spec,
                                                const MomentSpec& moment_spec,
                                                const OptimizerConfig& optimizer);

// Default moment lists used by the misspecification experiment.
MomentSpec name_moments();            // cov(X, xi), cov(P, xi)
MomentSpec oracle_moments();          // + Z and Z^2 micro moments
MomentSpec misspecified_moments();    // + Z^2 micro moment

}  // namespace namedemand
