#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "namedemand/types.hpp"

namespace namedemand {

struct MomentValue {
  MomentId id;
  std::string identifier;  // e.g. "cov_x_xi[0]"
  double sample = 0.0;
  double target = 0.0;

  double deviation() const { return sample - target; }
};

// Choice probabilities (N_m x (J+1)) of the individuals of one market.
using IndividualProbabilities = std::function<Matrix(std::size_t market_index)>;

/// Precomputes the data-side pieces of the moment list so that repeated
/// evaluation inside an optimizer only touches xi and the implied
/// probabilities. Covariances use the n-1 denominator. When scaling is on,
/// each moment is divided by the standard deviations of its data
/// ingredients (never by those of xi).
class MomentBuilder {
 public:
  MomentBuilder(const Dataset& dataset, std::vector<MomentId> which, bool scale = true);

  // Deviations (sample - target) in list order.
  Vector evaluate(const Matrix& xi, const IndividualProbabilities* probs = nullptr) const;
  std::vector<MomentValue> build(const Matrix& xi, const IndividualProbabilities* probs = nullptr) const;

  bool needs_individual_probabilities() const { return needs_probs_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(labels_.size()); }
  const std::vector<std::string>& labels() const { return labels_; }

 private:
  const Dataset* dataset_;
  std::vector<MomentId> which_;
  std::vector<MomentId> expanded_ids_;
  std::vector<std::string> labels_;
  bool needs_probs_ = false;

  // Stacked (j,m) cells.
  Matrix cell_X_;
  Vector cell_P_;
  Matrix pooled_Z_;
  Matrix cell_W_;
  Vector scale_X_, scale_W_, scale_Z_, scale_Z2_;
  double scale_P_ = 1.0;
};

std::vector<MomentValue> build_moments(const Dataset& dataset, const XiMatrix& xi,
                                       const IndividualProbabilities* probs,
                                       const std::vector<MomentId>& which, bool scale = true);

// Sample covariance with the n-1 denominator.
double sample_covariance(const Vector& a, const Vector& b);

struct AggregateBlock {
  Vector G;   // aggregate moment deviations
  Matrix R0;  // weight; empty means identity
  double h = 0.0;
};

// H'RH (+ h G'R0G).
double md_loss(const Vector& deviations, const Matrix& R,
               const std::optional<AggregateBlock>& aggregate = std::nullopt);
double md_loss(const std::vector<MomentValue>& moments, const Matrix& R,
               const std::optional<AggregateBlock>& aggregate = std::nullopt);

}  // namespace namedemand
