#pragma once

#include <ostream>
#include <vector>

#include "namedemand/estimators.hpp"
#include "namedemand/first_stage.hpp"
#include "namedemand/types.hpp"

namespace namedemand {

/// Recovered support. Variable indices are 0-based.
struct SupportEstimate {
  std::vector<int> market_ids;
  std::vector<std::vector<int>> per_market;
  std::vector<int> support;  // sorted union of per_market
  Matrix scores;             // M x p
  Vector thresholds;         // length M

  bool empty() const { return support.empty(); }
};

// |sum_i d_i z_i| / sqrt(V N) with V the sample variance of d_i z_i; 0 when V = 0.
double score(const Vector& d, const Vector& zu);

// sqrt(2 (ln p + ln N)).
double threshold(int p, Eigen::Index N);

// Scores of every column of Z for one market; d is "chose an inside good".
Vector score_market(const Matrix& Z, const std::vector<int>& choices);

// Variables with score >= threshold.
std::vector<int> select_variables(const Vector& scores, double cut);

SupportEstimate recover_support(const Dataset& dataset, int threads = 1);

struct SparseNameOptions {
  KernelSpec kernel;
  double lambda = 1e-2;
  std::optional<Vector> z0;  // in the projected coordinates; median by default
  NameOptions name;
};

/// Projects every Z onto the recovered support and runs NAME there.
EstimationResult name_on_support(const Dataset& dataset, const SupportEstimate& support,
                                 const MomentSpec& moment_spec, const OptimizerConfig& optimizer,
                                 const SparseNameOptions& options = {});

// Columns market, variable, score, threshold, selected.
void write_support_diagnostics(std::ostream& out, const SupportEstimate& support);

enum class RecoveryOutcome { kExact, kOver1, kOver2, kOver3Plus, kUnder1, kUnder2, kUnder3Plus, kOther };

std::string to_string(RecoveryOutcome outcome);
RecoveryOutcome classify_recovery(const std::vector<int>& truth, const std::vector<int>& estimate);

}  // namespace namedemand
