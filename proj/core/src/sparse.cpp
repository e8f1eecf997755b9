#include "namedemand/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>

#include "namedemand/parallel.hpp"

namespace namedemand {

double score(const Vector& d, const Vector& zu) {
  const Eigen::Index n = d.size();
  if (zu.size() != n) throw DataError("score inputs differ in length");
  if (n < 2) throw DataError("score needs at least two individuals");
  const Vector prod = d.cwiseProduct(zu);
  const double mean = prod.mean();
  const double var = (prod.array() - mean).square().sum() / static_cast<double>(n - 1);
  if (!(var > 0.0)) return 0.0;
  return std::abs(prod.sum()) / std::sqrt(var * static_cast<double>(n));
}

double threshold(int p, Eigen::Index N) {
  if (p < 1 || N < 1) throw DataError("threshold needs p, N >= 1");
  return std::sqrt(2.0 * (std::log(static_cast<double>(p)) + std::log(static_cast<double>(N))));
}

Vector score_market(const Matrix& Z, const std::vector<int>& choices) {
  const Eigen::Index n = Z.rows();
  if (static_cast<Eigen::Index>(choices.size()) != n) throw DataError("choices and Z differ in length");
  if (n < 2) throw DataError("score needs at least two individuals");
  // Running sums over buyers only: d is 0/1 so sum(dz) and sum((dz)^2) suffice.
  Vector s1 = Vector::Zero(Z.cols());
  Vector s2 = Vector::Zero(Z.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (choices[static_cast<std::size_t>(i)] == 0) continue;
    s1 += Z.row(i).transpose();
    s2 += Z.row(i).transpose().cwiseAbs2();
  }
  const double nn = static_cast<double>(n);
  Vector out(Z.cols());
  for (Eigen::Index u = 0; u < Z.cols(); ++u) {
    const double var = (s2[u] - s1[u] * s1[u] / nn) / (nn - 1.0);
    out[u] = var > 0.0 ? std::abs(s1[u]) / std::sqrt(var * nn) : 0.0;
  }
  return out;
}

std::vector<int> select_variables(const Vector& scores, double cut) {
  std::vector<int> out;
  for (Eigen::Index u = 0; u < scores.size(); ++u) {
    if (scores[u] >= cut) out.push_back(static_cast<int>(u));
  }
  return out;
}

SupportEstimate recover_support(const Dataset& dataset, int threads) {
  const std::size_t M = dataset.num_markets();
  const int p = dataset.num_covariates();
  if (!dataset.has_individuals() || p < 1) throw DataError("support recovery needs individual covariates");
  SupportEstimate est;
  est.scores.resize(static_cast<Eigen::Index>(M), p);
  est.thresholds.resize(static_cast<Eigen::Index>(M));
  est.per_market.resize(M);
  parallel_for(M, threads, [&](std::size_t m) {
    const auto& s = dataset.sample(m);
    const Vector sc = score_market(s.Z, s.choices);
    const double cut = threshold(p, s.size());
    est.scores.row(static_cast<Eigen::Index>(m)) = sc.transpose();
    est.thresholds[static_cast<Eigen::Index>(m)] = cut;
    est.per_market[m] = select_variables(sc, cut);
  });
  std::set<int> all;
  for (std::size_t m = 0; m < M; ++m) {
    est.market_ids.push_back(dataset.market(m).market_id);
    all.insert(est.per_market[m].begin(), est.per_market[m].end());
  }
  est.support.assign(all.begin(), all.end());
  return est;
}

EstimationResult name_on_support(const Dataset& dataset, const SupportEstimate& support,
                                 const MomentSpec& moment_spec, const OptimizerConfig& optimizer,
                                 const SparseNameOptions& options) {
  if (support.empty()) {
    throw DataError("recovered support is empty; inspect the score/threshold diagnostics");
  }
  const Dataset projected = project_covariates(dataset, support.support);
  const SharePredictor predictor = SharePredictor::fit(projected, options.kernel, options.lambda);
  const Vector z0 = options.z0 ? *options.z0 : median_covariates(projected);
  if (z0.size() != static_cast<Eigen::Index>(support.support.size())) {
    throw DataError("z0 must have one entry per recovered variable");
  }
  return estimate_name(projected, predictor, z0, moment_spec, optimizer, options.name);
}

void write_support_diagnostics(std::ostream& out, const SupportEstimate& support) {
  out << "market,variable,score,threshold,selected\n" << std::setprecision(17);
  for (Eigen::Index m = 0; m < support.scores.rows(); ++m) {
    const auto& chosen = support.per_market[static_cast<std::size_t>(m)];
    for (Eigen::Index u = 0; u < support.scores.cols(); ++u) {
      const bool sel = std::binary_search(chosen.begin(), chosen.end(), static_cast<int>(u));
      out << support.market_ids[static_cast<std::size_t>(m)] << "," << u << "," << support.scores(m, u)
          << "," << support.thresholds[m] << "," << (sel ? 1 : 0) << "\n";
    }
  }
}

std::string to_string(RecoveryOutcome outcome) {
  switch (outcome) {
    case RecoveryOutcome::kExact: return "exact";
    case RecoveryOutcome::kOver1: return "over_1";
    case RecoveryOutcome::kOver2: return "over_2";
    case RecoveryOutcome::kOver3Plus: return "over_3plus";
    case RecoveryOutcome::kUnder1: return "under_1";
    case RecoveryOutcome::kUnder2: return "under_2";
    case RecoveryOutcome::kUnder3Plus: return "under_3plus";
    case RecoveryOutcome::kOther: return "other";
  }
  return "other";
}

RecoveryOutcome classify_recovery(const std::vector<int>& truth, const std::vector<int>& estimate) {
  const std::set<int> t(truth.begin(), truth.end());
  const std::set<int> e(estimate.begin(), estimate.end());
  std::size_t missing = 0;
  std::size_t extra = 0;
  for (int u : t) missing += e.count(u) ? 0 : 1;
  for (int u : e) extra += t.count(u) ? 0 : 1;
  if (missing == 0 && extra == 0) return RecoveryOutcome::kExact;
  if (missing == 0) {
    return extra == 1 ? RecoveryOutcome::kOver1 : extra == 2 ? RecoveryOutcome::kOver2 : RecoveryOutcome::kOver3Plus;
  }
  if (extra == 0) {
    return missing == 1 ? RecoveryOutcome::kUnder1
                        : missing == 2 ? RecoveryOutcome::kUnder2 : RecoveryOutcome::kUnder3Plus;
  }
  return RecoveryOutcome::kOther;
}

}  // namespace namedemand
