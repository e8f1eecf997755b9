#include "namedemand/benchmark_runner.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "namedemand/estimators.hpp"
#include "namedemand/parallel.hpp"

namespace namedemand {

namespace {

using Clock = std::chrono::steady_clock;

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::string join(const std::vector<int>& v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(v[i]);
  }
  return s;
}

// Quotes a CSV field when needed.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c == '\n' ? ' ' : c;
  }
  return q + "\"";
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

const std::vector<std::string>& misspec_estimator_names() {
  static const std::vector<std::string> names = {"name", "oracle", "misspecified", "known_shares"};
  return names;
}

ReplicationRow run_misspec_estimator(const std::string& estimator, const SimulatedMarkets& data,
                                     const MisspecBenchmarkOptions& options) {
  const auto& known = misspec_estimator_names();
  if (std::find(known.begin(), known.end(), estimator) == known.end()) {
    throw DataError("unknown estimator '" + estimator + "'");
  }
  ReplicationRow row;
  row.estimator = estimator;
  OptimizerConfig opt = options.optimizer;
  opt.threads = 1;
  const Dataset& ds = data.dataset;
  const auto start = Clock::now();
  try {
    EstimationResult res;
    if (estimator == "name") {
      const SharePredictor predictor = SharePredictor::fit(ds, options.kernel, options.lambda);
      res = estimate_name(ds, predictor, median_covariates(ds), name_moments(), opt);
    } else if (estimator == "known_shares") {
      const Vector z0 = median_covariates(ds);
      res = estimate_name_from_shares(ds, true_shares_at(options.dgp, data, z0[0]), z0,
                                      name_moments(), opt);
    } else if (estimator == "oracle") {
      res = estimate_parametric(ds, ParametricSpec::quadratic(), oracle_moments(), opt);
    } else if (estimator == "misspecified") {
      res = estimate_parametric(ds, ParametricSpec::quadratic_without_linear(),
                                misspecified_moments(), opt);
    }
    row.alpha_hat = res.theta.alpha;
    row.converged = res.converged && std::isfinite(res.theta.alpha);
    row.iterations = res.iterations;
    row.final_loss = res.final_loss;
    row.message = res.message;
  } catch (const Error& e) {
    row.alpha_hat = std::numeric_limits<double>::quiet_NaN();
    row.converged = false;
    row.final_loss = std::numeric_limits<double>::infinity();
    row.message = e.what();
  }
  row.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return row;
}

MisspecBenchmarkResult run_misspec_benchmark(const MisspecBenchmarkOptions& options) {
  options.dgp.validate();
  for (const auto& e : options.estimators) {
    const auto& known = misspec_estimator_names();
    if (std::find(known.begin(), known.end(), e) == known.end()) {
      throw DataError("unknown estimator '" + e + "'");
    }
  }
  const auto B = static_cast<std::size_t>(options.dgp.B);
  const std::size_t E = options.estimators.size();
  MisspecBenchmarkResult result;
  result.rows.resize(B * E);
  parallel_for(B, options.jobs, [&](std::size_t b) {
    const std::uint64_t seed = options.dgp.seed + b;
    const SimulatedMarkets data = gen_misspec(options.dgp, seed);
    for (std::size_t e = 0; e < E; ++e) {
      ReplicationRow row = run_misspec_estimator(options.estimators[e], data, options);
      row.replication = static_cast<int>(b);
      row.seed = seed;
      result.rows[b * E + e] = std::move(row);
    }
  });
  result.summary = summarize(result.rows, options.estimators, options.dgp.alpha);
  result.histogram = alpha_histogram(result.rows, options.estimators, options.hist_bins);
  return result;
}

std::vector<SummaryRow> summarize(const std::vector<ReplicationRow>& rows,
                                  const std::vector<std::string>& estimators, double truth) {
  std::vector<SummaryRow> out;
  for (const auto& name : estimators) {
    SummaryRow s;
    s.estimator = name;
    double err_c = 0.0, sq_c = 0.0, err_a = 0.0, sq_a = 0.0;
    int finite = 0;
    std::vector<double> secs;
    for (const auto& r : rows) {
      if (r.estimator != name) continue;
      ++s.replications;
      secs.push_back(r.seconds);
      if (!r.converged) ++s.divergences;
      if (!std::isfinite(r.alpha_hat)) continue;
      const double e = r.alpha_hat - truth;
      ++finite;
      err_a += e;
      sq_a += e * e;
      if (r.converged) {
        ++s.converged;
        err_c += e;
        sq_c += e * e;
      }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.bias_converged = s.converged ? err_c / s.converged : nan;
    s.rmse_converged = s.converged ? std::sqrt(sq_c / s.converged) : nan;
    s.bias_all = finite ? err_a / finite : nan;
    s.rmse_all = finite ? std::sqrt(sq_a / finite) : nan;
    if (!secs.empty()) {
      double mean = 0.0;
      for (double t : secs) mean += t;
      mean /= static_cast<double>(secs.size());
      double var = 0.0;
      for (double t : secs) var += (t - mean) * (t - mean);
      s.mean_seconds = mean;
      s.sd_seconds = secs.size() > 1 ? std::sqrt(var / static_cast<double>(secs.size() - 1)) : 0.0;
    }
    out.push_back(s);
  }
  return out;
}

Histogram alpha_histogram(const std::vector<ReplicationRow>& rows,
                          const std::vector<std::string>& estimators, int bins) {
  if (bins < 1) throw DataError("histogram needs at least one bin");
  Histogram h;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& r : rows) {
    if (!std::isfinite(r.alpha_hat)) continue;
    lo = std::min(lo, r.alpha_hat);
    hi = std::max(hi, r.alpha_hat);
  }
  if (!std::isfinite(lo)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  h.width = (hi - lo) / bins;
  for (int b = 0; b < bins; ++b) h.left_edges.push_back(lo + b * h.width);
  for (const auto& name : estimators) h.counts[name].assign(static_cast<std::size_t>(bins), 0);
  for (const auto& r : rows) {
    if (!std::isfinite(r.alpha_hat) || !h.counts.count(r.estimator)) continue;
    int b = static_cast<int>(std::floor((r.alpha_hat - lo) / h.width));
    b = std::clamp(b, 0, bins - 1);
    ++h.counts[r.estimator][static_cast<std::size_t>(b)];
  }
  return h;
}

SparseReplicationRow run_sparse_replication(const SparseConfig& config, int replication,
                                            std::uint64_t seed) {
  SparseReplicationRow row;
  row.replication = replication;
  row.seed = seed;
  std::set<int> support, truth;
  row.empirical_c1 = std::numeric_limits<double>::infinity();
  for (int m = 0; m < config.M; ++m) {
    const SparseMarket mk = gen_sparse_market(config, seed, m);
    const Vector sc = score_market(mk.Z, mk.choices);
    for (int u : select_variables(sc, threshold(config.p, config.N))) support.insert(u);
    truth.insert(mk.active.begin(), mk.active.end());
    for (int u : mk.active) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < mk.Z.rows(); ++i) {
        if (mk.choices[static_cast<std::size_t>(i)] != 0) s += mk.Z(i, u);
      }
      row.empirical_c1 = std::min(row.empirical_c1, std::abs(s) / static_cast<double>(config.N));
    }
  }
  row.support.assign(support.begin(), support.end());
  row.truth.assign(truth.begin(), truth.end());
  row.outcome = classify_recovery(row.truth, row.support);
  return row;
}

SparseBenchmarkResult run_sparse_benchmark(const SparseBenchmarkOptions& options) {
  options.dgp.validate();
  SparseBenchmarkResult result;
  result.rows.resize(static_cast<std::size_t>(options.dgp.B));
  parallel_for(result.rows.size(), options.jobs, [&](std::size_t b) {
    result.rows[b] = run_sparse_replication(options.dgp, static_cast<int>(b), options.dgp.seed + b);
  });
  for (auto o : {RecoveryOutcome::kExact, RecoveryOutcome::kOver1, RecoveryOutcome::kOver2,
                 RecoveryOutcome::kOver3Plus, RecoveryOutcome::kUnder1, RecoveryOutcome::kUnder2,
                 RecoveryOutcome::kUnder3Plus, RecoveryOutcome::kOther}) {
    result.counts[o] = 0;
  }
  for (const auto& r : result.rows) ++result.counts[r.outcome];
  return result;
}

void write_replications_csv(std::ostream& out, const std::vector<ReplicationRow>& rows) {
  out << "replication,seed,estimator,alpha_hat,converged,iterations,final_loss,message\n";
  for (const auto& r : rows) {
    out << r.replication << "," << r.seed << "," << r.estimator << "," << format_double(r.alpha_hat)
        << "," << (r.converged ? 1 : 0) << "," << r.iterations << "," << format_double(r.final_loss)
        << "," << csv_field(r.message) << "\n";
  }
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& summary) {
  out << "estimator,replications,converged,divergences,bias,rmse,bias_all,rmse_all\n";
  for (const auto& s : summary) {
    out << s.estimator << "," << s.replications << "," << s.converged << "," << s.divergences << ","
        << format_double(s.bias_converged) << "," << format_double(s.rmse_converged) << ","
        << format_double(s.bias_all) << "," << format_double(s.rmse_all) << "\n";
  }
}

void write_histogram_csv(std::ostream& out, const Histogram& histogram,
                         const std::vector<std::string>& estimators) {
  out << "bin_left";
  for (const auto& e : estimators) out << "," << e;
  out << "\n";
  for (std::size_t b = 0; b < histogram.left_edges.size(); ++b) {
    out << format_double(histogram.left_edges[b]);
    for (const auto& e : estimators) out << "," << histogram.counts.at(e)[b];
    out << "\n";
  }
}

nlohmann::json timing_json(const std::vector<ReplicationRow>& rows,
                           const std::vector<SummaryRow>& summary) {
  nlohmann::json j;
  j["summary"] = nlohmann::json::array();
  for (const auto& s : summary) {
    j["summary"].push_back({{"estimator", s.estimator},
                            {"mean_seconds", s.mean_seconds},
                            {"sd_seconds", s.sd_seconds},
                            {"replications", s.replications},
                            {"divergences", s.divergences}});
  }
  j["replications"] = nlohmann::json::array();
  for (const auto& r : rows) {
    j["replications"].push_back(
        {{"replication", r.replication}, {"estimator", r.estimator}, {"seconds", r.seconds}});
  }
  return j;
}

void write_sparse_replications_csv(std::ostream& out, const std::vector<SparseReplicationRow>& rows) {
  out << "replication,seed,outcome,support,truth,empirical_c1\n";
  for (const auto& r : rows) {
    out << r.replication << "," << r.seed << "," << to_string(r.outcome) << "," << join(r.support, ' ')
        << "," << join(r.truth, ' ') << "," << format_double(r.empirical_c1) << "\n";
  }
}

void write_sparse_summary_csv(std::ostream& out, const SparseConfig& config,
                              const SparseBenchmarkResult& result) {
  out << "p0,exact,over_1,over_2,over_3plus,under_1,under_2,under_3plus,other,total\n";
  out << config.p0;
  int total = 0;
  for (const auto& [outcome, count] : result.counts) {
    out << "," << count;
    total += count;
  }
  out << "," << total << "\n";
}

void write_misspec_outputs(const std::filesystem::path& dir, const MisspecBenchmarkOptions& options,
                           const MisspecBenchmarkResult& result) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / "replications.csv");
    write_replications_csv(out, result.rows);
  }
  {
    auto out = open_out(dir / "summary.csv");
    write_summary_csv(out, result.summary);
  }
  {
    auto out = open_out(dir / "alpha_hist.csv");
    write_histogram_csv(out, result.histogram, options.estimators);
  }
  {
    auto out = open_out(dir / "timing.json");
    out << timing_json(result.rows, result.summary).dump(2) << "\n";
  }
}

void write_sparse_outputs(const std::filesystem::path& dir, const SparseBenchmarkResult& result,
                          const SparseConfig& config) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / "replications.csv");
    write_sparse_replications_csv(out, result.rows);
  }
  {
    auto out = open_out(dir / "summary.csv");
    write_sparse_summary_csv(out, config, result);
  }
}

}  // namespace namedemand
