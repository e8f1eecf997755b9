#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "namedemand/first_stage.hpp"
#include "namedemand/optimizer.hpp"
#include "namedemand/simulation.hpp"
#include "namedemand/sparse.hpp"

namespace namedemand {

// Estimators the misspecification benchmark knows:
//   name          kernel-ridge first stage + NAME at the median z
//   oracle        parametric NFP, beta = g0 + g1 z + g2 z^2
//   misspecified  parametric NFP, beta = g0 + g2 z^2
//   known_shares  NAME fed the true shares at the median z
const std::vector<std::string>& misspec_estimator_names();

inline constexpr double kDefaultLambda = 300.0;

struct MisspecBenchmarkOptions {
  MisspecConfig dgp;
  std::vector<std::string> estimators = {"misspecified", "name", "oracle"};
  KernelSpec kernel;
  double lambda = kDefaultLambda;
  OptimizerConfig optimizer;
  int jobs = 1;
  int hist_bins = 30;
};

struct ReplicationRow {
  int replication = 0;
  std::uint64_t seed = 0;
  std::string estimator;
  double alpha_hat = 0.0;  // NaN when the estimator failed outright
  bool converged = false;
  int iterations = 0;
  double final_loss = 0.0;
  double seconds = 0.0;
  std::string message;
};

struct SummaryRow {
  std::string estimator;
  int replications = 0;
  int converged = 0;
  int divergences = 0;
  double bias_converged = 0.0;
  double rmse_converged = 0.0;
  double bias_all = 0.0;
  double rmse_all = 0.0;
  double mean_seconds = 0.0;
  double sd_seconds = 0.0;
};

struct Histogram {
  std::vector<double> left_edges;
  double width = 0.0;
  std::map<std::string, std::vector<int>> counts;
};

struct MisspecBenchmarkResult {
  std::vector<ReplicationRow> rows;  // replication-major, estimator order as requested
  std::vector<SummaryRow> summary;
  Histogram histogram;
};

// Runs one estimator on one simulated dataset.
ReplicationRow run_misspec_estimator(const std::string& estimator, const SimulatedMarkets& data,
                                     const MisspecBenchmarkOptions& options);

MisspecBenchmarkResult run_misspec_benchmark(const MisspecBenchmarkOptions& options);

std::vector<SummaryRow> summarize(const std::vector<ReplicationRow>& rows,
                                  const std::vector<std::string>& estimators, double truth);
Histogram alpha_histogram(const std::vector<ReplicationRow>& rows,
                          const std::vector<std::string>& estimators, int bins);

struct SparseBenchmarkOptions {
  SparseConfig dgp;
  int jobs = 1;
};

struct SparseReplicationRow {
  int replication = 0;
  std::uint64_t seed = 0;
  RecoveryOutcome outcome = RecoveryOutcome::kOther;
  std::vector<int> support;
  std::vector<int> truth;
  double empirical_c1 = 0.0;  // smallest |mean(d z_u)| over active (m, u)
};

struct SparseBenchmarkResult {
  std::vector<SparseReplicationRow> rows;
  std::map<RecoveryOutcome, int> counts;
};

// Scores are computed market by market without materializing the dataset.
SparseReplicationRow run_sparse_replication(const SparseConfig& config, int replication,
                                            std::uint64_t seed);
SparseBenchmarkResult run_sparse_benchmark(const SparseBenchmarkOptions& options);

void write_replications_csv(std::ostream& out, const std::vector<ReplicationRow>& rows);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& summary);
void write_histogram_csv(std::ostream& out, const Histogram& histogram,
                         const std::vector<std::string>& estimators);
// Wall-clock data; kept out of the CSV files so those stay reproducible.
nlohmann::json timing_json(const std::vector<ReplicationRow>& rows,
                           const std::vector<SummaryRow>& summary);

void write_sparse_replications_csv(std::ostream& out, const std::vector<SparseReplicationRow>& rows);
void write_sparse_summary_csv(std::ostream& out, const SparseConfig& config,
                              const SparseBenchmarkResult& result);

// Writes replications.csv, summary.csv, alpha_hist.csv, timing.json.
void write_misspec_outputs(const std::filesystem::path& dir, const MisspecBenchmarkOptions& options,
                           const MisspecBenchmarkResult& result);
// Writes replications.csv and summary.csv.
void write_sparse_outputs(const std::filesystem::path& dir, const SparseBenchmarkResult& result,
                          const SparseConfig& config);

// Formats a double so that it round-trips exactly.
std::string format_double(double v);

}  // namespace namedemand
