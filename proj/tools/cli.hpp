#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "namedemand/benchmark_runner.hpp"

namespace namedemand::cli {

/// Resolved run configuration: config file values with command-line flags
/// applied on top.
struct RunConfig {
  std::string experiment = "misspec";
  MisspecConfig misspec;
  SparseConfig sparse;
  std::vector<std::string> estimators = {"misspecified", "name", "oracle"};
  KernelSpec kernel;
  double lambda = kDefaultLambda;
  OptimizerConfig optimizer;
  int jobs = 0;  // 0 = machine parallelism

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  std::uint64_t seed() const { return experiment == "sparse" ? sparse.seed : misspec.seed; }
};

RunConfig load_config(const std::filesystem::path& path);

// Parses "median" or a comma/space separated list of numbers.
std::vector<double> parse_number_list(const std::string& text);

// Entry point shared by the executable and the tests. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace namedemand::cli
