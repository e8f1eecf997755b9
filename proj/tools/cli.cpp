#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "namedemand/estimators.hpp"
#include "namedemand/io.hpp"
#include "namedemand/parallel.hpp"
#include "namedemand/sparse.hpp"

namespace namedemand::cli {

namespace {

const char* kPrecedence =
    "Settings are resolved in this order: built-in defaults, then the --config JSON file, then "
    "command-line flags. Every output directory gets a run_config.json holding the resolved "
    "settings; passing it back through --config reproduces the run.";

std::string method_name(OptimizerConfig::Method m) {
  switch (m) {
    case OptimizerConfig::Method::kNelderMead: return "nelder_mead";
    case OptimizerConfig::Method::kGradientDescent: return "gradient_descent";
    default: return "auto";
  }
}

OptimizerConfig::Method method_from(const std::string& s) {
  if (s == "auto") return OptimizerConfig::Method::kAuto;
  if (s == "nelder_mead") return OptimizerConfig::Method::kNelderMead;
  if (s == "gradient_descent") return OptimizerConfig::Method::kGradientDescent;
  throw DataError("config field 'optimizer.method': unknown method '" + s + "'");
}

template <typename T>
void get_field(const nlohmann::json& j, const std::string& prefix, const char* name, T& out) {
  if (!j.contains(name)) return;
  try {
    out = j.at(name).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("config field '" + prefix + name + "': " + e.what());
  }
}

void only_fields(const nlohmann::json& j, const std::string& prefix,
                 std::initializer_list<const char*> known) {
  if (!j.is_object()) throw DataError("config field '" + prefix + "': expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw DataError("config field '" + prefix + key + "' is not recognized");
    }
  }
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c == '\n' ? ' ' : c;
  }
  return q + "\"";
}

std::string join_doubles(const Vector& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += format_double(v[i]);
  }
  return s;
}

std::ofstream open_file(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write " + p.string());
  return f;
}

struct ResultRow {
  std::string estimator;
  int region = -1;
  EstimationResult result;
};

void write_results(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  auto f = open_file(path);
  Eigen::Index k = 0, ns = 0;
  for (const auto& r : rows) {
    k = std::max(k, r.result.theta.beta.size());
    if (r.result.theta.sigma) ns = std::max(ns, r.result.theta.sigma->size());
  }
  f << "estimator,region,z0,alpha_hat";
  for (Eigen::Index c = 0; c < k; ++c) f << ",beta_" << c;
  for (Eigen::Index c = 0; c < ns; ++c) f << ",sigma_" << c;
  f << ",parameters,converged,iterations,final_loss,message\n";
  for (const auto& r : rows) {
    const auto& t = r.result.theta;
    f << r.estimator << "," << (r.region >= 0 ? std::to_string(r.region) : "") << ","
      << join_doubles(t.eval_point) << "," << format_double(t.alpha);
    for (Eigen::Index c = 0; c < k; ++c) f << "," << (c < t.beta.size() ? format_double(t.beta[c]) : "");
    for (Eigen::Index c = 0; c < ns; ++c) {
      f << "," << (t.sigma && c < t.sigma->size() ? format_double((*t.sigma)[c]) : "");
    }
    f << "," << join_doubles(r.result.parameters) << "," << (r.result.converged ? 1 : 0) << ","
      << r.result.iterations << "," << format_double(r.result.final_loss) << ","
      << csv_escape(r.result.message) << "\n";
  }
}

MomentSpec parse_moments(const std::string& text, const MomentSpec& fallback) {
  if (text.empty()) return fallback;
  std::vector<MomentId> ids;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (!item.empty()) ids.push_back(moment_id_from_string(item));
  }
  if (ids.empty()) throw DataError("--moments lists no moments");
  return MomentSpec(ids);
}

void print_sparse_counts(std::ostream& out, const SparseBenchmarkResult& r) {
  for (const auto& [o, c] : r.counts) out << "  " << to_string(o) << ": " << c << "\n";
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["experiment"] = experiment;
  j["dgp"] = experiment == "sparse" ? namedemand::to_json(sparse) : namedemand::to_json(misspec);
  if (experiment == "misspec") j["estimators"] = estimators;
  j["first_stage"] = {{"lambda", lambda}, {"bandwidth", kernel.bandwidth}};
  j["optimizer"] = {{"method", method_name(optimizer.method)},
                    {"f_tol", optimizer.f_tol},
                    {"x_tol", optimizer.x_tol},
                    {"max_iter", optimizer.max_iter},
                    {"initial_step", optimizer.initial_step},
                    {"learning_rate", optimizer.learning_rate}};
  j["jobs"] = jobs;
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  only_fields(j, "", {"experiment", "dgp", "estimators", "first_stage", "optimizer", "jobs"});
  RunConfig c;
  get_field(j, "", "experiment", c.experiment);
  if (c.experiment != "misspec" && c.experiment != "sparse") {
    throw DataError("config field 'experiment': expected \"misspec\" or \"sparse\"");
  }
  if (j.contains("dgp")) {
    try {
      if (c.experiment == "sparse") {
        c.sparse = sparse_config_from_json(j.at("dgp"));
      } else {
        c.misspec = misspec_config_from_json(j.at("dgp"));
      }
    } catch (const DataError& e) {
      const std::string msg = e.what();
      const std::string key = "config field '";
      throw DataError(msg.rfind(key, 0) == 0 ? key + "dgp." + msg.substr(key.size()) : "dgp: " + msg);
    }
  }
  get_field(j, "", "estimators", c.estimators);
  if (j.contains("first_stage")) {
    const auto& f = j.at("first_stage");
    only_fields(f, "first_stage.", {"lambda", "bandwidth"});
    get_field(f, "first_stage.", "lambda", c.lambda);
    get_field(f, "first_stage.", "bandwidth", c.kernel.bandwidth);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    only_fields(o, "optimizer.", {"method", "f_tol", "x_tol", "max_iter", "initial_step", "learning_rate"});
    std::string m = method_name(c.optimizer.method);
    get_field(o, "optimizer.", "method", m);
    c.optimizer.method = method_from(m);
    get_field(o, "optimizer.", "f_tol", c.optimizer.f_tol);
    get_field(o, "optimizer.", "x_tol", c.optimizer.x_tol);
    get_field(o, "optimizer.", "max_iter", c.optimizer.max_iter);
    get_field(o, "optimizer.", "initial_step", c.optimizer.initial_step);
    get_field(o, "optimizer.", "learning_rate", c.optimizer.learning_rate);
  }
  get_field(j, "", "jobs", c.jobs);
  if (!(c.lambda > 0.0)) throw DataError("config field 'first_stage.lambda': must be positive");
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  const nlohmann::json j = read_json_file(path);
  try {
    return RunConfig::from_json(j);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<double> parse_number_list(const std::string& text) {
  std::string s = text;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::stringstream ss(s);
  std::vector<double> out;
  std::string tok;
  while (ss >> tok) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw DataError("cannot parse number '" + tok + "'");
    }
  }
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Demand estimation with nonparametric first stage and moment estimation."};
  app.footer(kPrecedence);
  app.require_subcommand(1);

  std::string config_path, out_dir, dataset_path, estimator, z0_text = "median", spec_text,
      moments_text, predictor_path, cuts_text;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs, replications, regions;
  std::optional<double> lambda;
  std::vector<std::string> estimators;
  int covariate = 0;
  bool recompute = false;

  auto* sim = app.add_subcommand("simulate", "Generate one dataset from a config.");
  sim->add_option("--config", config_path, "Run config JSON")->required();
  sim->add_option("--out", out_dir, "Output directory")->required();
  sim->add_option("--seed", seed, "Replication seed (overrides dgp.seed)");

  auto* est = app.add_subcommand("estimate", "Estimate on a dataset file.");
  est->add_option("--dataset", dataset_path, "Dataset JSON")->required();
  est->add_option("--estimator", estimator, "name | parametric | bunching | sparse-name")->required();
  est->add_option("--out", out_dir, "Output directory")->required();
  est->add_option("--config", config_path, "Run config JSON (first stage and optimizer settings)");
  est->add_option("--z0", z0_text, "Base point: \"median\" or a list like \"0.1,0.2\"");
  est->add_option("--spec", spec_text,
                  "Parametric basis: oracle | misspecified | per-coefficient lists like \"1,z,z2\"");
  est->add_option("--moments", moments_text,
                  "Comma list of cov_x_xi, cov_p_xi, cov_w_xi, cov_z_choice_x, cov_z2_choice_x");
  est->add_option("--lambda", lambda, "Ridge penalty of the first stage");
  est->add_option("--predictor", predictor_path, "Fitted predictor JSON to use instead of fitting");
  est->add_option("--regions", regions, "Bunching: number of quantile regions");
  est->add_option("--cuts", cuts_text, "Bunching: explicit cut points");
  est->add_option("--covariate", covariate, "Bunching: covariate index to cut on");
  est->add_flag("--recompute-shares", recompute, "Replace observed shares by counted choices");
  est->add_option("--jobs", jobs, "Threads for market-level work");

  auto* bench = app.add_subcommand("benchmark", "Monte Carlo experiment (misspec or sparse).");
  bench->add_option("--config", config_path, "Run config JSON")->required();
  bench->add_option("--out", out_dir, "Output directory")->required();
  bench->add_option("--seed", seed, "Base seed; replication b uses seed + b");
  bench->add_option("--jobs", jobs, "Replications run in parallel (default: all cores)");
  bench->add_option("--replications", replications, "Number of replications B");
  bench->add_option("--estimator", estimators, "Estimators to run (misspec experiment)")->delimiter(',');
  bench->add_option("--lambda", lambda, "Ridge penalty of the first stage");

  auto* rec = app.add_subcommand("recover-support", "Thresholded support recovery on a dataset.");
  rec->add_option("--dataset", dataset_path, "Dataset JSON")->required();
  rec->add_option("--out", out_dir, "Output directory")->required();
  rec->add_option("--jobs", jobs, "Threads");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (seed) {
      cfg.misspec.seed = *seed;
      cfg.sparse.seed = *seed;
    }
    if (replications) {
      if (*replications < 1) throw DataError("--replications must be positive");
      cfg.misspec.B = *replications;
      cfg.sparse.B = *replications;
    }
    if (lambda) {
      if (!(*lambda > 0.0)) throw DataError("--lambda must be positive");
      cfg.lambda = *lambda;
    }
    if (!estimators.empty()) cfg.estimators = estimators;
    if (jobs) cfg.jobs = *jobs;
    const int threads = cfg.jobs > 0 ? cfg.jobs : hardware_threads();
    const std::filesystem::path dir(out_dir);

    if (*sim) {
      std::filesystem::create_directories(dir);
      if (cfg.experiment == "sparse") {
        write_dataset(dir / "dataset.json", gen_sparse(cfg.sparse, cfg.sparse.seed).dataset);
      } else {
        write_dataset(dir / "dataset.json", gen_misspec(cfg.misspec, cfg.misspec.seed).dataset);
      }
      write_json_file(dir / "run_config.json", cfg.to_json());
      out << "wrote " << (dir / "dataset.json").string() << "\n";
      return 0;
    }

    if (*bench) {
      std::filesystem::create_directories(dir);
      write_json_file(dir / "run_config.json", cfg.to_json());
      if (cfg.experiment == "sparse") {
        SparseBenchmarkOptions opts{cfg.sparse, threads};
        const SparseBenchmarkResult r = run_sparse_benchmark(opts);
        write_sparse_outputs(dir, r, cfg.sparse);
        out << "sparse benchmark, p0=" << cfg.sparse.p0 << ", B=" << cfg.sparse.B << "\n";
        print_sparse_counts(out, r);
      } else {
        MisspecBenchmarkOptions opts;
        opts.dgp = cfg.misspec;
        opts.estimators = cfg.estimators;
        opts.kernel = cfg.kernel;
        opts.lambda = cfg.lambda;
        opts.optimizer = cfg.optimizer;
        opts.jobs = threads;
        const MisspecBenchmarkResult r = run_misspec_benchmark(opts);
        write_misspec_outputs(dir, opts, r);
        for (const auto& row : r.rows) {
          out << "replication " << row.replication << " " << row.estimator << " alpha="
              << format_double(row.alpha_hat) << (row.converged ? "" : " (not converged)") << "\n";
        }
        write_summary_csv(out, r.summary);
      }
      return 0;
    }

    const ValidateOptions vopts{recompute};
    const Dataset ds = read_dataset(dataset_path, vopts);

    if (*rec) {
      std::filesystem::create_directories(dir);
      const SupportEstimate support = recover_support(ds, threads);
      auto f = open_file(dir / "support.csv");
      write_support_diagnostics(f, support);
      write_json_file(dir / "support.json", {{"support", support.support},
                                             {"per_market", support.per_market}});
      out << "recovered " << support.support.size() << " variable(s)\n";
      return 0;
    }

    // estimate
    cfg.optimizer.threads = threads;
    std::filesystem::create_directories(dir);
    nlohmann::json echo = cfg.to_json();
    echo["estimate"] = {{"dataset", dataset_path}, {"estimator", estimator}, {"z0", z0_text},
                        {"spec", spec_text},       {"moments", moments_text},
                        {"recompute_shares", recompute}};
    auto base_point = [&](const Dataset& d) -> Vector {
      if (z0_text == "median") return median_covariates(d);
      const auto v = parse_number_list(z0_text);
      if (static_cast<int>(v.size()) != d.num_covariates()) {
        throw DataError("--z0 needs " + std::to_string(d.num_covariates()) + " value(s)");
      }
      return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
    };

    std::vector<ResultRow> rows;
    if (estimator == "name") {
      SharePredictor predictor;
      if (!predictor_path.empty()) {
        if (!std::filesystem::exists(predictor_path)) {
          throw DataError("predictor required but absent: " + predictor_path);
        }
        predictor = SharePredictor::from_json(read_json_file(predictor_path));
      } else {
        if (!ds.has_individuals()) {
          throw DataError("predictor required but absent: the dataset has no individuals; pass --predictor");
        }
        predictor = SharePredictor::fit(ds, cfg.kernel, cfg.lambda);
      }
      write_json_file(dir / "predictor.json", predictor.to_json());
      rows.push_back({"name", -1,
                      estimate_name(ds, predictor, base_point(ds), parse_moments(moments_text, name_moments()),
                                    cfg.optimizer)});
    } else if (estimator == "parametric") {
      const ParametricSpec spec =
          ParametricSpec::parse(spec_text.empty() ? "oracle" : spec_text, ds.num_characteristics());
      MomentSpec fallback = oracle_moments();
      if (spec_text == "misspecified") fallback = misspecified_moments();
      echo["estimate"]["basis"] = spec.describe();
      rows.push_back({"parametric", -1,
                      estimate_parametric(ds, spec, parse_moments(moments_text, fallback), cfg.optimizer)});
    } else if (estimator == "bunching") {
      BunchingSpec spec;
      if (!cuts_text.empty()) {
        spec = BunchingSpec::cuts(ds.num_covariates(), covariate, parse_number_list(cuts_text));
      } else {
        spec = BunchingSpec::quantile_cuts(ds, covariate, regions.value_or(2));
      }
      const auto results =
          estimate_bunching(ds, spec, parse_moments(moments_text, name_moments()), cfg.optimizer);
      for (std::size_t r = 0; r < results.size(); ++r) {
        rows.push_back({"bunching", static_cast<int>(r), results[r]});
      }
    } else if (estimator == "sparse-name") {
      const SupportEstimate support = recover_support(ds, threads);
      {
        auto f = open_file(dir / "support.csv");
        write_support_diagnostics(f, support);
      }
      SparseNameOptions sopts;
      sopts.kernel = cfg.kernel;
      sopts.lambda = cfg.lambda;
      if (z0_text != "median") {
        const auto v = parse_number_list(z0_text);
        sopts.z0 = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
      }
      echo["estimate"]["support"] = support.support;
      rows.push_back({"sparse-name", -1,
                      name_on_support(ds, support, parse_moments(moments_text, name_moments()),
                                      cfg.optimizer, sopts)});
    } else {
      throw DataError("unknown estimator '" + estimator +
                      "' (expected name, parametric, bunching or sparse-name)");
    }
    write_results(dir / "result.csv", rows);
    write_json_file(dir / "run_config.json", echo);
    for (const auto& r : rows) {
      out << r.estimator << (r.region >= 0 ? " region " + std::to_string(r.region) : "")
          << ": alpha=" << format_double(r.result.theta.alpha)
          << (r.result.converged ? "" : " (not converged)") << "\n";
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace namedemand::cli
