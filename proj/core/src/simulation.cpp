#include "namedemand/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "namedemand/logit.hpp"

namespace namedemand {

namespace {

using Rng = std::mt19937_64;

template <typename T>
void read_field(const nlohmann::json& j, const char* name, T& out) {
  if (!j.contains(name)) return;
  try {
    out = j.at(name).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("config field '") + name + "': " + e.what());
  }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw DataError("config section must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw DataError("config field '" + key + "' is not recognized");
  }
}

int argmax_choice(const Vector& utilities) {
  Eigen::Index best = 0;
  utilities.maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

void MisspecConfig::validate() const {
  if (M < 1 || N < 1 || J < 1 || B < 1) throw DataError("M, N, J and B must be positive");
  if (gamma.size() != 3 || !gamma.allFinite()) throw DataError("gamma must hold three finite values");
  if (!(xi_sd >= 0.0) || !std::isfinite(alpha) || !std::isfinite(price_shift)) {
    throw DataError("xi_sd must be nonnegative and alpha, price_shift finite");
  }
  if (max_redraws < 0) throw DataError("max_redraws must be nonnegative");
}

double MisspecConfig::beta(double z) const { return gamma[0] + gamma[1] * z + gamma[2] * z * z; }

SimulatedMarkets gen_misspec(const MisspecConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::extreme_value_distribution<double> gumbel(0.0, 1.0);

  std::vector<MarketData> markets;
  std::vector<IndividualData> people;
  markets.reserve(static_cast<std::size_t>(config.M));
  people.reserve(static_cast<std::size_t>(config.M) * static_cast<std::size_t>(config.N));
  Matrix xi_all(config.M, config.J);

  for (int m = 0; m < config.M; ++m) {
    for (int attempt = 0;; ++attempt) {
      Matrix X(config.J, 1);
      Vector P(config.J), xi(config.J);
      for (int j = 0; j < config.J; ++j) {
        X(j, 0) = normal(rng);
        P[j] = std::abs(normal(rng)) + config.price_shift;
        xi[j] = config.xi_sd * normal(rng);
      }
      std::vector<IndividualData> local;
      local.reserve(static_cast<std::size_t>(config.N));
      Vector counts = Vector::Zero(config.J + 1);
      Vector u(config.J + 1);
      for (int i = 0; i < config.N; ++i) {
        const double z = normal(rng);
        const double b = config.beta(z);
        u[0] = gumbel(rng);
        for (int j = 0; j < config.J; ++j) {
          u[j + 1] = b * X(j, 0) - config.alpha * P[j] + xi[j] + gumbel(rng);
        }
        const int d = argmax_choice(u);
        counts[d] += 1.0;
        local.push_back({m, Vector::Constant(1, z), d});
      }
      if ((counts.array() > 0.0).all()) {
        markets.emplace_back(m, X, P, Matrix(config.J, 0), SimplexVector(counts / counts.sum()));
        people.insert(people.end(), local.begin(), local.end());
        xi_all.row(m) = xi.transpose();
        break;
      }
      if (attempt >= config.max_redraws) {
        throw DataError("market " + std::to_string(m) + " keeps drawing a good with no buyer");
      }
    }
  }
  return {validate_dataset(std::move(markets), std::move(people)), xi_all};
}

SimplexVector true_shares_at(const MisspecConfig& config, const MarketData& market,
                             const Vector& xi_row, double z) {
  const ThetaPoint theta(Vector::Constant(1, config.beta(z)), config.alpha);
  return logit_shares(theta, xi_row, market);
}

std::vector<SimplexVector> true_shares_at(const MisspecConfig& config,
                                          const SimulatedMarkets& data, double z) {
  std::vector<SimplexVector> out;
  out.reserve(data.dataset.num_markets());
  for (std::size_t m = 0; m < data.dataset.num_markets(); ++m) {
    out.push_back(true_shares_at(config, data.dataset.market(m),
                                 data.xi.row(static_cast<Eigen::Index>(m)).transpose(), z));
  }
  return out;
}

void SparseConfig::validate() const {
  if (M < 1 || N < 2 || J < 1 || p < 1 || B < 1) throw DataError("M, J, p, B must be positive and N >= 2");
  if (p0 < 1 || p0 > p) throw DataError("p0 must lie in [1, p]");
  if (active < 1 || active > p0) throw DataError("active-per-market must lie in [1, p0]");
  if (!std::isfinite(alpha) || !std::isfinite(price_shift)) throw DataError("alpha and price_shift must be finite");
}

SparseMarket gen_sparse_market(const SparseConfig& config, std::uint64_t seed, int m) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(m)};
  Rng rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::extreme_value_distribution<double> gumbel(0.0, 1.0);

  SparseMarket out;
  out.market_id = m;
  Vector X(config.J), P(config.J);
  for (int j = 0; j < config.J; ++j) {
    X[j] = normal(rng);
    P[j] = std::abs(normal(rng)) + config.price_shift;
  }
  out.X = X;
  out.P = P;
  std::vector<int> pool(static_cast<std::size_t>(config.p0));
  std::iota(pool.begin(), pool.end(), 0);
  for (int a = 0; a < config.active; ++a) {
    std::uniform_int_distribution<int> pick(a, config.p0 - 1);
    std::swap(pool[static_cast<std::size_t>(a)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  out.active.assign(pool.begin(), pool.begin() + config.active);
  std::sort(out.active.begin(), out.active.end());

  out.Z.resize(config.N, config.p);
  out.choices.resize(static_cast<std::size_t>(config.N));
  Vector u(config.J + 1);
  for (int i = 0; i < config.N; ++i) {
    for (int v = 0; v < config.p; ++v) out.Z(i, v) = normal(rng);
    double effect = 0.0;
    for (int a : out.active) effect += out.Z(i, a);
    u[0] = gumbel(rng);
    for (int j = 0; j < config.J; ++j) u[j + 1] = effect * X[j] - config.alpha * P[j] + gumbel(rng);
    out.choices[static_cast<std::size_t>(i)] = argmax_choice(u);
  }
  return out;
}

SparseData gen_sparse(const SparseConfig& config, std::uint64_t seed) {
  config.validate();
  std::vector<MarketData> markets;
  std::vector<IndividualData> people;
  SparseData out;
  std::set<int> all;
  for (int m = 0; m < config.M; ++m) {
    SparseMarket mk = gen_sparse_market(config, seed, m);
    Vector counts = Vector::Zero(config.J + 1);
    for (int d : mk.choices) counts[d] += 1.0;
    if (!(counts.array() > 0.0).all()) {
      throw DataError("sparse market " + std::to_string(m) + " has a good with no buyer");
    }
    markets.emplace_back(m, Matrix(mk.X), mk.P, Matrix(config.J, 0), SimplexVector(counts / counts.sum()));
    for (int i = 0; i < config.N; ++i) {
      people.push_back({m, mk.Z.row(i).transpose(), mk.choices[static_cast<std::size_t>(i)]});
    }
    all.insert(mk.active.begin(), mk.active.end());
    out.active.push_back(std::move(mk.active));
  }
  out.dataset = validate_dataset(std::move(markets), std::move(people));
  out.support.assign(all.begin(), all.end());
  return out;
}

nlohmann::json to_json(const MisspecConfig& c) {
  return {{"M", c.M},
          {"N", c.N},
          {"J", c.J},
          {"gamma", std::vector<double>(c.gamma.data(), c.gamma.data() + c.gamma.size())},
          {"alpha", c.alpha},
          {"xi_sd", c.xi_sd},
          {"price_shift", c.price_shift},
          {"B", c.B},
          {"seed", c.seed},
          {"max_redraws", c.max_redraws}};
}

nlohmann::json to_json(const SparseConfig& c) {
  return {{"M", c.M},         {"N", c.N},   {"J", c.J},         {"p", c.p},
          {"p0", c.p0},       {"active", c.active},             {"alpha", c.alpha},
          {"price_shift", c.price_shift},   {"B", c.B},         {"seed", c.seed}};
}

MisspecConfig misspec_config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"M", "N", "J", "gamma", "alpha", "xi_sd", "price_shift", "B", "seed", "max_redraws"});
  MisspecConfig c;
  read_field(j, "M", c.M);
  read_field(j, "N", c.N);
  read_field(j, "J", c.J);
  if (j.contains("gamma")) {
    std::vector<double> g;
    read_field(j, "gamma", g);
    if (g.size() != 3) throw DataError("config field 'gamma': expected three values");
    c.gamma = Eigen::Map<const Vector>(g.data(), 3);
  }
  read_field(j, "alpha", c.alpha);
  read_field(j, "xi_sd", c.xi_sd);
  read_field(j, "price_shift", c.price_shift);
  read_field(j, "B", c.B);
  read_field(j, "seed", c.seed);
  read_field(j, "max_redraws", c.max_redraws);
  c.validate();
  return c;
}

SparseConfig sparse_config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"M", "N", "J", "p", "p0", "active", "alpha", "price_shift", "B", "seed"});
  SparseConfig c;
  read_field(j, "M", c.M);
  read_field(j, "N", c.N);
  read_field(j, "J", c.J);
  read_field(j, "p", c.p);
  read_field(j, "p0", c.p0);
  read_field(j, "active", c.active);
  read_field(j, "alpha", c.alpha);
  read_field(j, "price_shift", c.price_shift);
  read_field(j, "B", c.B);
  read_field(j, "seed", c.seed);
  c.validate();
  return c;
}

}  // namespace namedemand
