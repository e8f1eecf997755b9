#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace namedemand {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Error hierarchy. Everything the library throws derives from Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// A linear system or transform could not be evaluated reliably.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// An iterative procedure stopped without meeting its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, int iterations, double residual)
      : Error(what), iterations_(iterations), residual_(residual) {}
  int iterations() const { return iterations_; }
  double residual() const { return residual_; }

 private:
  int iterations_;
  double residual_;
};

inline constexpr double kSimplexTolerance = 1e-12;

/// Probability vector over the J+1 alternatives of a market. Index 0 is the
/// outside good. Entries lie in [0,1] and sum to one within kSimplexTolerance.
class SimplexVector {
 public:
  explicit SimplexVector(Vector probs);

  const Vector& probs() const { return probs_; }
  double operator[](Eigen::Index j) const { return probs_[j]; }
  double outside() const { return probs_[0]; }
  Vector inside() const { return probs_.tail(probs_.size() - 1); }
  int num_goods() const { return static_cast<int>(probs_.size()) - 1; }
  Eigen::Index size() const { return probs_.size(); }
  // True when every entry is strictly inside (0,1).
  bool interior() const;

 private:
  Vector probs_;
};

/// One market: J products with characteristics X (J x k), prices P, instruments
/// W (J x l, l may be 0) and observed shares including the outside good.
struct MarketData {
  int market_id = 0;
  Matrix X;
  Vector P;
  Matrix W;
  SimplexVector observed_shares;

  MarketData(int id, Matrix x, Vector p, Matrix w, SimplexVector shares);

  int num_goods() const { return static_cast<int>(X.rows()); }
  int num_characteristics() const { return static_cast<int>(X.cols()); }
  int num_instruments() const { return static_cast<int>(W.cols()); }
};

struct IndividualData {
  int market_id = 0;
  Vector Z;
  int d = 0;
};

/// Structural coefficients holding at one covariate point.
struct ThetaPoint {
  Vector beta;
  double alpha = 0.0;
  std::optional<Vector> sigma;
  Vector eval_point;

  ThetaPoint() = default;
  ThetaPoint(Vector beta, double alpha, std::optional<Vector> sigma = std::nullopt,
             Vector eval_point = Vector());

  bool has_random_coefficients() const { return sigma.has_value() && sigma->size() > 0; }
};

/// Unobserved qualities xi_jm at a fixed evaluation point (M x J).
class XiMatrix {
 public:
  XiMatrix() = default;
  explicit XiMatrix(Matrix values);

  const Matrix& values() const { return values_; }
  Vector row(Eigen::Index m) const { return values_.row(m).transpose(); }
  Eigen::Index markets() const { return values_.rows(); }
  Eigen::Index goods() const { return values_.cols(); }

 private:
  Matrix values_;
};

enum class MomentId {
  kCovXXi,          // cov(X_c, xi) over product-market cells, one per X column
  kCovPXi,          // cov(P, xi)
  kCovWXi,          // cov(W_c, xi), one per instrument column
  kCovZChoiceX,     // cov(Z_u, X_d) - cov(Z_u, sum_j s_ij X_j)
  kCovZ2ChoiceX,    // same with Z_u^2
};

std::string to_string(MomentId id);
MomentId moment_id_from_string(const std::string& name);

/// Ordered moment list, weight matrix and relative weight of the aggregate
/// block. An empty R means "identity sized to the realized moment vector".
struct MomentSpec {
  std::vector<MomentId> moments;
  Matrix R;
  double h = 0.0;

  MomentSpec() = default;
  MomentSpec(std::vector<MomentId> ids, Matrix weight = Matrix(), double aggregate_weight = 0.0);

  // R if set, otherwise identity of the requested size.
  Matrix weight_matrix(Eigen::Index size) const;
};

struct EstimationResult {
  ThetaPoint theta;
  XiMatrix xi;
  bool converged = false;
  int iterations = 0;
  double final_loss = 0.0;
  double elapsed_seconds = 0.0;
  std::uint64_t quadrature_seed = 0;
  Vector parameters;  // raw optimizer coordinates (e.g. gamma, alpha)
  std::string message;
};

/// Individuals of one market in columnar form.
struct MarketSample {
  Matrix Z;                  // N_m x p
  std::vector<int> choices;  // length N_m, values in {0..J}

  Eigen::Index size() const { return Z.rows(); }
};

struct ValidateOptions {
  // Replace observed shares with choice frequencies counted from individuals.
  bool recompute_shares = false;
};

/// Validated bundle of markets and individuals with cross-checked dimensions.
/// Individuals are grouped per market in the order of the market list.
class Dataset {
 public:
  Dataset() = default;

  const std::vector<MarketData>& markets() const { return markets_; }
  const std::vector<MarketSample>& samples() const { return samples_; }
  const MarketData& market(std::size_t m) const { return markets_.at(m); }
  const MarketSample& sample(std::size_t m) const { return samples_.at(m); }

  std::size_t num_markets() const { return markets_.size(); }
  int num_goods() const { return goods_; }
  int num_characteristics() const { return characteristics_; }
  int num_instruments() const { return instruments_; }
  int num_covariates() const { return covariates_; }
  std::size_t num_individuals() const;
  bool has_individuals() const { return num_individuals() > 0; }

  // Index of a market id in markets(); throws DataError when unknown.
  std::size_t market_index(int market_id) const;

  // Largest |observed - counted| share over all markets and goods; 0 when
  // there are no individuals.
  double share_discrepancy() const { return share_discrepancy_; }

  // Choice frequencies counted from the individuals of market m.
  Vector counted_shares(std::size_t m) const;

  // Flattened record form (inverse of validate_dataset).
  std::vector<IndividualData> individuals() const;

  // Pooled Z of all individuals (sum N_m x p).
  Matrix pooled_covariates() const;

  friend Dataset validate_dataset(std::vector<MarketData> markets,
                                  std::vector<IndividualData> individuals,
                                  const ValidateOptions& options);

 private:
  std::vector<MarketData> markets_;
  std::vector<MarketSample> samples_;
  std::unordered_map<int, std::size_t> index_;
  int goods_ = 0;
  int characteristics_ = 0;
  int instruments_ = 0;
  int covariates_ = 0;
  double share_discrepancy_ = 0.0;
};

Dataset validate_dataset(std::vector<MarketData> markets, std::vector<IndividualData> individuals,
                         const ValidateOptions& options = {});

// Re-validates an existing handle. Returns an equal dataset.
Dataset validate_dataset(const Dataset& dataset);

// Coordinatewise median of pooled covariates.
Vector median_covariates(const Dataset& dataset);

// Keeps only the listed covariate columns (0-based) of every individual.
Dataset project_covariates(const Dataset& dataset, const std::vector<int>& columns);

}  // namespace namedemand
