#include "namedemand/types.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace namedemand {

namespace {

bool all_finite(const Matrix& m) { return m.allFinite(); }

std::string dims(Eigen::Index r, Eigen::Index c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}

}  // namespace

SimplexVector::SimplexVector(Vector probs) : probs_(std::move(probs)) {
  if (probs_.size() < 2) {
    throw DataError("simplex vector needs at least the outside good and one inside good");
  }
  if (!probs_.allFinite()) {
    throw DataError("simplex vector has non-finite entries");
  }
  if ((probs_.array() < 0.0).any() || (probs_.array() > 1.0).any()) {
    throw DataError("simplex vector entries must lie in [0,1]");
  }
  const double total = probs_.sum();
  if (std::abs(total - 1.0) > kSimplexTolerance) {
    std::ostringstream os;
    os << "simplex vector sums to " << total << ", not 1";
    throw DataError(os.str());
  }
}

bool SimplexVector::interior() const {
  return (probs_.array() > 0.0).all() && (probs_.array() < 1.0).all();
}

MarketData::MarketData(int id, Matrix x, Vector p, Matrix w, SimplexVector shares)
    : market_id(id), X(std::move(x)), P(std::move(p)), W(std::move(w)),
      observed_shares(std::move(shares)) {
  const auto J = X.rows();
  std::ostringstream where;
  where << "market " << market_id << ": ";
  if (J < 1) throw DataError(where.str() + "needs at least one product");
  if (X.cols() < 1) throw DataError(where.str() + "needs at least one characteristic");
  if (P.size() != J) throw DataError(where.str() + "price vector length does not match J");
  if (W.size() == 0) {
    W.resize(J, 0);
  } else if (W.rows() != J) {
    throw DataError(where.str() + "instrument matrix is " + dims(W.rows(), W.cols()) +
                    ", expected " + std::to_string(J) + " rows");
  }
  if (observed_shares.size() != J + 1) {
    throw DataError(where.str() + "shares must have J+1 entries (outside good first)");
  }
  if (!observed_shares.interior()) {
    throw DataError(where.str() + "observed shares must lie strictly inside (0,1)");
  }
  if (!all_finite(X) || !P.allFinite() || !all_finite(W)) {
    throw DataError(where.str() + "non-finite characteristics, prices or instruments");
  }
}

ThetaPoint::ThetaPoint(Vector b, double a, std::optional<Vector> s, Vector z)
    : beta(std::move(b)), alpha(a), sigma(std::move(s)), eval_point(std::move(z)) {
  if (sigma && (sigma->array() < 0.0).any()) {
    throw DataError("random-coefficient scales must be nonnegative");
  }
  if (sigma && sigma->size() != beta.size()) {
    throw DataError("sigma must have one entry per characteristic");
  }
}

XiMatrix::XiMatrix(Matrix values) : values_(std::move(values)) {
  if (!values_.allFinite()) throw DataError("xi matrix has non-finite entries");
}

std::string to_string(MomentId id) {
  switch (id) {
    case MomentId::kCovXXi: return "cov_x_xi";
    case MomentId::kCovPXi: return "cov_p_xi";
    case MomentId::kCovWXi: return "cov_w_xi";
    case MomentId::kCovZChoiceX: return "cov_z_choice_x";
    case MomentId::kCovZ2ChoiceX: return "cov_z2_choice_x";
  }
  return "unknown";
}

MomentId moment_id_from_string(const std::string& name) {
  for (auto id : {MomentId::kCovXXi, MomentId::kCovPXi, MomentId::kCovWXi, MomentId::kCovZChoiceX,
                  MomentId::kCovZ2ChoiceX}) {
    if (to_string(id) == name) return id;
  }
  throw DataError("unknown moment identifier '" + name + "'");
}

MomentSpec::MomentSpec(std::vector<MomentId> ids, Matrix weight, double aggregate_weight)
    : moments(std::move(ids)), R(std::move(weight)), h(aggregate_weight) {
  if (h < 0.0 || !std::isfinite(h)) throw DataError("aggregate weight h must be finite and >= 0");
  if (R.size() > 0) {
    if (R.rows() != R.cols()) throw DataError("weight matrix must be square");
    if (!R.isApprox(R.transpose(), 1e-12)) throw DataError("weight matrix must be symmetric");
    Eigen::LLT<Matrix> llt(R);
    if (llt.info() != Eigen::Success) throw DataError("weight matrix must be positive definite");
  }
}

Matrix MomentSpec::weight_matrix(Eigen::Index size) const {
  if (R.size() == 0) return Matrix::Identity(size, size);
  if (R.rows() != size) {
    throw DataError("weight matrix is " + dims(R.rows(), R.cols()) + " but there are " +
                    std::to_string(size) + " moments");
  }
  return R;
}

std::size_t Dataset::num_individuals() const {
  std::size_t n = 0;
  for (const auto& s : samples_) n += static_cast<std::size_t>(s.size());
  return n;
}

std::size_t Dataset::market_index(int market_id) const {
  auto it = index_.find(market_id);
  if (it == index_.end()) throw DataError("unknown market id " + std::to_string(market_id));
  return it->second;
}

Vector Dataset::counted_shares(std::size_t m) const {
  const auto& s = samples_.at(m);
  Vector counts = Vector::Zero(goods_ + 1);
  for (int d : s.choices) counts[d] += 1.0;
  if (s.choices.empty()) return counts;
  return counts / static_cast<double>(s.choices.size());
}

std::vector<IndividualData> Dataset::individuals() const {
  std::vector<IndividualData> out;
  out.reserve(num_individuals());
  for (std::size_t m = 0; m < markets_.size(); ++m) {
    const auto& s = samples_[m];
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      out.push_back({markets_[m].market_id, s.Z.row(i).transpose(),
                     s.choices[static_cast<std::size_t>(i)]});
    }
  }
  return out;
}

Matrix Dataset::pooled_covariates() const {
  Matrix out(static_cast<Eigen::Index>(num_individuals()), covariates_);
  Eigen::Index row = 0;
  for (const auto& s : samples_) {
    out.middleRows(row, s.size()) = s.Z;
    row += s.size();
  }
  return out;
}

Dataset validate_dataset(std::vector<MarketData> markets, std::vector<IndividualData> individuals,
                         const ValidateOptions& options) {
  if (markets.empty()) throw DataError("dataset has no markets");
  Dataset ds;
  ds.goods_ = markets.front().num_goods();
  ds.characteristics_ = markets.front().num_characteristics();
  ds.instruments_ = markets.front().num_instruments();
  for (std::size_t m = 0; m < markets.size(); ++m) {
    const auto& mk = markets[m];
    if (mk.num_goods() != ds.goods_ || mk.num_characteristics() != ds.characteristics_ ||
        mk.num_instruments() != ds.instruments_) {
      throw DataError("dimension mismatch: market " + std::to_string(mk.market_id) +
                      " differs in J, k or l from market " +
                      std::to_string(markets.front().market_id));
    }
    if (!ds.index_.emplace(mk.market_id, m).second) {
      throw DataError("duplicate market id " + std::to_string(mk.market_id));
    }
  }

  ds.covariates_ = individuals.empty() ? 0 : static_cast<int>(individuals.front().Z.size());
  std::vector<std::vector<const IndividualData*>> grouped(markets.size());
  for (const auto& ind : individuals) {
    auto it = ds.index_.find(ind.market_id);
    if (it == ds.index_.end()) {
      throw DataError("individual refers to unknown market id " + std::to_string(ind.market_id));
    }
    if (ind.Z.size() != ds.covariates_) {
      throw DataError("dimension mismatch: individual covariate length " +
                      std::to_string(ind.Z.size()) + " differs from " +
                      std::to_string(ds.covariates_));
    }
    if (!ind.Z.allFinite()) throw DataError("individual has non-finite covariates");
    if (ind.d < 0 || ind.d > ds.goods_) {
      throw DataError("choice index out of range: d=" + std::to_string(ind.d) + " in market " +
                      std::to_string(ind.market_id) + " with J=" + std::to_string(ds.goods_));
    }
    grouped[it->second].push_back(&ind);
  }

  ds.samples_.resize(markets.size());
  for (std::size_t m = 0; m < markets.size(); ++m) {
    const auto& g = grouped[m];
    if (!individuals.empty() && g.empty()) {
      throw DataError("empty market: market " + std::to_string(markets[m].market_id) +
                      " has no individuals");
    }
    auto& s = ds.samples_[m];
    s.Z.resize(static_cast<Eigen::Index>(g.size()), ds.covariates_);
    s.choices.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      s.Z.row(static_cast<Eigen::Index>(i)) = g[i]->Z.transpose();
      s.choices[i] = g[i]->d;
    }
  }

  ds.markets_ = std::move(markets);
  if (!individuals.empty()) {
    double worst = 0.0;
    for (std::size_t m = 0; m < ds.markets_.size(); ++m) {
      Vector counted = ds.counted_shares(m);
      worst = std::max(worst,
                       (counted - ds.markets_[m].observed_shares.probs()).cwiseAbs().maxCoeff());
      if (options.recompute_shares) {
        SimplexVector shares(counted);
        if (!shares.interior()) {
          throw DataError("market " + std::to_string(ds.markets_[m].market_id) +
                          " has a good that nobody chose; counted shares are on the boundary");
        }
        ds.markets_[m].observed_shares = shares;
      }
    }
    ds.share_discrepancy_ = worst;
  }
  return ds;
}

Dataset validate_dataset(const Dataset& dataset) {
  Dataset out = validate_dataset(dataset.markets(), dataset.individuals(), {});
  return out;
}

Vector median_covariates(const Dataset& dataset) {
  const Matrix Z = dataset.pooled_covariates();
  if (Z.rows() == 0) throw DataError("median of covariates needs individuals");
  Vector med(Z.cols());
  std::vector<double> col(static_cast<std::size_t>(Z.rows()));
  for (Eigen::Index c = 0; c < Z.cols(); ++c) {
    for (Eigen::Index i = 0; i < Z.rows(); ++i) col[static_cast<std::size_t>(i)] = Z(i, c);
    const std::size_t n = col.size();
    const std::size_t mid = n / 2;
    std::nth_element(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(mid), col.end());
    double value = col[mid];
    if (n % 2 == 0) {
      const double lower =
          *std::max_element(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(mid));
      value = 0.5 * (value + lower);
    }
    med[c] = value;
  }
  return med;
}

Dataset project_covariates(const Dataset& dataset, const std::vector<int>& columns) {
  for (int c : columns) {
    if (c < 0 || c >= dataset.num_covariates()) {
      throw DataError("covariate column " + std::to_string(c) + " out of range");
    }
  }
  std::vector<IndividualData> inds = dataset.individuals();
  for (auto& ind : inds) {
    Vector z(static_cast<Eigen::Index>(columns.size()));
    for (std::size_t c = 0; c < columns.size(); ++c) z[static_cast<Eigen::Index>(c)] = ind.Z[columns[c]];
    ind.Z = std::move(z);
  }
  return validate_dataset(dataset.markets(), std::move(inds), {});
}

}  // namespace namedemand
