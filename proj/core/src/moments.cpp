#include "namedemand/moments.hpp"

#include <cmath>

namespace namedemand {

namespace {

double sd_or_one(const Vector& v) {
  if (v.size() < 2) return 1.0;
  const double var = (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1);
  return var > 0.0 ? std::sqrt(var) : 1.0;
}

std::string label(MomentId id, Eigen::Index a, Eigen::Index b = -1) {
  std::string s = to_string(id) + "[" + std::to_string(a);
  if (b >= 0) s += "," + std::to_string(b);
  return s + "]";
}

}  // namespace

double sample_covariance(const Vector& a, const Vector& b) {
  const Eigen::Index n = a.size();
  if (n != b.size()) throw DataError("covariance of vectors with different lengths");
  if (n < 2) return 0.0;
  return ((a.array() - a.mean()) * (b.array() - b.mean())).sum() / static_cast<double>(n - 1);
}

MomentBuilder::MomentBuilder(const Dataset& dataset, std::vector<MomentId> which, bool scale)
    : dataset_(&dataset), which_(std::move(which)) {
  const Eigen::Index M = static_cast<Eigen::Index>(dataset.num_markets());
  const Eigen::Index J = dataset.num_goods();
  const Eigen::Index k = dataset.num_characteristics();
  const Eigen::Index l = dataset.num_instruments();
  const Eigen::Index p = dataset.num_covariates();

  cell_X_.resize(M * J, k);
  cell_P_.resize(M * J);
  cell_W_.resize(M * J, l);
  for (Eigen::Index m = 0; m < M; ++m) {
    const auto& mk = dataset.market(static_cast<std::size_t>(m));
    cell_X_.middleRows(m * J, J) = mk.X;
    cell_P_.segment(m * J, J) = mk.P;
    if (l > 0) cell_W_.middleRows(m * J, J) = mk.W;
  }
  scale_X_ = Vector::Ones(k);
  scale_W_ = Vector::Ones(l);
  if (scale) {
    for (Eigen::Index c = 0; c < k; ++c) scale_X_[c] = sd_or_one(cell_X_.col(c));
    for (Eigen::Index c = 0; c < l; ++c) scale_W_[c] = sd_or_one(cell_W_.col(c));
    scale_P_ = sd_or_one(cell_P_);
  }

  for (MomentId id : which_) {
    switch (id) {
      case MomentId::kCovXXi:
        for (Eigen::Index c = 0; c < k; ++c) labels_.push_back(label(id, c)), expanded_ids_.push_back(id);
        break;
      case MomentId::kCovPXi:
        labels_.push_back(to_string(id));
        expanded_ids_.push_back(id);
        break;
      case MomentId::kCovWXi:
        if (l == 0) throw DataError("cov_w_xi requested but the data have no instruments");
        for (Eigen::Index c = 0; c < l; ++c) labels_.push_back(label(id, c)), expanded_ids_.push_back(id);
        break;
      case MomentId::kCovZChoiceX:
      case MomentId::kCovZ2ChoiceX:
        if (!dataset.has_individuals()) {
          throw DataError(to_string(id) + " requested but the data have no individuals");
        }
        needs_probs_ = true;
        for (Eigen::Index u = 0; u < p; ++u)
          for (Eigen::Index c = 0; c < k; ++c) labels_.push_back(label(id, u, c)), expanded_ids_.push_back(id);
        break;
    }
  }

  if (needs_probs_) {
    pooled_Z_ = dataset.pooled_covariates();
    const Matrix& Z = pooled_Z_;
    Matrix chosen_X(Z.rows(), k);
    Eigen::Index row = 0;
    for (Eigen::Index m = 0; m < M; ++m) {
      const auto& s = dataset.sample(static_cast<std::size_t>(m));
      const auto& mk = dataset.market(static_cast<std::size_t>(m));
      for (int d : s.choices) {
        if (d == 0) {
          chosen_X.row(row++).setZero();
        } else {
          chosen_X.row(row++) = mk.X.row(d - 1);
        }
      }
    }
    scale_Z_ = Vector::Ones(p * k);
    scale_Z2_ = Vector::Ones(p * k);
    if (scale) {
      for (Eigen::Index u = 0; u < p; ++u) {
        const double sz = sd_or_one(Z.col(u));
        const double sz2 = sd_or_one(Z.col(u).array().square().matrix());
        for (Eigen::Index c = 0; c < k; ++c) {
          const double sx = sd_or_one(chosen_X.col(c));
          scale_Z_[u * k + c] = sz * sx;
          scale_Z2_[u * k + c] = sz2 * sx;
        }
      }
    }
  }
}

Vector MomentBuilder::evaluate(const Matrix& xi, const IndividualProbabilities* probs) const {
  const Dataset& ds = *dataset_;
  const Eigen::Index M = static_cast<Eigen::Index>(ds.num_markets());
  const Eigen::Index J = ds.num_goods();
  const Eigen::Index k = ds.num_characteristics();
  const Eigen::Index l = ds.num_instruments();
  const Eigen::Index p = ds.num_covariates();
  if (xi.rows() != M || xi.cols() != J) throw DataError("xi dimensions do not match the dataset");
  if (needs_probs_ && (probs == nullptr || !*probs)) {
    throw DataError("requested moments need individual choice probabilities (a predictor) "
                    "but none was supplied");
  }

  Vector cell_xi(M * J);
  for (Eigen::Index m = 0; m < M; ++m) cell_xi.segment(m * J, J) = xi.row(m).transpose();

  // Residual characteristic X_d - sum_j s_ij X_j per individual, pooled.
  Matrix resid;
  const Matrix& Z = pooled_Z_;
  if (needs_probs_) {
    resid.resize(Z.rows(), k);
    Eigen::Index row = 0;
    for (Eigen::Index m = 0; m < M; ++m) {
      const auto& s = ds.sample(static_cast<std::size_t>(m));
      const auto& mk = ds.market(static_cast<std::size_t>(m));
      const Matrix pr = (*probs)(static_cast<std::size_t>(m));
      if (pr.rows() != s.size() || pr.cols() != J + 1) {
        throw DataError("individual probabilities have the wrong shape");
      }
      const Matrix expected = pr.rightCols(J) * mk.X;  // N_m x k
      for (Eigen::Index i = 0; i < s.size(); ++i) {
        const int d = s.choices[static_cast<std::size_t>(i)];
        Vector chosen = d == 0 ? Vector::Zero(k) : Vector(mk.X.row(d - 1).transpose());
        resid.row(row++) = chosen.transpose() - expected.row(i);
      }
    }
  }

  Vector out(size());
  Eigen::Index pos = 0;
  for (MomentId id : which_) {
    switch (id) {
      case MomentId::kCovXXi:
        for (Eigen::Index c = 0; c < k; ++c)
          out[pos++] = sample_covariance(cell_X_.col(c), cell_xi) / scale_X_[c];
        break;
      case MomentId::kCovPXi:
        out[pos++] = sample_covariance(cell_P_, cell_xi) / scale_P_;
        break;
      case MomentId::kCovWXi:
        for (Eigen::Index c = 0; c < l; ++c)
          out[pos++] = sample_covariance(cell_W_.col(c), cell_xi) / scale_W_[c];
        break;
      case MomentId::kCovZChoiceX:
        for (Eigen::Index u = 0; u < p; ++u)
          for (Eigen::Index c = 0; c < k; ++c)
            out[pos++] = sample_covariance(Z.col(u), resid.col(c)) / scale_Z_[u * k + c];
        break;
      case MomentId::kCovZ2ChoiceX:
        for (Eigen::Index u = 0; u < p; ++u) {
          const Vector z2 = Z.col(u).array().square();
          for (Eigen::Index c = 0; c < k; ++c)
            out[pos++] = sample_covariance(z2, resid.col(c)) / scale_Z2_[u * k + c];
        }
        break;
    }
  }
  return out;
}

std::vector<MomentValue> MomentBuilder::build(const Matrix& xi,
                                              const IndividualProbabilities* probs) const {
  const Vector v = evaluate(xi, probs);
  std::vector<MomentValue> out;
  out.reserve(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw NumericalError("moment " + labels_[static_cast<std::size_t>(i)] + " is not finite");
    out.push_back({expanded_ids_[static_cast<std::size_t>(i)], labels_[static_cast<std::size_t>(i)], v[i], 0.0});
  }
  return out;
}

std::vector<MomentValue> build_moments(const Dataset& dataset, const XiMatrix& xi,
                                       const IndividualProbabilities* probs,
                                       const std::vector<MomentId>& which, bool scale) {
  return MomentBuilder(dataset, which, scale).build(xi.values(), probs);
}

double md_loss(const Vector& deviations, const Matrix& R,
               const std::optional<AggregateBlock>& aggregate) {
  double loss = 0.0;
  if (R.size() == 0) {
    loss = deviations.squaredNorm();
  } else {
    if (R.rows() != deviations.size() || R.cols() != deviations.size()) {
      throw DataError("dimension mismatch between moments (" + std::to_string(deviations.size()) +
                      ") and weight matrix");
    }
    loss = deviations.dot(R * deviations);
  }
  if (aggregate && aggregate->h > 0.0) {
    const Vector& G = aggregate->G;
    if (aggregate->R0.size() == 0) {
      loss += aggregate->h * G.squaredNorm();
    } else {
      if (aggregate->R0.rows() != G.size() || aggregate->R0.cols() != G.size()) {
        throw DataError("dimension mismatch between aggregate moments and their weight matrix");
      }
      loss += aggregate->h * G.dot(aggregate->R0 * G);
    }
  }
  if (!std::isfinite(loss)) throw NumericalError("loss is not finite");
  return std::max(loss, 0.0);
}

double md_loss(const std::vector<MomentValue>& moments, const Matrix& R,
               const std::optional<AggregateBlock>& aggregate) {
  Vector dev(static_cast<Eigen::Index>(moments.size()));
  for (std::size_t i = 0; i < moments.size(); ++i) dev[static_cast<Eigen::Index>(i)] = moments[i].deviation();
  return md_loss(dev, R, aggregate);
}

}  // namespace namedemand
