#include "namedemand/logit.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace namedemand {

namespace {

// exp() of deviations is cached only while products stay far from overflow.
constexpr double kMaxCachedExponent = 300.0;

Vector normalized_simplex(Vector p) {
  // Share vectors built from exponentials can drift from 1 by a few ulps.
  p /= p.sum();
  return p;
}

}  // namespace

QuadratureRule::QuadratureRule(Matrix n, Vector w, std::uint64_t s)
    : nodes(std::move(n)), weights(std::move(w)), seed(s) {
  if (nodes.rows() != weights.size() || weights.size() == 0) {
    throw DataError("quadrature rule needs one weight per node");
  }
  if ((weights.array() < 0.0).any()) throw DataError("quadrature weights must be nonnegative");
  if (std::abs(weights.sum() - 1.0) > 1e-12) throw DataError("quadrature weights must sum to 1");
  if (!nodes.allFinite()) throw DataError("quadrature nodes must be finite");
}

QuadratureRule QuadratureRule::normal_draws(int draws, int dims, std::uint64_t seed) {
  if (draws < 1 || dims < 1) throw DataError("quadrature needs positive draws and dimensions");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix nodes(draws, dims);
  for (int r = 0; r < draws; ++r)
    for (int c = 0; c < dims; ++c) nodes(r, c) = normal(rng);
  Vector w = Vector::Constant(draws, 1.0 / draws);
  w /= w.sum();
  return QuadratureRule(std::move(nodes), std::move(w), seed);
}

QuadratureRule QuadratureRule::degenerate(int dims) {
  return QuadratureRule(Matrix::Zero(1, dims), Vector::Ones(1), 0);
}

Vector mean_utility(const ThetaPoint& theta, const Vector& xi_row, const MarketData& market) {
  if (theta.beta.size() != market.num_characteristics()) {
    throw DataError("beta has " + std::to_string(theta.beta.size()) + " entries, market has k=" +
                    std::to_string(market.num_characteristics()));
  }
  if (xi_row.size() != market.num_goods()) throw DataError("xi row length does not match J");
  return market.X * theta.beta - theta.alpha * market.P + xi_row;
}

SimplexVector logit_from_utilities(const Vector& delta) {
  if (!delta.allFinite()) throw NumericalError("non-finite utility index");
  const double top = std::max(0.0, delta.maxCoeff());
  Vector p(delta.size() + 1);
  p[0] = std::exp(-top);
  p.tail(delta.size()) = (delta.array() - top).exp();
  return SimplexVector(normalized_simplex(std::move(p)));
}

SimplexVector logit_shares(const ThetaPoint& theta, const Vector& xi_row, const MarketData& market,
                           const std::optional<Vector>& z_shift) {
  Vector delta = mean_utility(theta, xi_row, market);
  if (z_shift) {
    if (z_shift->size() != delta.size()) throw DataError("shift length does not match J");
    delta += *z_shift;
  }
  return logit_from_utilities(delta);
}

Vector invert_logit(const SimplexVector& shares) {
  if (!shares.interior()) throw DataError("cannot invert boundary shares");
  const Vector& p = shares.probs();
  return (p.tail(p.size() - 1).array().log() - std::log(p[0])).matrix();
}

MixedLogit::MixedLogit(const Matrix& deviations, const Vector& weights)
    : deviations_(deviations), weights_(weights) {
  if (deviations_.rows() != weights_.size()) {
    throw DataError("mixed logit needs one weight per node");
  }
  if (!deviations_.allFinite()) throw NumericalError("non-finite utility deviations");
  exp_ok_ = deviations_.size() == 0 || deviations_.cwiseAbs().maxCoeff() < kMaxCachedExponent;
  if (exp_ok_) exp_deviations_ = deviations_.array().exp().matrix();
}

Vector MixedLogit::stable_inside_shares(const Vector& delta) const {
  const Eigen::Index J = deviations_.cols();
  Vector out = Vector::Zero(J);
  Vector u(J);
  for (Eigen::Index r = 0; r < deviations_.rows(); ++r) {
    u = delta + deviations_.row(r).transpose();
    const double top = std::max(0.0, u.maxCoeff());
    const double outside = std::exp(-top);
    Vector e = (u.array() - top).exp();
    out += weights_[r] * e / (outside + e.sum());
  }
  return out;
}

Vector MixedLogit::inside_shares(const Vector& delta) const {
  if (delta.size() != deviations_.cols()) throw DataError("delta length does not match J");
  if (!delta.allFinite()) throw NumericalError("non-finite utility index");
  if (exp_ok_ && delta.cwiseAbs().maxCoeff() < kMaxCachedExponent) {
    const Vector ed = delta.array().exp();
    // rows: e^{delta_j} e^{mu_rj}
    const Matrix num = exp_deviations_ * ed.asDiagonal();
    const Vector denom = (num.rowwise().sum().array() + 1.0).matrix();
    if (denom.allFinite()) {
      return num.transpose() * (weights_.array() / denom.array()).matrix();
    }
  }
  return stable_inside_shares(delta);
}

SimplexVector MixedLogit::shares(const Vector& delta) const {
  const Vector inside = inside_shares(delta);
  Vector p(inside.size() + 1);
  p.tail(inside.size()) = inside;
  p[0] = std::max(0.0, 1.0 - inside.sum());
  return SimplexVector(normalized_simplex(std::move(p)));
}

Matrix MixedLogit::node_probabilities(const Vector& delta) const {
  const Eigen::Index J = deviations_.cols();
  Matrix out(deviations_.rows(), J + 1);
  for (Eigen::Index r = 0; r < deviations_.rows(); ++r) {
    const Vector u = delta + deviations_.row(r).transpose();
    const double top = std::max(0.0, u.maxCoeff());
    const double outside = std::exp(-top);
    const Vector e = (u.array() - top).exp();
    const double denom = outside + e.sum();
    out(r, 0) = outside / denom;
    out.row(r).tail(J) = e.transpose() / denom;
  }
  return out;
}

Matrix MixedLogit::jacobian(const Vector& delta) const {
  const Matrix p = node_probabilities(delta).rightCols(deviations_.cols());
  const Matrix wp = weights_.asDiagonal() * p;
  Matrix D = -wp.transpose() * p;
  D.diagonal() += wp.colwise().sum().transpose();
  return D;
}

ContractionResult contract_shares(const SimplexVector& target, const MixedLogit& model,
                                  const Vector& start, const ContractionOptions& options) {
  if (!target.interior()) throw DataError("contraction target must be strictly interior");
  if (!(options.tol > 0.0)) throw DataError("contraction tolerance must be positive");
  if (target.num_goods() != model.goods() || start.size() != model.goods()) {
    throw DataError("contraction dimensions do not match");
  }
  const Vector log_target = target.inside().array().log();
  ContractionResult res;
  res.delta = start;
  for (int it = 0; it < options.max_iter; ++it) {
    const Vector implied = model.inside_shares(res.delta);
    if ((implied.array() <= 0.0).any()) {
      throw NumericalError("implied share underflowed to zero during contraction");
    }
    const Vector step = log_target - implied.array().log().matrix();
    res.residual = step.cwiseAbs().maxCoeff();
    res.iterations = it;
    if (options.record_history) res.residual_history.push_back(res.residual);
    if (res.residual < options.tol) {
      res.converged = true;
      return res;
    }
    bool moved = false;
    if (options.newton_after >= 0 && it >= options.newton_after) {
      const Matrix jac = implied.cwiseInverse().asDiagonal() * model.jacobian(res.delta);
      const Vector d = jac.fullPivLu().solve(step);
      for (double t = 1.0; t > 1e-4 && d.allFinite(); t *= 0.5) {
        const Vector cand = res.delta + t * d;
        const Vector s = model.inside_shares(cand);
        if ((s.array() <= 0.0).any()) continue;
        if ((log_target - s.array().log().matrix()).cwiseAbs().maxCoeff() < res.residual) {
          res.delta = cand;
          moved = true;
          break;
        }
      }
    }
    if (!moved) res.delta += step;
    if (!res.delta.allFinite()) throw NumericalError("contraction produced non-finite utilities");
  }
  res.iterations = options.max_iter;
  res.converged = false;
  return res;
}

Matrix random_coefficient_deviations(const ThetaPoint& theta, const MarketData& market,
                                     const QuadratureRule& quad) {
  const Eigen::Index J = market.num_goods();
  if (!theta.has_random_coefficients()) return Matrix::Zero(quad.size(), J);
  if (quad.nodes.cols() != market.num_characteristics()) {
    throw DataError("quadrature dimension does not match the number of characteristics");
  }
  // (R x k) * diag(sigma) * (k x J)
  return quad.nodes * theta.sigma->asDiagonal() * market.X.transpose();
}

SimplexVector rc_shares(const ThetaPoint& theta, const Vector& xi_row, const MarketData& market,
                        const QuadratureRule& quad, const std::optional<Vector>& z_shift) {
  Vector delta = mean_utility(theta, xi_row, market);
  if (z_shift) {
    if (z_shift->size() != delta.size()) throw DataError("shift length does not match J");
    delta += *z_shift;
  }
  if (!theta.has_random_coefficients()) return logit_from_utilities(delta);
  const MixedLogit model(random_coefficient_deviations(theta, market, quad), quad.weights);
  return model.shares(delta);
}

ContractionResult blp_contraction(const SimplexVector& target, const ThetaPoint& theta,
                                  const MarketData& market, const QuadratureRule& quad,
                                  const ContractionOptions& options) {
  const MixedLogit model(random_coefficient_deviations(theta, market, quad), quad.weights);
  ContractionResult res = contract_shares(target, model, invert_logit(target), options);
  res.xi = res.delta - market.X * theta.beta + theta.alpha * market.P;
  return res;
}

}  // namespace namedemand
