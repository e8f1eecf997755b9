#include "namedemand/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "namedemand/estimators.hpp"
#include "namedemand/logit.hpp"

namespace namedemand {

namespace {

double quad_form(const Vector& v, const Matrix& R) {
  if (R.size() == 0) return v.squaredNorm();
  if (R.rows() != v.size() || R.cols() != v.size()) {
    throw DataError("dimension mismatch between block moments and weight matrix");
  }
  return v.dot(R * v);
}

Vector weighted(const Vector& v, const Matrix& R) { return R.size() == 0 ? v : Vector(R * v); }

double fd_step(double x, double step) { return step * std::max(1.0, std::abs(x)); }

}  // namespace

Vector AggregateProblem::gamma_k(const Vector& theta, std::size_t k) const {
  return theta.segment(static_cast<Eigen::Index>(k) * gamma_dim, gamma_dim);
}

Vector AggregateProblem::prime_k(const Vector& theta, std::size_t k) const {
  return theta.segment(K * gamma_dim + static_cast<Eigen::Index>(k) * prime_dim, prime_dim);
}

double aggregate_loss(const AggregateProblem& problem, const Vector& theta) {
  if (theta.size() != problem.num_params()) throw DataError("theta has the wrong length");
  if (problem.K <= 0) throw DataError("aggregate problem needs at least one base point");
  double loss = 0.0;
  for (std::size_t k = 0; k < static_cast<std::size_t>(problem.K); ++k) {
    const Vector H = problem.block_moments(k, problem.gamma_k(theta, k), problem.prime_k(theta, k));
    loss += quad_form(H, k < problem.R.size() ? problem.R[k] : Matrix());
  }
  loss /= problem.K;
  if (problem.h > 0.0 && problem.aggregate) {
    loss += problem.h * quad_form(problem.aggregate(problem.gamma(theta)), problem.R0);
  }
  if (!std::isfinite(loss)) throw NumericalError("aggregate loss is not finite");
  return loss;
}

Vector block_gradient(const AggregateProblem& problem, const Vector& theta, double step) {
  Vector grad(theta.size());
  const Eigen::Index ng = problem.K * problem.gamma_dim;

  // gamma block: the aggregate term couples all base points.
  Vector x = theta;
  for (Eigen::Index i = 0; i < ng; ++i) {
    const double h = fd_step(theta[i], step);
    x[i] = theta[i] + h;
    const double up = aggregate_loss(problem, x);
    x[i] = theta[i] - h;
    const double down = aggregate_loss(problem, x);
    x[i] = theta[i];
    grad[i] = (up - down) / (2.0 * h);
  }

  // gamma' block: only H_k moves.
  for (std::size_t k = 0; k < static_cast<std::size_t>(problem.K); ++k) {
    const Vector g = problem.gamma_k(theta, k);
    Vector p = problem.prime_k(theta, k);
    const Vector H = problem.block_moments(k, g, p);
    Matrix Jk(H.size(), problem.prime_dim);
    for (Eigen::Index i = 0; i < problem.prime_dim; ++i) {
      const double base = p[i];
      const double h = fd_step(base, step);
      p[i] = base + h;
      const Vector up = problem.block_moments(k, g, p);
      p[i] = base - h;
      const Vector down = problem.block_moments(k, g, p);
      p[i] = base;
      Jk.col(i) = (up - down) / (2.0 * h);
    }
    const Matrix& Rk = k < problem.R.size() ? problem.R[k] : Matrix();
    grad.segment(ng + static_cast<Eigen::Index>(k) * problem.prime_dim, problem.prime_dim) =
        (2.0 / problem.K) * Jk.transpose() * weighted(H, Rk);
  }
  if (!grad.allFinite()) throw NumericalError("gradient is not finite");
  return grad;
}

AggregateProblem name_aggregate_problem(const Dataset& dataset,
                                        std::vector<std::vector<SimplexVector>> shares_per_base,
                                        const MomentSpec& moment_spec, double elasticity_target,
                                        double h) {
  const std::size_t K = shares_per_base.size();
  if (K == 0) throw DataError("aggregate problem needs at least one base point");
  const std::size_t M = dataset.num_markets();
  const Eigen::Index J = dataset.num_goods();
  for (const auto& shares : shares_per_base) {
    if (shares.size() != M) throw DataError("need one share vector per market and base point");
  }

  auto builder = std::make_shared<MomentBuilder>(dataset, moment_spec.moments);
  if (builder->needs_individual_probabilities()) {
    throw DataError("aggregate NAME problem supports product-level moments only");
  }
  auto deltas = std::make_shared<std::vector<Matrix>>(K, Matrix(static_cast<Eigen::Index>(M), J));
  auto inside = std::make_shared<std::vector<Matrix>>(K, Matrix(static_cast<Eigen::Index>(M), J));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t m = 0; m < M; ++m) {
      const auto& s = shares_per_base[k][m];
      (*deltas)[k].row(static_cast<Eigen::Index>(m)) = invert_logit(s).transpose();
      (*inside)[k].row(static_cast<Eigen::Index>(m)) = s.inside().transpose();
    }
  }
  const Matrix R = moment_spec.weight_matrix(builder->size());
  const Dataset* ds = &dataset;

  AggregateProblem problem;
  problem.K = static_cast<int>(K);
  problem.gamma_dim = 1;
  problem.prime_dim = dataset.num_characteristics();
  problem.R.assign(K, R);
  problem.h = h;
  problem.block_moments = [=](std::size_t k, const Vector& gamma_k, const Vector& prime_k) {
    Matrix xi = (*deltas)[k];
    for (std::size_t m = 0; m < M; ++m) {
      const auto& mk = ds->market(m);
      xi.row(static_cast<Eigen::Index>(m)) +=
          (gamma_k[0] * mk.P - mk.X * prime_k).transpose();
    }
    return builder->evaluate(xi);
  };
  problem.aggregate = [=](const Vector& gamma) {
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t m = 0; m < M; ++m) {
        const auto& P = ds->market(m).P;
        const Vector s = (*inside)[k].row(static_cast<Eigen::Index>(m)).transpose();
        total += (-gamma[static_cast<Eigen::Index>(k)] * P.array() * (1.0 - s.array())).sum();
      }
    }
    Vector G(1);
    G[0] = total / static_cast<double>(K * M * static_cast<std::size_t>(J)) - elasticity_target;
    return G;
  };
  return problem;
}

AggregateProblem name_aggregate_problem(const Dataset& dataset, const SharePredictor& predictor,
                                        const std::vector<Vector>& base_points,
                                        const MomentSpec& moment_spec, double elasticity_target,
                                        double h) {
  std::vector<std::vector<SimplexVector>> shares;
  shares.reserve(base_points.size());
  for (const auto& z : base_points) {
    std::vector<SimplexVector> row;
    row.reserve(dataset.num_markets());
    for (std::size_t m = 0; m < dataset.num_markets(); ++m) {
      const double floor = 0.5 / static_cast<double>(std::max<Eigen::Index>(1, dataset.sample(m).size()));
      row.push_back(floor_shares(predictor.predict(z, dataset.market(m).market_id), floor));
    }
    shares.push_back(std::move(row));
  }
  return name_aggregate_problem(dataset, std::move(shares), moment_spec, elasticity_target, h);
}

OptimizeResult minimize_aggregate(const AggregateProblem& problem, const Vector& theta0,
                                  const OptimizerConfig& cfg) {
  auto f = [&](const Vector& x) { return aggregate_loss(problem, x); };
  auto g = [&](const Vector& x) { return block_gradient(problem, x); };
  return rms_gradient_descent(f, g, theta0, cfg);
}

}  // namespace namedemand
