#include "namedemand/extension.hpp"

#include <cmath>
#include <iomanip>

#include "namedemand/first_stage.hpp"

namespace namedemand {

Vector recover_E(const SimplexVector& shares_at_z0) {
  if (!shares_at_z0.interior()) throw DataError("cannot recover E from boundary shares");
  return shares_at_z0.inside() / shares_at_z0.outside();
}

std::vector<Vector> recover_E(const std::vector<SimplexVector>& shares_at_z0) {
  std::vector<Vector> out;
  out.reserve(shares_at_z0.size());
  for (const auto& s : shares_at_z0) out.push_back(recover_E(s));
  return out;
}

namespace {

void check_weight_inputs(const SimplexVector& s, const Vector& E) {
  if (!s.interior()) throw DataError("weights need interior shares");
  if (E.size() != s.num_goods()) throw DataError("E has the wrong length");
  if (!(E.array() > 0.0).all() || !E.allFinite()) throw DataError("E must be positive and finite");
}

}  // namespace

Vector solve_weights_logit(const SimplexVector& shares_at_z, const Vector& E) {
  check_weight_inputs(shares_at_z, E);
  const Vector s = shares_at_z.inside();
  const Eigen::Index J = s.size();
  // In v_j = w_j E_j the system reads (I - s 1') v = s.
  const Matrix A = Matrix::Identity(J, J) - s * Vector::Ones(J).transpose();
  const Eigen::PartialPivLU<Matrix> lu(A);
  if (!(std::abs(lu.determinant()) > 0.0)) throw NumericalError("singular weight system");
  const Vector v = lu.solve(s);
  const Vector w = v.cwiseQuotient(E);
  if (!(w.array() > 0.0).all()) throw NumericalError("nonpositive implied weight");
  return w;
}

Vector weights_logit_closed_form(const SimplexVector& shares_at_z, const Vector& E) {
  check_weight_inputs(shares_at_z, E);
  return (shares_at_z.inside() / shares_at_z.outside()).cwiseQuotient(E);
}

Vector solve_weights_rc(const SimplexVector& shares_at_z, const ThetaPoint& theta_hat,
                        const Vector& xi_hat, const MarketData& market, const QuadratureRule& quad,
                        const ContractionOptions& options) {
  if (!shares_at_z.interior()) throw DataError("weights need interior shares");
  const Vector delta0 = mean_utility(theta_hat, xi_hat, market);
  const Matrix dev = theta_hat.has_random_coefficients()
                         ? random_coefficient_deviations(theta_hat, market, quad)
                         : Matrix(Matrix::Zero(1, market.num_goods()));
  const Vector weights = theta_hat.has_random_coefficients() ? quad.weights : Vector(Vector::Ones(1));
  const MixedLogit model(dev, weights);
  const ContractionResult cr = contract_shares(shares_at_z, model, delta0, options);
  if (!cr.converged) {
    throw ConvergenceError("shift contraction did not converge", cr.iterations, cr.residual);
  }
  return cr.delta - delta0;
}

BetaRecovery recover_beta(const Matrix& c, const std::vector<Matrix>& X, const Vector& beta_z0,
                          const Vector* cell_weights) {
  const Eigen::Index M = c.rows();
  const Eigen::Index J = c.cols();
  if (static_cast<Eigen::Index>(X.size()) != M) throw DataError("need one X block per market");
  if (M == 0 || X.front().rows() != J) throw DataError("c and X dimensions differ");
  const Eigen::Index k = X.front().cols();
  if (beta_z0.size() != k) throw DataError("beta(Z0) has the wrong length");
  if (M * J < k) throw DataError("fewer cells than characteristics");

  Matrix A(M * J, k);
  Vector y(M * J);
  for (Eigen::Index m = 0; m < M; ++m) {
    if (X[static_cast<std::size_t>(m)].rows() != J || X[static_cast<std::size_t>(m)].cols() != k) {
      throw DataError("c and X dimensions differ");
    }
    A.middleRows(m * J, J) = X[static_cast<std::size_t>(m)];
    y.segment(m * J, J) = c.row(m).transpose();
  }
  if (cell_weights) {
    if (cell_weights->size() != M * J || (cell_weights->array() < 0.0).any()) {
      throw DataError("cell weights must be nonnegative with one entry per cell");
    }
    const Vector r = cell_weights->cwiseSqrt();
    A = r.asDiagonal() * A;
    y = r.asDiagonal() * y;
  }
  const Eigen::ColPivHouseholderQR<Matrix> qr(A);
  if (qr.rank() < k) throw NumericalError("stacked X is rank deficient");
  BetaRecovery out;
  out.delta_beta = qr.solve(y);
  out.beta = beta_z0 + out.delta_beta;
  return out;
}

BetaRecovery recover_beta(const Matrix& c, const Dataset& dataset, const Vector& beta_z0,
                          const Vector* cell_weights) {
  std::vector<Matrix> X;
  X.reserve(dataset.num_markets());
  for (const auto& mk : dataset.markets()) X.push_back(mk.X);
  return recover_beta(c, X, beta_z0, cell_weights);
}

BetaRecovery extend_logit(const std::vector<SimplexVector>& shares_at_z0,
                          const std::vector<SimplexVector>& shares_at_z, const Dataset& dataset,
                          const Vector& beta_z0) {
  const std::size_t M = dataset.num_markets();
  if (shares_at_z0.size() != M || shares_at_z.size() != M) {
    throw DataError("need one share vector per market");
  }
  Matrix c(static_cast<Eigen::Index>(M), dataset.num_goods());
  for (std::size_t m = 0; m < M; ++m) {
    const Vector w = solve_weights_logit(shares_at_z[m], recover_E(shares_at_z0[m]));
    c.row(static_cast<Eigen::Index>(m)) = w.array().log().matrix().transpose();
  }
  return recover_beta(c, dataset, beta_z0);
}

namespace {

Vector pack(const BasePoint& b, bool with_sigma, bool with_xi) {
  const Eigen::Index k = b.theta.beta.size();
  const Eigen::Index ns = with_sigma ? b.theta.sigma->size() : 0;
  const Eigen::Index nx = with_xi ? b.xi.size() : 0;
  Vector v(k + 1 + ns + nx);
  v.head(k) = b.theta.beta;
  v[k] = b.theta.alpha;
  if (ns) v.segment(k + 1, ns) = *b.theta.sigma;
  if (nx) v.tail(nx) = b.xi.reshaped();
  return v;
}

}  // namespace

std::pair<ThetaPoint, Matrix> interpolate_theta(const std::vector<BasePoint>& base, const Vector& z) {
  if (base.empty()) throw DataError("interpolation needs at least one base point");
  const Eigen::Index p = base.front().z.size();
  if (z.size() != p) throw DataError("query point has the wrong dimension");
  bool with_sigma = true;
  bool with_xi = true;
  for (const auto& b : base) {
    if (b.z.size() != p || b.theta.beta.size() != base.front().theta.beta.size()) {
      throw DataError("base points disagree in dimension");
    }
    with_sigma = with_sigma && b.theta.has_random_coefficients() &&
                 b.theta.sigma->size() == base.front().theta.sigma.value_or(Vector()).size();
    with_xi = with_xi && b.xi.size() > 0 && b.xi.rows() == base.front().xi.rows() &&
              b.xi.cols() == base.front().xi.cols();
  }

  for (const auto& b : base) {
    if (b.z == z) {
      ThetaPoint t = b.theta;
      t.eval_point = z;
      return {t, with_xi ? b.xi : Matrix()};
    }
  }

  const auto K = static_cast<Eigen::Index>(base.size());
  const Eigen::Index dim = pack(base.front(), with_sigma, with_xi).size();
  Matrix V(K, dim);
  Matrix Zb(K, p);
  for (Eigen::Index i = 0; i < K; ++i) {
    V.row(i) = pack(base[static_cast<std::size_t>(i)], with_sigma, with_xi).transpose();
    Zb.row(i) = base[static_cast<std::size_t>(i)].z.transpose();
  }

  Vector est;
  if (K == 1) {
    est = V.row(0).transpose();
  } else {
    const double h = median_pairwise_distance(Zb);
    Vector w(K);
    for (Eigen::Index i = 0; i < K; ++i) {
      w[i] = std::exp(-(Zb.row(i).transpose() - z).squaredNorm() / (2.0 * h * h));
    }
    if (!(w.sum() > 0.0)) {
      Eigen::Index nearest = 0;
      (Zb.rowwise() - z.transpose()).rowwise().squaredNorm().minCoeff(&nearest);
      est = V.row(nearest).transpose();
    } else {
      Matrix D(K, p + 1);
      D.col(0).setOnes();
      D.rightCols(p) = Zb.rowwise() - z.transpose();
      const Vector r = w.cwiseSqrt();
      const Matrix A = r.asDiagonal() * D;
      const Eigen::ColPivHouseholderQR<Matrix> qr(A);
      if (K > p && qr.rank() == p + 1) {
        est = qr.solve(r.asDiagonal() * V).row(0).transpose();
      } else {
        est = (V.transpose() * w) / w.sum();
      }
    }
  }

  const Eigen::Index k = base.front().theta.beta.size();
  std::optional<Vector> sigma;
  Eigen::Index pos = k + 1;
  if (with_sigma) {
    const Eigen::Index ns = base.front().theta.sigma->size();
    sigma = est.segment(pos, ns).cwiseMax(0.0);
    pos += ns;
  }
  Matrix xi;
  if (with_xi) {
    xi = est.tail(dim - pos).reshaped(base.front().xi.rows(), base.front().xi.cols());
  }
  return {ThetaPoint(est.head(k), est[k], sigma, z), xi};
}

void write_beta_curve(std::ostream& out, const std::vector<BetaCurvePoint>& curve) {
  if (curve.empty()) return;
  const Eigen::Index p = curve.front().z.size();
  const Eigen::Index k = curve.front().beta.size();
  for (Eigen::Index u = 0; u < p; ++u) out << (u ? "," : "") << "z_" << u;
  for (Eigen::Index c = 0; c < k; ++c) out << ",beta_" << c;
  out << "\n" << std::setprecision(17);
  for (const auto& pt : curve) {
    for (Eigen::Index u = 0; u < p; ++u) out << (u ? "," : "") << pt.z[u];
    for (Eigen::Index c = 0; c < k; ++c) out << "," << pt.beta[c];
    out << "\n";
  }
}

}  // namespace namedemand
