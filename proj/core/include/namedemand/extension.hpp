#pragma once

#include <ostream>
#include <utility>
#include <vector>

#include "namedemand/logit.hpp"
#include "namedemand/types.hpp"

namespace namedemand {

// E_j = s_j(Z0) / s_0(Z0). Throws DataError for boundary shares.
Vector recover_E(const SimplexVector& shares_at_z0);
std::vector<Vector> recover_E(const std::vector<SimplexVector>& shares_at_z0);

/// Solves s_j + s_j sum_j' w_j' E_j' = w_j E_j for w (J x J linear system).
Vector solve_weights_logit(const SimplexVector& shares_at_z, const Vector& E);

// w_j = (s_j / s_0) / E_j.
Vector weights_logit_closed_form(const SimplexVector& shares_at_z, const Vector& E);

/// Shift c (length J) such that rc_shares at theta_hat, xi_hat with
/// z_shift = c reproduces shares_at_z. Throws ConvergenceError.
Vector solve_weights_rc(const SimplexVector& shares_at_z, const ThetaPoint& theta_hat,
                        const Vector& xi_hat, const MarketData& market, const QuadratureRule& quad,
                        const ContractionOptions& options = {});

struct BetaRecovery {
  Vector delta_beta;
  Vector beta;
};

/// Pooled least squares of c_jm on X_jm without intercept. c is M x J in
/// market order; cell_weights (length MJ, optional) gives a weighted fit.
BetaRecovery recover_beta(const Matrix& c, const std::vector<Matrix>& X, const Vector& beta_z0,
                          const Vector* cell_weights = nullptr);
BetaRecovery recover_beta(const Matrix& c, const Dataset& dataset, const Vector& beta_z0,
                          const Vector* cell_weights = nullptr);

struct BasePoint {
  Vector z;
  ThetaPoint theta;
  Matrix xi;  // may be empty
};

/// Gaussian-kernel local-linear smoother over base points (median-heuristic
/// bandwidth), falling back to the kernel-weighted mean when the local design
/// is singular. Exact at base points.
std::pair<ThetaPoint, Matrix> interpolate_theta(const std::vector<BasePoint>& base, const Vector& z);

/// Logit route from predicted shares at Z0 and Z to beta(Z).
BetaRecovery extend_logit(const std::vector<SimplexVector>& shares_at_z0,
                          const std::vector<SimplexVector>& shares_at_z, const Dataset& dataset,
                          const Vector& beta_z0);

struct BetaCurvePoint {
  Vector z;
  Vector beta;
};

// Columns z_0..z_{p-1}, beta_0..beta_{k-1}.
void write_beta_curve(std::ostream& out, const std::vector<BetaCurvePoint>& curve);

}  // namespace namedemand
