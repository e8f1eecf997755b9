#include "namedemand/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace namedemand {

namespace {

double safe_eval(const Objective& f, const Vector& x, int& evals) {
  ++evals;
  double v;
  try {
    v = f(x);
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
  return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
}

}  // namespace

OptimizeResult nelder_mead(const Objective& f, const Vector& x0, const OptimizerConfig& cfg) {
  const Eigen::Index n = x0.size();
  OptimizeResult res;
  std::vector<Vector> pts(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> vals(static_cast<std::size_t>(n + 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double step = x0[i] != 0.0 ? cfg.initial_step * std::max(1.0, std::abs(x0[i]))
                                     : cfg.initial_step;
    pts[static_cast<std::size_t>(i + 1)][i] += step;
  }
  for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = safe_eval(f, pts[i], res.evaluations);
  if (n == 0) {
    res.x = x0;
    res.f = vals[0];
    res.converged = std::isfinite(vals[0]);
    return res;
  }

  // Standard coefficients.
  constexpr double kReflect = 1.0, kExpand = 2.0, kContract = 0.5, kShrink = 0.5;
  std::vector<std::size_t> order(pts.size());

  for (res.iterations = 0; res.iterations < cfg.max_iter; ++res.iterations) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];

    double diameter = 0.0;
    for (std::size_t i : order) diameter = std::max(diameter, (pts[i] - pts[best]).cwiseAbs().maxCoeff());
    const double spread = vals[worst] - vals[best];
    if (std::isfinite(vals[best]) && (spread < cfg.f_tol || diameter < cfg.x_tol)) {
      res.converged = true;
      break;
    }

    Vector centroid = Vector::Zero(n);
    for (std::size_t i : order)
      if (i != worst) centroid += pts[i];
    centroid /= static_cast<double>(n);

    const Vector xr = centroid + kReflect * (centroid - pts[worst]);
    const double fr = safe_eval(f, xr, res.evaluations);
    if (fr < vals[best]) {
      const Vector xe = centroid + kExpand * (xr - centroid);
      const double fe = safe_eval(f, xe, res.evaluations);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    const Vector xc = outside ? Vector(centroid + kContract * (xr - centroid))
                              : Vector(centroid + kContract * (pts[worst] - centroid));
    const double fc = safe_eval(f, xc, res.evaluations);
    if (fc < (outside ? fr : vals[worst])) {
      pts[worst] = xc;
      vals[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i == best) continue;
      pts[i] = pts[best] + kShrink * (pts[i] - pts[best]);
      vals[i] = safe_eval(f, pts[i], res.evaluations);
    }
  }

  const auto it = std::min_element(vals.begin(), vals.end());
  res.x = pts[static_cast<std::size_t>(it - vals.begin())];
  res.f = *it;
  if (!std::isfinite(res.f)) {
    res.converged = false;
    res.message = "objective is not finite anywhere on the simplex";
  } else if (!res.converged) {
    res.message = "iteration limit reached";
  }
  return res;
}

OptimizeResult rms_gradient_descent(const Objective& f, const Gradient& grad, const Vector& x0,
                                    const OptimizerConfig& cfg) {
  OptimizeResult res;
  Vector x = x0;
  Vector acc = Vector::Zero(x.size());
  double fx = safe_eval(f, x, res.evaluations);
  if (!std::isfinite(fx)) {
    res.x = x;
    res.f = fx;
    res.message = "objective is not finite at the starting point";
    return res;
  }
  constexpr double kEps = 1e-12;
  double rate = cfg.learning_rate;
  for (res.iterations = 0; res.iterations < cfg.max_iter; ++res.iterations) {
    const Vector g = grad(x);
    if (!g.allFinite()) {
      res.message = "gradient is not finite";
      break;
    }
    acc = cfg.rms_decay * acc + (1.0 - cfg.rms_decay) * g.cwiseAbs2();
    // Bias-corrected second moment so the first steps are not oversized.
    const double correction = 1.0 - std::pow(cfg.rms_decay, res.iterations + 1);
    const Vector scale = ((acc / correction).array().sqrt() + kEps).matrix();
    const Vector step = -rate * g.cwiseQuotient(scale);
    const Vector xn = x + step;
    const double fn = safe_eval(f, xn, res.evaluations);
    if (!(fn <= fx)) {
      // Reject and shrink; the accumulator keeps its history.
      rate *= 0.5;
      if (rate < 1e-14) {
        res.converged = true;
        res.message = "step size underflow";
        break;
      }
      continue;
    }
    const double change = fx - fn;
    x = xn;
    fx = fn;
    rate = std::min(cfg.learning_rate, rate * 1.1);
    if (change < cfg.f_tol || step.cwiseAbs().maxCoeff() < cfg.x_tol) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  res.f = fx;
  if (!res.converged && res.message.empty()) res.message = "iteration limit reached";
  return res;
}

Vector central_difference_gradient(const Objective& f, const Vector& x, double step) {
  Vector g(x.size());
  Vector xp = x, xm = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = step * std::max(1.0, std::abs(x[i]));
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
    xp[i] = xm[i] = x[i];
  }
  return g;
}

OptimizeResult minimize(const Objective& f, const Vector& x0, const OptimizerConfig& cfg,
                        const Gradient& grad) {
  using Method = OptimizerConfig::Method;
  Method method = cfg.method;
  if (method == Method::kAuto) {
    method = x0.size() <= cfg.nelder_mead_max_dims ? Method::kNelderMead : Method::kGradientDescent;
  }
  if (method == Method::kNelderMead) return nelder_mead(f, x0, cfg);
  if (grad) return rms_gradient_descent(f, grad, x0, cfg);
  return rms_gradient_descent(
      f, [&f](const Vector& x) { return central_difference_gradient(f, x); }, x0, cfg);
}

}  // namespace namedemand
