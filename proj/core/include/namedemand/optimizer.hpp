#pragma once

#include <functional>
#include <string>

#include "namedemand/types.hpp"

namespace namedemand {

using Objective = std::function<double(const Vector&)>;
using Gradient = std::function<Vector(const Vector&)>;

struct OptimizerConfig {
  enum class Method { kAuto, kNelderMead, kGradientDescent };
  Method method = Method::kAuto;
  double f_tol = 1e-10;   // loss change
  double x_tol = 1e-8;    // parameter step
  int max_iter = 10000;
  double initial_step = 0.25;   // Nelder-Mead simplex edge
  double learning_rate = 0.01;  // gradient descent base rate
  double rms_decay = 0.9;
  int threads = 1;              // market-level parallelism inside one loss evaluation
  // Parameter counts up to this use Nelder-Mead under kAuto.
  int nelder_mead_max_dims = 6;
};

struct OptimizeResult {
  Vector x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

// Derivative-free simplex search. Non-finite objective values are treated as
// +infinity so the simplex retreats from infeasible regions.
OptimizeResult nelder_mead(const Objective& f, const Vector& x0, const OptimizerConfig& cfg);

// Gradient descent with a per-coordinate RMS accumulator.
OptimizeResult rms_gradient_descent(const Objective& f, const Gradient& grad, const Vector& x0,
                                    const OptimizerConfig& cfg);

// Picks Nelder-Mead for small problems, gradient descent otherwise. Without a
// gradient callback, central differences are used.
OptimizeResult minimize(const Objective& f, const Vector& x0, const OptimizerConfig& cfg,
                        const Gradient& grad = nullptr);

// Central finite-difference gradient.
Vector central_difference_gradient(const Objective& f, const Vector& x, double step = 1e-6);

}  // namespace namedemand
