#include "namedemand/estimators.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "namedemand/parallel.hpp"

namespace namedemand {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

ThetaPoint unpack_name_theta(const Vector& x, Eigen::Index k, bool rc, const Vector& z0) {
  std::optional<Vector> sigma;
  if (rc) sigma = x.segment(k + 1, k).cwiseAbs();
  return ThetaPoint(x.head(k), x[k], sigma, z0);
}

}  // namespace

MomentSpec name_moments() { return MomentSpec({MomentId::kCovXXi, MomentId::kCovPXi}); }

MomentSpec oracle_moments() {
  return MomentSpec(
      {MomentId::kCovXXi, MomentId::kCovPXi, MomentId::kCovZChoiceX, MomentId::kCovZ2ChoiceX});
}

MomentSpec misspecified_moments() {
  return MomentSpec({MomentId::kCovXXi, MomentId::kCovPXi, MomentId::kCovZ2ChoiceX});
}

SimplexVector floor_shares(const SimplexVector& shares, double floor) {
  if (shares.probs().minCoeff() >= floor) return shares;
  Vector p = shares.probs().cwiseMax(floor);
  p /= p.sum();
  return SimplexVector(std::move(p));
}

std::vector<SimplexVector> predict_all(const Dataset& dataset, const SharePredictor& predictor,
                                       const Vector& z) {
  std::vector<SimplexVector> out;
  out.reserve(dataset.num_markets());
  for (const auto& mk : dataset.markets()) out.push_back(predictor.predict(z, mk.market_id));
  return out;
}

EstimationResult estimate_name_from_shares(const Dataset& dataset,
                                           const std::vector<SimplexVector>& shares_at_z0,
                                           const Vector& z0, const MomentSpec& moment_spec,
                                           const OptimizerConfig& optimizer,
                                           const NameOptions& options,
                                           const IndividualProbabilities* individual_probs) {
  const auto start_time = Clock::now();
  const std::size_t M = dataset.num_markets();
  const Eigen::Index J = dataset.num_goods();
  const Eigen::Index k = dataset.num_characteristics();
  if (shares_at_z0.size() != M) throw DataError("need one predicted share vector per market");
  for (std::size_t m = 0; m < M; ++m) {
    if (shares_at_z0[m].num_goods() != J) throw DataError("predicted shares have the wrong length");
    if (!shares_at_z0[m].interior()) {
      throw DataError("predicted shares of market " + std::to_string(dataset.market(m).market_id) +
                      " are on the boundary; cannot invert");
    }
  }

  const bool rc = options.random_coefficients;
  std::optional<QuadratureRule> quad;
  if (rc) quad = QuadratureRule::normal_draws(options.quadrature_draws, static_cast<int>(k), options.quadrature_seed);

  // Plain-logit inversion does not depend on theta, so it happens once.
  std::vector<Vector> delta_logit(M);
  for (std::size_t m = 0; m < M; ++m) delta_logit[m] = invert_logit(shares_at_z0[m]);

  const MomentBuilder builder(dataset, moment_spec.moments);
  const Matrix R = moment_spec.weight_matrix(builder.size());

  auto xi_at = [&](const ThetaPoint& theta) {
    Matrix xi(static_cast<Eigen::Index>(M), J);
    parallel_for(M, optimizer.threads, [&](std::size_t m) {
      const auto& mk = dataset.market(m);
      Vector delta;
      if (rc && theta.has_random_coefficients() && theta.sigma->cwiseAbs().maxCoeff() > 0.0) {
        const MixedLogit model(random_coefficient_deviations(theta, mk, *quad), quad->weights);
        const ContractionResult cr =
            contract_shares(shares_at_z0[m], model, delta_logit[m], options.contraction);
        if (!cr.converged) {
          throw ConvergenceError("share inversion did not converge", cr.iterations, cr.residual);
        }
        delta = cr.delta;
      } else {
        delta = delta_logit[m];
      }
      xi.row(static_cast<Eigen::Index>(m)) = (delta - mk.X * theta.beta + theta.alpha * mk.P).transpose();
    });
    return xi;
  };

  auto loss = [&](const Vector& x) {
    const ThetaPoint theta = unpack_name_theta(x, k, rc, z0);
    return md_loss(builder.evaluate(xi_at(theta), individual_probs), R);
  };

  Vector x0 = Vector::Zero(k + 1 + (rc ? k : 0));
  if (options.start) {
    x0.head(k) = options.start->beta;
    x0[k] = options.start->alpha;
    if (rc) x0.segment(k + 1, k) = options.start->sigma.value_or(Vector::Constant(k, 0.5));
  } else if (rc) {
    x0.segment(k + 1, k).setConstant(0.5);
  }

  const OptimizeResult opt = minimize(loss, x0, optimizer);
  EstimationResult res;
  res.theta = unpack_name_theta(opt.x, k, rc, z0);
  res.parameters = opt.x;
  res.converged = opt.converged;
  res.iterations = opt.iterations;
  res.final_loss = opt.f;
  res.message = opt.message;
  res.quadrature_seed = rc ? options.quadrature_seed : 0;
  if (std::isfinite(opt.f)) {
    res.xi = XiMatrix(xi_at(res.theta));
  } else {
    res.converged = false;
  }
  res.elapsed_seconds = seconds_since(start_time);
  return res;
}

EstimationResult estimate_name(const Dataset& dataset, const SharePredictor& predictor,
                               const Vector& z0, const MomentSpec& moment_spec,
                               const OptimizerConfig& optimizer, const NameOptions& options) {
  const auto start_time = Clock::now();
  // Prediction at z0 happens once, outside the optimization.
  std::vector<SimplexVector> shares = predict_all(dataset, predictor, z0);
  for (std::size_t m = 0; m < shares.size(); ++m) {
    shares[m] = floor_shares(shares[m], 0.5 / static_cast<double>(std::max<Eigen::Index>(1, dataset.sample(m).size())));
  }
  IndividualProbabilities probs = [&](std::size_t m) {
    return predictor.predict_batch(dataset.sample(m).Z, dataset.market(m).market_id);
  };
  EstimationResult res =
      estimate_name_from_shares(dataset, shares, z0, moment_spec, optimizer, options, &probs);
  res.elapsed_seconds = seconds_since(start_time);
  return res;
}

// ---------------------------------------------------------------------------
// Parametric nested fixed point

Eigen::Index ParametricSpec::num_params() const {
  Eigen::Index n = 1;  // alpha
  for (const auto& terms : beta_terms) n += static_cast<Eigen::Index>(terms.size());
  return n;
}

namespace {

double basis_value(const BasisTerm& t, const Vector& z) {
  if (t.power == 0) return 1.0;
  return std::pow(z[t.covariate], t.power);
}

}  // namespace

Vector ParametricSpec::beta_at(const Vector& params, const Vector& z) const {
  Vector beta(static_cast<Eigen::Index>(beta_terms.size()));
  Eigen::Index pos = 0;
  for (std::size_t c = 0; c < beta_terms.size(); ++c) {
    double b = 0.0;
    for (const auto& t : beta_terms[c]) b += params[pos++] * basis_value(t, z);
    beta[static_cast<Eigen::Index>(c)] = b;
  }
  return beta;
}

std::string ParametricSpec::describe() const {
  std::ostringstream os;
  for (std::size_t c = 0; c < beta_terms.size(); ++c) {
    if (c) os << ";";
    for (std::size_t t = 0; t < beta_terms[c].size(); ++t) {
      if (t) os << ",";
      const auto& term = beta_terms[c][t];
      if (term.power == 0) {
        os << "1";
      } else {
        os << "z";
        if (term.power != 1) os << term.power;
        if (term.covariate != 0) os << "_" << term.covariate;
      }
    }
  }
  return os.str();
}

ParametricSpec ParametricSpec::quadratic() {
  return ParametricSpec{{{{0, 0}, {0, 1}, {0, 2}}}, Vector()};
}

ParametricSpec ParametricSpec::quadratic_without_linear() {
  return ParametricSpec{{{{0, 0}, {0, 2}}}, Vector()};
}

ParametricSpec ParametricSpec::parse(const std::string& text, int characteristics) {
  if (text == "oracle") return quadratic();
  if (text == "misspecified") return quadratic_without_linear();
  ParametricSpec spec;
  std::stringstream blocks(text);
  std::string block;
  while (std::getline(blocks, block, ';')) {
    std::vector<BasisTerm> terms;
    std::stringstream items(block);
    std::string item;
    while (std::getline(items, item, ',')) {
      item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
      if (item == "1") {
        terms.push_back({0, 0});
        continue;
      }
      if (item.empty() || item[0] != 'z') throw DataError("cannot parse basis term '" + item + "'");
      BasisTerm t{0, 1};
      const auto under = item.find('_');
      const std::string power = item.substr(1, under == std::string::npos ? std::string::npos : under - 1);
      try {
        if (!power.empty()) t.power = std::stoi(power);
        if (under != std::string::npos) t.covariate = std::stoi(item.substr(under + 1));
      } catch (const std::exception&) {
        throw DataError("cannot parse basis term '" + item + "'");
      }
      if (t.power < 1 || t.covariate < 0) throw DataError("invalid basis term '" + item + "'");
      terms.push_back(t);
    }
    if (terms.empty()) throw DataError("every coefficient needs at least one basis term");
    spec.beta_terms.push_back(std::move(terms));
  }
  if (static_cast<int>(spec.beta_terms.size()) != characteristics) {
    throw DataError("parametric spec has " + std::to_string(spec.beta_terms.size()) +
                    " coefficient blocks but the data have k=" + std::to_string(characteristics));
  }
  return spec;
}

EstimationResult estimate_parametric(const Dataset& dataset, const ParametricSpec& spec,
                                     const MomentSpec& moment_spec,
                                     const OptimizerConfig& optimizer,
                                     const ParametricOptions& options) {
  const auto start_time = Clock::now();
  const std::size_t M = dataset.num_markets();
  const Eigen::Index J = dataset.num_goods();
  const Eigen::Index k = dataset.num_characteristics();
  if (static_cast<Eigen::Index>(spec.beta_terms.size()) != k) {
    throw DataError("parametric spec must list basis terms for each of the k characteristics");
  }
  for (const auto& terms : spec.beta_terms) {
    if (terms.empty()) throw DataError("every coefficient needs at least one basis term");
    for (const auto& t : terms) {
      if (t.power > 0 && (t.covariate < 0 || t.covariate >= dataset.num_covariates())) {
        throw DataError("basis term refers to a covariate the data do not have");
      }
    }
  }
  if (!dataset.has_individuals()) throw DataError("parametric estimation needs individual data");
  const Eigen::Index n_params = spec.num_params();
  if (spec.initial.size() != 0 && spec.initial.size() != n_params) {
    throw DataError("initial parameter vector has the wrong length");
  }

  // Basis matrices per market and characteristic (N_m x T_c).
  std::vector<std::vector<Matrix>> basis(M);
  std::vector<Vector> log_ratio(M);
  for (std::size_t m = 0; m < M; ++m) {
    const auto& s = dataset.sample(m);
    for (const auto& terms : spec.beta_terms) {
      Matrix B(s.size(), static_cast<Eigen::Index>(terms.size()));
      for (Eigen::Index i = 0; i < s.size(); ++i) {
        const Vector z = s.Z.row(i).transpose();
        for (std::size_t t = 0; t < terms.size(); ++t) B(i, static_cast<Eigen::Index>(t)) = basis_value(terms[t], z);
      }
      basis[m].push_back(std::move(B));
    }
    log_ratio[m] = invert_logit(dataset.market(m).observed_shares);
  }

  const MomentBuilder builder(dataset, moment_spec.moments);
  const Matrix R = moment_spec.weight_matrix(builder.size());

  // Individual choice probabilities from the last evaluation.
  std::vector<Matrix> node_probs(M);
  Matrix xi(static_cast<Eigen::Index>(M), J);

  auto evaluate_xi = [&](const Vector& x, bool want_probs) {
    const double alpha = x[n_params - 1];
    parallel_for(M, optimizer.threads, [&](std::size_t m) {
      const auto& mk = dataset.market(m);
      const Eigen::Index n = dataset.sample(m).size();
      Matrix deviations = Matrix::Zero(n, J);
      Eigen::Index pos = 0;
      for (Eigen::Index c = 0; c < k; ++c) {
        const auto& B = basis[m][static_cast<std::size_t>(c)];
        const Vector beta_i = B * x.segment(pos, B.cols());
        pos += B.cols();
        deviations += beta_i * mk.X.col(c).transpose();
      }
      const Vector weights = Vector::Constant(n, 1.0 / static_cast<double>(n));
      const Vector mean_dev = deviations.colwise().mean().transpose();
      const MixedLogit model(deviations, weights);
      const ContractionResult cr = contract_shares(mk.observed_shares, model,
                                                   log_ratio[m] - mean_dev, options.contraction);
      if (!cr.converged) {
        throw ConvergenceError("inner share inversion did not converge in market " +
                                   std::to_string(mk.market_id),
                               cr.iterations, cr.residual);
      }
      xi.row(static_cast<Eigen::Index>(m)) = (cr.delta + alpha * mk.P).transpose();
      if (want_probs) node_probs[m] = model.node_probabilities(cr.delta);
    });
  };

  const IndividualProbabilities probs = [&](std::size_t m) { return node_probs[m]; };
  const bool want_probs = builder.needs_individual_probabilities();
  auto loss = [&](const Vector& x) {
    evaluate_xi(x, want_probs);
    return md_loss(builder.evaluate(xi, &probs), R);
  };

  const Vector x0 = spec.initial.size() ? spec.initial : Vector(Vector::Zero(n_params));
  const OptimizeResult opt = minimize(loss, x0, optimizer);

  EstimationResult res;
  res.parameters = opt.x;
  res.converged = opt.converged;
  res.iterations = opt.iterations;
  res.final_loss = opt.f;
  res.message = opt.message;
  const Vector z0 = median_covariates(dataset);
  res.theta = ThetaPoint(spec.beta_at(opt.x, z0), opt.x[n_params - 1], std::nullopt, z0);
  try {
    evaluate_xi(opt.x, false);
    res.xi = XiMatrix(xi);
  } catch (const Error& e) {
    res.converged = false;
    res.message = e.what();
  }
  if (!std::isfinite(opt.f)) res.converged = false;
  res.elapsed_seconds = seconds_since(start_time);
  return res;
}

// ---------------------------------------------------------------------------
// Bunching

bool Box::contains(const Vector& z) const {
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (z[i] < lower[i]) return false;
    if (std::isinf(upper[i]) && upper[i] > 0) continue;
    if (z[i] >= upper[i]) return false;
  }
  return true;
}

BunchingSpec BunchingSpec::cuts(int covariates, int covariate, const std::vector<double>& points) {
  if (covariate < 0 || covariate >= covariates) throw DataError("bunching covariate out of range");
  std::vector<double> sorted = points;
  std::sort(sorted.begin(), sorted.end());
  const double inf = std::numeric_limits<double>::infinity();
  BunchingSpec spec;
  double lo = -inf;
  for (std::size_t r = 0; r <= sorted.size(); ++r) {
    Box b{Vector::Constant(covariates, -inf), Vector::Constant(covariates, inf)};
    b.lower[covariate] = lo;
    b.upper[covariate] = r < sorted.size() ? sorted[r] : inf;
    lo = b.upper[covariate];
    spec.regions.push_back(std::move(b));
  }
  return spec;
}

BunchingSpec BunchingSpec::quantile_cuts(const Dataset& dataset, int covariate, int regions) {
  if (regions < 1) throw DataError("need at least one bunching region");
  const Matrix Z = dataset.pooled_covariates();
  if (covariate < 0 || covariate >= Z.cols()) throw DataError("bunching covariate out of range");
  std::vector<double> col(Z.col(covariate).data(), Z.col(covariate).data() + Z.rows());
  std::sort(col.begin(), col.end());
  std::vector<double> points;
  for (int r = 1; r < regions; ++r) {
    const auto idx = static_cast<std::size_t>(static_cast<double>(r) / regions * static_cast<double>(col.size()));
    points.push_back(col[std::min(idx, col.size() - 1)]);
  }
  return cuts(static_cast<int>(Z.cols()), covariate, points);
}

std::vector<EstimationResult> estimate_bunching(const Dataset& dataset, const BunchingSpec& spec,
                                                const MomentSpec& moment_spec,
                                                const OptimizerConfig& optimizer) {
  if (spec.regions.empty()) throw DataError("bunching needs at least one region");
  if (!dataset.has_individuals()) throw DataError("bunching needs individual data");
  const int J = dataset.num_goods();
  const std::size_t K = spec.regions.size();
  for (const auto& b : spec.regions) {
    if (b.lower.size() != dataset.num_covariates() || b.upper.size() != dataset.num_covariates()) {
      throw DataError("bunching region has the wrong dimension");
    }
  }

  // counts[r][m] over goods; every individual must fall in exactly one region.
  std::vector<std::vector<Vector>> counts(K, std::vector<Vector>(dataset.num_markets(), Vector::Zero(J + 1)));
  std::vector<std::vector<Vector>> region_z(K);
  for (std::size_t m = 0; m < dataset.num_markets(); ++m) {
    const auto& s = dataset.sample(m);
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const Vector z = s.Z.row(i).transpose();
      int hits = 0;
      for (std::size_t r = 0; r < K; ++r) {
        if (!spec.regions[r].contains(z)) continue;
        ++hits;
        counts[r][m][s.choices[static_cast<std::size_t>(i)]] += 1.0;
        region_z[r].push_back(z);
      }
      if (hits != 1) {
        throw DataError(hits == 0 ? "bunching regions do not cover the observed covariates"
                                  : "bunching regions overlap");
      }
    }
  }

  std::vector<EstimationResult> out;
  out.reserve(K);
  for (std::size_t r = 0; r < K; ++r) {
    std::vector<MarketData> usable;
    std::vector<SimplexVector> shares;
    for (std::size_t m = 0; m < dataset.num_markets(); ++m) {
      const Vector& c = counts[r][m];
      if ((c.array() <= 0.0).any()) continue;
      SimplexVector sh(c / c.sum());
      const auto& mk = dataset.market(m);
      usable.emplace_back(mk.market_id, mk.X, mk.P, mk.W, sh);
      shares.push_back(sh);
    }
    if (usable.empty() || region_z[r].empty()) {
      throw DataError("empty region: bunching region " + std::to_string(r) +
                      " has no market with every good chosen");
    }
    Matrix Zr(static_cast<Eigen::Index>(region_z[r].size()), dataset.num_covariates());
    for (std::size_t i = 0; i < region_z[r].size(); ++i) Zr.row(static_cast<Eigen::Index>(i)) = region_z[r][i].transpose();
    Vector center(Zr.cols());
    for (Eigen::Index c = 0; c < Zr.cols(); ++c) {
      std::vector<double> col(Zr.col(c).data(), Zr.col(c).data() + Zr.rows());
      std::nth_element(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(col.size() / 2), col.end());
      center[c] = col[col.size() / 2];
    }
    const std::size_t used = usable.size();
    const Dataset region = validate_dataset(std::move(usable), {}, {});
    EstimationResult res = estimate_name_from_shares(region, shares, center, moment_spec, optimizer);
    res.message += (res.message.empty() ? "" : "; ") + std::string("region ") + std::to_string(r) +
                   " used " + std::to_string(used) + " of " + std::to_string(dataset.num_markets()) +
                   " markets";
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace namedemand
