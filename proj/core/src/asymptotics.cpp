#include "cara/asymptotics.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <cmath>

#include "cara/errors.hpp"

namespace cara {

namespace {

constexpr double kMaxCondition = 1e12;
constexpr double kPsdTolerance = 1e-10;

std::vector<std::pair<double, double>> gauss_legendre(int nodes, double lower, double upper) {
  // probability weights for U(lower, upper)
  std::vector<double> abscissa;
  std::vector<double> weight;
  auto fill = [&](const auto& a, const auto& w) {
    abscissa.assign(a.begin(), a.end());
    weight.assign(w.begin(), w.end());
  };
  switch (nodes) {
    case 7: fill(boost::math::quadrature::gauss<double, 7>::abscissa(), boost::math::quadrature::gauss<double, 7>::weights()); break;
    case 15: fill(boost::math::quadrature::gauss<double, 15>::abscissa(), boost::math::quadrature::gauss<double, 15>::weights()); break;
    case 20: fill(boost::math::quadrature::gauss<double, 20>::abscissa(), boost::math::quadrature::gauss<double, 20>::weights()); break;
    case 30: fill(boost::math::quadrature::gauss<double, 30>::abscissa(), boost::math::quadrature::gauss<double, 30>::weights()); break;
    case 64: fill(boost::math::quadrature::gauss<double, 64>::abscissa(), boost::math::quadrature::gauss<double, 64>::weights()); break;
    default:
      throw ConfigError("expectation.nodes_per_dimension", "supported node counts are 7, 15, 20, 30, 64");
  }
  // boost stores the non-negative half of a symmetric rule
  std::vector<std::pair<double, double>> out;
  const double mid = 0.5 * (lower + upper);
  const double half = 0.5 * (upper - lower);
  for (std::size_t i = abscissa.size(); i-- > 0;) {
    if (abscissa[i] == 0.0) continue;
    out.emplace_back(mid - half * abscissa[i], 0.5 * weight[i]);
  }
  for (std::size_t i = 0; i < abscissa.size(); ++i) {
    out.emplace_back(mid + half * abscissa[i], abscissa[i] == 0.0 ? 0.5 * weight[i] : 0.5 * weight[i]);
  }
  return out;
}

void require_psd(const Matrix& m, const char* what) {
  if (m.size() == 0) return;
  if (min_eigenvalue(m) < -kPsdTolerance) {
    throw NumericalError(std::string(what) + " is not positive semidefinite");
  }
}

void check_model_rule(const TrialModel& model, const AllocationRule& rule) {
  if (rule.arm_count() != model.arm_count() || rule.dimension() != model.dimension()) {
    throw DimensionError("rule '" + rule.name() + "' does not match the model dimensions");
  }
}

std::vector<Matrix> split_blocks(const Matrix& full, int K, int d) {
  std::vector<Matrix> blocks;
  blocks.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) blocks.push_back(arm_block(full, k, d));
  return blocks;
}

}  // namespace

std::string_view expectation_method_name(ExpectationMethod method) noexcept {
  switch (method) {
    case ExpectationMethod::exact_enumeration: return "exact-enumeration";
    case ExpectationMethod::quadrature: return "quadrature";
    case ExpectationMethod::monte_carlo: return "monte-carlo";
  }
  return "unknown";
}

// --- Integrator -------------------------------------------------------------

CovariateIntegrator::CovariateIntegrator(const CovariateSpec& spec, ExpectationPolicy policy)
    : spec_(spec), policy_(policy) {
  if (policy_.force_monte_carlo) {
    method_ = ExpectationMethod::monte_carlo;
    return;
  }
  if (spec.has_finite_support()) {
    method_ = ExpectationMethod::exact_enumeration;
    return;
  }
  int uniform = 0;
  for (const auto& c : spec.coordinates()) {
    if (std::holds_alternative<UniformCoordinate>(c)) ++uniform;
  }
  if (uniform > policy_.max_quadrature_dimensions) {
    method_ = ExpectationMethod::monte_carlo;
    return;
  }
  method_ = ExpectationMethod::quadrature;
  for (const auto& c : spec.coordinates()) {
    if (const auto* u = std::get_if<UniformCoordinate>(&c)) {
      axes_.push_back(gauss_legendre(policy_.nodes_per_dimension, u->lower, u->upper));
    } else if (const auto* tp = std::get_if<TwoPointCoordinate>(&c)) {
      axes_.push_back({{tp->low, 1.0 - tp->p_high}, {tp->high, tp->p_high}});
    } else {
      axes_.push_back({{std::get<ConstantCoordinate>(c).value, 1.0}});
    }
  }
}

std::size_t CovariateIntegrator::node_count() const noexcept {
  switch (method_) {
    case ExpectationMethod::monte_carlo: return policy_.monte_carlo_draws;
    case ExpectationMethod::exact_enumeration: return spec_.support().size();
    case ExpectationMethod::quadrature: {
      std::size_t n = 1;
      for (const auto& a : axes_) n *= a.size();
      return n;
    }
  }
  return 0;
}

// --- Theory -----------------------------------------------------------------

TargetAllocation target_allocation(const TrialModel& model, const AllocationRule& rule,
                                   const ExpectationPolicy& policy) {
  check_model_rule(model, rule);
  const int K = model.arm_count();
  const int d = model.dimension();
  const CovariateIntegrator integrator(model.covariates(), policy);
  const Matrix& theta = model.true_theta();

  Vector v = Vector::Zero(K);
  Vector second = Vector::Zero(K);
  Matrix dg = Matrix::Zero(K, static_cast<Eigen::Index>(K) * d);
  integrator.for_each([&](const Vector& x, double w) {
    const Vector pi = probabilities(rule, theta, x);
    v += w * pi;
    second += w * pi.cwiseAbs2();
    dg += w * jacobian(rule, theta, x);
  });

  TargetAllocation out;
  out.v = v;
  out.dg_dtheta = split_blocks(dg, K, d);
  out.method = integrator.method();
  out.node_count = integrator.node_count();
  out.standard_error = Vector::Zero(K);
  if (out.method == ExpectationMethod::monte_carlo) {
    const double n = static_cast<double>(out.node_count);
    out.standard_error = ((second - v.cwiseAbs2()).cwiseMax(0.0) / n).cwiseSqrt();
  }
  return out;
}

InformationMatrices info_matrices(const TrialModel& model, const AllocationRule& rule,
                                  const ExpectationPolicy& policy) {
  check_model_rule(model, rule);
  const int K = model.arm_count();
  const int d = model.dimension();
  const CovariateIntegrator integrator(model.covariates(), policy);
  const Matrix& theta = model.true_theta();

  InformationMatrices out;
  out.information.assign(static_cast<std::size_t>(K), Matrix::Zero(d, d));
  integrator.for_each([&](const Vector& x, double w) {
    const Vector pi = probabilities(rule, theta, x);
    for (int k = 0; k < K; ++k) {
      out.information[static_cast<std::size_t>(k)] +=
          (w * pi(k)) * conditional_fisher_info(model.arm(k), model.true_theta(k), x);
    }
  });
  for (int k = 0; k < K; ++k) {
    const Matrix& info = out.information[static_cast<std::size_t>(k)];
    const double cond = condition_number(info);
    if (cond > kMaxCondition) {
      throw SingularInformationError(k, "information matrix is singular (condition number " +
                                            std::to_string(cond) + ")");
    }
    out.V.push_back(spd_inverse(info));
  }
  return out;
}

SigmaParts assemble_sigma(const Vector& v, const std::vector<Matrix>& dg_dtheta,
                          const std::vector<Matrix>& V_blocks) {
  SigmaParts out;
  out.sigma1 = Matrix(v.asDiagonal()) - v * v.transpose();
  out.sigma2 = Matrix::Zero(v.size(), v.size());
  for (std::size_t k = 0; k < dg_dtheta.size(); ++k) {
    if (V_blocks[k].size() == 0) continue;
    out.sigma2 += dg_dtheta[k] * V_blocks[k] * dg_dtheta[k].transpose();
  }
  out.sigma2 = 0.5 * (out.sigma2 + out.sigma2.transpose());
  out.sigma = out.sigma1 + 2.0 * out.sigma2;
  return out;
}

SigmaParts sigma(const TrialModel& model, const AllocationRule& rule,
                 const ExpectationPolicy& policy) {
  const auto target = target_allocation(model, rule, policy);
  const auto info = info_matrices(model, rule, policy);
  return assemble_sigma(target.v, target.dg_dtheta, info.V);
}

Matrix assemble_conditional_sigma(const Vector& pi, const Matrix& full_jacobian,
                                  const std::vector<Matrix>& V_blocks, double mass) {
  const auto K = pi.size();
  const auto d = full_jacobian.cols() / K;
  Matrix out = Matrix(pi.asDiagonal()) - pi * pi.transpose();
  Matrix feedback = Matrix::Zero(K, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    if (V_blocks[static_cast<std::size_t>(k)].size() == 0) continue;
    const Matrix block = full_jacobian.middleCols(k * d, d);
    feedback += block * V_blocks[static_cast<std::size_t>(k)] * block.transpose();
  }
  out += 2.0 * mass * 0.5 * (feedback + feedback.transpose());
  return out;
}

Matrix sigma_given_x(const TrialModel& model, const AllocationRule& rule, const Vector& x,
                     const ExpectationPolicy& policy) {
  check_model_rule(model, rule);
  const double mass = model.covariates().mass(x);
  if (!(mass > 0.0)) {
    throw ZeroMassCovariateError("covariate value has zero probability under the model");
  }
  const auto info = info_matrices(model, rule, policy);
  return assemble_conditional_sigma(probabilities(rule, model.true_theta(), x),
                                    jacobian(rule, model.true_theta(), x), info.V, mass);
}

TheoryReport theory_report(const TrialModel& model, const AllocationRule& rule,
                           const std::vector<Vector>& x_list, const ExpectationPolicy& policy) {
  const auto target = target_allocation(model, rule, policy);
  const auto info = info_matrices(model, rule, policy);
  const auto parts = assemble_sigma(target.v, target.dg_dtheta, info.V);

  for (Eigen::Index k = 0; k < target.v.size(); ++k) {
    if (!(target.v(k) > 0.0 && target.v(k) < 1.0)) {
      throw NumericalError("target allocation is not strictly inside the simplex");
    }
  }
  require_psd(parts.sigma1, "Sigma1");
  require_psd(parts.sigma, "Sigma");

  TheoryReport report;
  report.v = target.v;
  report.v_standard_error = target.standard_error;
  report.dg_dtheta = target.dg_dtheta;
  report.information = info.information;
  report.V_blocks = info.V;
  report.V = block_diagonal(info.V);
  report.sigma1 = parts.sigma1;
  report.sigma2 = parts.sigma2;
  report.sigma = parts.sigma;
  report.method = target.method;
  report.node_count = target.node_count;

  const auto& points = x_list.empty() ? model.covariates().support() : x_list;
  for (const auto& x : points) {
    const double mass = model.covariates().mass(x);
    if (!(mass > 0.0)) {
      throw ZeroMassCovariateError("conditional analysis point has zero probability");
    }
    ConditionalTheory c;
    c.x = x;
    c.mass = mass;
    c.pi = probabilities(rule, model.true_theta(), x);
    c.sigma_given_x =
        assemble_conditional_sigma(c.pi, jacobian(rule, model.true_theta(), x), info.V, mass);
    require_psd(c.sigma_given_x, "Sigma given x");
    report.conditional.push_back(std::move(c));
  }
  return report;
}

Matrix cara_variance(const TrialModel& model, const AllocationRule& rule, int k,
                     const ExpectationPolicy& policy) {
  const auto target = target_allocation(model, rule, policy);
  const auto info = info_matrices(model, rule, policy);
  return target.v(k) * info.V.at(static_cast<std::size_t>(k));
}

Matrix fixed_design_variance(const TrialModel& model, int k, const ExpectationPolicy& policy) {
  const int d = model.dimension();
  const CovariateIntegrator integrator(model.covariates(), policy);
  Matrix expected = Matrix::Zero(d, d);
  integrator.for_each([&](const Vector& x, double w) {
    expected += w * conditional_fisher_info(model.arm(k), model.true_theta(k), x);
  });
  if (condition_number(expected) > kMaxCondition) {
    throw SingularInformationError(k, "expected conditional information is singular");
  }
  return spd_inverse(expected);
}

std::vector<Matrix> lse_sandwich(const TrialModel& model, const AllocationRule& rule,
                                 const ConditionalVariance& variance,
                                 const ExpectationPolicy& policy) {
  check_model_rule(model, rule);
  const int K = model.arm_count();
  const int d = model.dimension();
  ConditionalVariance var = variance;
  if (!var) {
    for (int k = 0; k < K; ++k) {
      if (model.arm(k).family() != Family::normal) {
        throw ConfigError("model.arms", "least-squares sandwich needs a linear mean; arm " +
                                            std::to_string(k + 1) + " is not normal");
      }
    }
    var = [&model](int k, const Vector&) { return model.arm(k).dispersion(); };
  }
  const CovariateIntegrator integrator(model.covariates(), policy);
  std::vector<Matrix> ix(static_cast<std::size_t>(K), Matrix::Zero(d, d));
  std::vector<Matrix> iy(static_cast<std::size_t>(K), Matrix::Zero(d, d));
  integrator.for_each([&](const Vector& x, double w) {
    const Vector pi = probabilities(rule, model.true_theta(), x);
    const Matrix outer = x * x.transpose();
    for (int k = 0; k < K; ++k) {
      ix[static_cast<std::size_t>(k)] += (w * pi(k)) * outer;
      iy[static_cast<std::size_t>(k)] += (w * pi(k) * var(k, x)) * outer;
    }
  });
  std::vector<Matrix> out;
  for (int k = 0; k < K; ++k) {
    const auto& a = ix[static_cast<std::size_t>(k)];
    if (condition_number(a) > kMaxCondition) {
      throw SingularInformationError(k, "design moment E[pi_k xi^T xi] is singular");
    }
    const Matrix inv = spd_inverse(a);
    Matrix v = inv * iy[static_cast<std::size_t>(k)] * inv;
    out.push_back(0.5 * (v + v.transpose()));
  }
  return out;
}

// --- Plug-in ----------------------------------------------------------------

PluginReport plugin_estimates(const TrialHistory& history, const TrialModel& model,
                              const AllocationRule& rule, const std::vector<Vector>& x_list,
                              const PluginOptions& options) {
  check_model_rule(model, rule);
  const int K = model.arm_count();
  const int d = model.dimension();
  const auto n = history.size();
  if (n == 0) throw Error("plug-in estimates need a non-empty history");
  const double nd = static_cast<double>(n);

  PluginReport report;
  report.n = n;
  report.theta_hat = history.theta_hat;
  report.dispersion = Vector(K);
  report.singular.assign(static_cast<std::size_t>(K), false);

  // (a) information and V
  for (int k = 0; k < K; ++k) {
    const auto& sample = history.arm_samples[static_cast<std::size_t>(k)];
    const Vector theta_k = history.theta_hat.row(k).transpose();
    double phi = model.arm(k).dispersion();
    if (options.estimate_dispersion && model.arm(k).family() == Family::normal &&
        sample.count() > d) {
      phi = residual_variance(sample, theta_k);
    }
    report.dispersion(k) = phi;
    Matrix info = Matrix::Zero(d, d);
    for (const auto& row : sample.rows()) {
      info += row.weight * conditional_fisher_info(model.arm(k), theta_k, row.x);
    }
    info *= model.arm(k).dispersion() / (phi * nd);
    report.information.push_back(info);
    if (!(phi > 0.0) || condition_number(info) > kMaxCondition) {
      report.singular[static_cast<std::size_t>(k)] = true;
      report.V_blocks.emplace_back();
    } else {
      report.V_blocks.push_back(spd_inverse(info));
    }
  }

  // (b) Sigma1 and dg/dtheta
  Vector share(K);
  for (int k = 0; k < K; ++k) share(k) = static_cast<double>(history.counts[static_cast<std::size_t>(k)]) / nd;
  report.sigma1 = Matrix(share.asDiagonal()) - share * share.transpose();

  Matrix dg = Matrix::Zero(K, static_cast<Eigen::Index>(K) * d);
  const bool grouped = !history.support.empty() &&
                       std::all_of(history.records.begin(), history.records.end(),
                                   [](const PatientRecord& r) { return r.support_index >= 0; });
  if (grouped) {
    for (std::size_t s = 0; s < history.support.size(); ++s) {
      if (history.support_counts[s] == 0) continue;
      dg += static_cast<double>(history.support_counts[s]) *
            jacobian(rule, history.theta_hat, history.support[s]);
    }
  } else {
    for (const auto& r : history.records) dg += jacobian(rule, history.theta_hat, r.x);
  }
  dg /= nd;
  report.dg_dtheta = split_blocks(dg, K, d);

  // (c) Sigma
  report.sigma = assemble_sigma(share, report.dg_dtheta, report.V_blocks).sigma;
  report.psd = min_eigenvalue(report.sigma) >= -kPsdTolerance &&
               min_eigenvalue(report.sigma1) >= -kPsdTolerance;

  // (d) conditional
  const auto& points =
      x_list.empty() && !history.support.empty() ? history.support : x_list;
  for (const auto& x : points) {
    if (x.size() != d) throw DimensionError("conditional analysis point has the wrong dimension");
    std::int64_t count = 0;
    if (auto idx = model.covariates().support_index(x); idx && !history.support.empty()) {
      count = history.support_counts[*idx];
    } else {
      for (const auto& r : history.records) count += (r.x == x) ? 1 : 0;
    }
    ConditionalEstimate c;
    c.x = x;
    c.mass = static_cast<double>(count) / nd;
    c.pi = probabilities(rule, history.theta_hat, x);
    c.sigma_given_x = assemble_conditional_sigma(c.pi, jacobian(rule, history.theta_hat, x),
                                                 report.V_blocks, c.mass);
    report.psd = report.psd && min_eigenvalue(c.sigma_given_x) >= -kPsdTolerance;
    report.conditional.push_back(std::move(c));
  }
  return report;
}

// --- Closed forms for the two-arm normal design ------------------------------

BbLimits bb_closed_forms(const BbParameters& p) {
  if (!(p.spread > 0.0)) throw ConfigError("rule.spread", "spread T must be positive");
  if (!(p.sigma2 > 0.0)) throw ConfigError("sigma2", "error variance must be positive");
  const auto q = p.covariate_mean.size();
  if (p.covariate_covariance.rows() != q || p.covariate_covariance.cols() != q) {
    throw DimensionError("covariate covariance does not match the covariate mean");
  }

  BbLimits out;
  const double u = (p.mu1 - p.mu2) / p.spread;
  out.v1 = standard_normal_cdf(u);
  out.v2 = standard_normal_cdf(-u);

  double quad = 0.0;
  if (q > 0) {
    if (condition_number(p.covariate_covariance) > kMaxCondition) {
      throw NumericalError("covariate covariance is degenerate");
    }
    const Matrix inv = spd_inverse(p.covariate_covariance);
    quad = p.covariate_mean.dot(inv * p.covariate_mean);
    out.slope_covariance = p.sigma2 * inv;
  } else {
    out.slope_covariance = Matrix(0, 0);
  }
  out.intercept_covariance.resize(2, 2);
  out.intercept_covariance << 1.0 / out.v1 + quad, quad, quad, 1.0 / out.v2 + quad;
  out.intercept_covariance *= p.sigma2;

  const double slope = standard_normal_pdf(u) / p.spread;
  const double v12 = out.v1 * out.v2;
  out.allocation_variance = v12 + 2.0 * p.sigma2 * slope * slope / v12;
  return out;
}

BbParameters bb_parameters(const TrialModel& model, const AllocationRule& rule,
                           const ExpectationPolicy& policy) {
  if (rule.kind() != RuleKind::covariate_free_normal) {
    throw ConfigError("rule.kind", "closed forms need the covariate_free_normal rule");
  }
  if (model.arm_count() != 2 || !model.covariates().intercept()) {
    throw ConfigError("model", "closed forms need two arms and an intercept covariate");
  }
  for (int k = 0; k < 2; ++k) {
    if (model.arm(k).family() != Family::normal) {
      throw ConfigError("model.arms", "closed forms need normal arms");
    }
  }
  if (model.arm(0).dispersion() != model.arm(1).dispersion()) {
    throw ConfigError("model.arms", "closed forms need a common error variance");
  }
  const int d = model.dimension();
  const Matrix& theta = model.true_theta();
  if (d > 1 && theta.row(0).tail(d - 1) != theta.row(1).tail(d - 1)) {
    throw ConfigError("model.theta", "closed forms need a slope shared by both arms");
  }

  BbParameters p;
  p.mu1 = theta(0, 0);
  p.mu2 = theta(1, 0);
  p.beta = theta.row(0).tail(d - 1).transpose();
  p.sigma2 = model.arm(0).dispersion();
  p.spread = rule.spread();

  const CovariateIntegrator integrator(model.covariates(), policy);
  Vector mean = Vector::Zero(d - 1);
  Matrix second = Matrix::Zero(d - 1, d - 1);
  integrator.for_each([&](const Vector& x, double w) {
    const Vector tail = x.tail(d - 1);
    mean += w * tail;
    second += w * tail * tail.transpose();
  });
  p.covariate_mean = mean;
  p.covariate_covariance = second - mean * mean.transpose();
  return p;
}

}  // namespace cara
