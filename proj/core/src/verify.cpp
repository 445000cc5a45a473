#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cara/errors.hpp"
#include "cara/harness.hpp"

namespace cara {

namespace {

bool wants(const ExperimentConfig& config, std::string_view name) {
  return std::find(config.criteria.begin(), config.criteria.end(), name) != config.criteria.end();
}

CriterionResult band(std::string criterion, std::string check, double observed, double target,
                     double lower, double upper) {
  const bool ok = std::isfinite(observed) && observed >= lower && observed <= upper;
  return {std::move(criterion), std::move(check), observed, target, lower, upper, ok};
}

CriterionResult ratio_band(std::string criterion, std::string check, double observed, double target,
                           double tolerance) {
  return band(std::move(criterion), std::move(check), observed, target, (1.0 - tolerance) * target,
              (1.0 + tolerance) * target);
}

const ReplicationSummary& need_summary(const VerificationInputs& inputs, std::string_view name) {
  if (!inputs.summary) throw Error("criterion '" + std::string(name) + "' needs a replication summary");
  return *inputs.summary;
}

std::string format_point(const Vector& x) {
  std::string out = "(";
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", x(i));
    out += (i ? "," : "") + std::string(buf);
  }
  return out + ")";
}

}  // namespace

std::vector<CriterionResult> evaluate_criteria(const ExperimentConfig& config,
                                               const TheoryReport& theory,
                                               const VerificationInputs& inputs) {
  const auto& tol = config.tolerances;
  const int K = config.model.arm_count();
  const int d = config.model.dimension();
  std::vector<CriterionResult> out;

  for (const auto& name : config.criteria) {
    if (name == "allocation_clt") {
      const auto& s = need_summary(inputs, name);
      const double used = static_cast<double>(s.replicates - s.failures);
      for (int k = 0; k < K; ++k) {
        const std::string arm = std::to_string(k + 1);
        out.push_back(ratio_band(name, "Var sqrt(n)(N_" + arm + "/n - v_" + arm + ")",
                                 s.allocation_covariance(k, k), theory.sigma(k, k),
                                 tol.allocation_variance));
        const double limit = tol.allocation_mean_sd * std::sqrt(theory.sigma(k, k) / used);
        out.push_back(band(name, "mean sqrt(n)(N_" + arm + "/n - v_" + arm + ")",
                           s.allocation_mean(k), 0.0, -limit, limit));
      }
    } else if (name == "estimator_clt") {
      const auto& s = need_summary(inputs, name);
      for (int k = 0; k < K; ++k) {
        for (int l = 0; l < d; ++l) {
          const auto j = k * d + l;
          out.push_back(ratio_band(name,
                                   "Var sqrt(n)(theta_hat_" + std::to_string(k + 1) + "," +
                                       std::to_string(l + 1) + " - theta)",
                                   s.estimator_covariance(j, j), theory.V(j, j),
                                   tol.estimator_variance));
        }
      }
    } else if (name == "conditional_clt") {
      const auto& s = need_summary(inputs, name);
      if (s.conditional.empty()) {
        throw ConfigError("criteria", "conditional_clt needs a finite covariate support");
      }
      for (const auto& c : s.conditional) {
        for (int k = 0; k < K; ++k) {
          out.push_back(ratio_band(name,
                                   "Var sqrt(N(x))(N_" + std::to_string(k + 1) + "|x/N(x) - pi), x=" +
                                       format_point(c.x),
                                   c.covariance(k, k), c.theory(k, k), tol.conditional_variance));
        }
      }
    } else if (name == "plugin_consistency") {
      const auto& s = need_summary(inputs, name);
      if (!s.has_plugin) throw Error("plugin_consistency needs plug-in estimates");
      out.push_back(band(name, "median ||Sigma_hat - Sigma|| / ||Sigma||", s.median_plugin_sigma_error,
                         0.0, 0.0, tol.plugin_sigma));
      for (int k = 0; k < K; ++k) {
        out.push_back(band(name,
                           "median ||V_hat_" + std::to_string(k + 1) + " - V_" +
                               std::to_string(k + 1) + "|| / ||V_" + std::to_string(k + 1) + "||",
                           s.median_plugin_V_error(k), 0.0, 0.0, tol.plugin_V));
      }
    } else if (name == "bb_closed_forms") {
      const auto& s = need_summary(inputs, name);
      if (!inputs.bb) throw Error("bb_closed_forms needs the closed-form limits");
      out.push_back(ratio_band(name, "Var sqrt(n)(N_1/n - v_1)", s.allocation_covariance(0, 0),
                               inputs.bb->allocation_variance, tol.bb_variance));
      out.push_back(ratio_band(name, "Var sqrt(n)(mu_hat_1 - mu_1)", s.estimator_covariance(0, 0),
                               inputs.bb->intercept_covariance(0, 0), tol.bb_variance));
    } else if (name == "consistency_rate") {
      if (inputs.consistency.size() < 2) throw Error("consistency_rate needs at least two horizons");
      for (std::size_t i = 1; i < inputs.consistency.size(); ++i) {
        const auto& prev = inputs.consistency[i - 1];
        const auto& cur = inputs.consistency[i];
        auto r = band(name,
                      "median ||theta_hat - theta||, n=" + std::to_string(cur.n) + " < n=" +
                          std::to_string(prev.n),
                      cur.median_error, prev.median_error, 0.0, prev.median_error);
        r.passed = r.passed && cur.median_error < prev.median_error;
        out.push_back(std::move(r));
      }
    } else {
      throw ConfigError("criteria", "unknown criterion '" + name + "'");
    }
  }
  return out;
}

VerificationRun verify(const ExperimentConfig& config) {
  if (config.criteria.empty()) {
    throw ConfigError("criteria", "no criteria selected; an empty set cannot pass");
  }
  VerificationRun run;
  run.theory = theory_report(config.model, config.rule, config.x_list, config.expectation);

  const bool needs_summary = wants(config, "allocation_clt") || wants(config, "estimator_clt") ||
                             wants(config, "conditional_clt") || wants(config, "plugin_consistency") ||
                             wants(config, "bb_closed_forms");
  if (needs_summary) {
    ExperimentConfig main = config;
    main.compute_plugin = config.compute_plugin || wants(config, "plugin_consistency");
    run.inputs.summary = run_replications(main, run.theory);
  }
  if (wants(config, "bb_closed_forms")) {
    run.inputs.bb = bb_closed_forms(bb_parameters(config.model, config.rule, config.expectation));
  }
  if (wants(config, "consistency_rate")) {
    for (auto horizon : config.consistency_horizons) {
      ExperimentConfig at = config;
      at.n = horizon;
      at.compute_plugin = false;
      const auto s = run_replications(at, run.theory);
      run.inputs.consistency.push_back({horizon, s.median_estimation_error});
    }
  }

  run.report.config_name = config.name;
  run.report.results = evaluate_criteria(config, run.theory, run.inputs);
  run.report.passed = !run.report.results.empty() &&
                      std::all_of(run.report.results.begin(), run.report.results.end(),
                                  [](const CriterionResult& r) { return r.passed; });
  return run;
}

}  // namespace cara
