// Acceptance run: one PASS/FAIL line per criterion.

#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cara/asymptotics.hpp"
#include "cara/estimation.hpp"
#include "cara/harness.hpp"
#include "cara/serialization.hpp"
#include "fixtures.hpp"

using namespace cara;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(double x) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

// Runs the config and keeps only checks belonging to the named criterion.
Outcome verify_config(const std::string& file, const std::string& criterion,
                      const std::function<bool(const CriterionResult&)>& keep = {}) {
  auto config = load_config(cara::testing::config_path(file));
  const auto run = verify(config);
  Outcome out{true, {}};
  int checks = 0;
  for (const auto& r : run.report.results) {
    if (r.criterion != criterion || (keep && !keep(r))) continue;
    ++checks;
    out.passed = out.passed && r.passed;
    if (!out.detail.empty()) out.detail += "; ";
    out.detail += r.check + " " + fmt(r.observed) + " in [" + fmt(r.lower) + ", " + fmt(r.upper) + "]";
  }
  if (checks == 0) return {false, "no checks ran"};
  return out;
}

Outcome criterion1() {
  const auto t = theory_report(cara::testing::f1_model(), AllocationRule::odds_ratio(1));
  const double tol = 1e-10;
  const bool ok = std::abs(t.v(0) - 0.75) < tol && std::abs(t.sigma(0, 0) - 29.0 / 16.0) < tol &&
                  std::abs(t.V_blocks[0](0, 0) - 64.0 / 9.0) < tol &&
                  std::abs(t.V_blocks[1](0, 0) - 16.0) < tol;
  return {ok, "v1=" + fmt(t.v(0)) + " Sigma11=" + fmt(t.sigma(0, 0)) + " V1=" + fmt(t.V_blocks[0](0, 0)) +
                  " V2=" + fmt(t.V_blocks[1](0, 0)) + " (tol 1e-10)"};
}

struct F1Run {
  bool done = false;
  VerificationRun run;
};

F1Run& f1_run() {
  static F1Run cached;
  if (!cached.done) {
    cached.run = verify(load_config(cara::testing::config_path("f1.json")));
    cached.done = true;
  }
  return cached;
}

Outcome from_f1(const std::string& criterion) {
  Outcome out{true, {}};
  for (const auto& r : f1_run().run.report.results) {
    if (r.criterion != criterion) continue;
    out.passed = out.passed && r.passed;
    if (!out.detail.empty()) out.detail += "; ";
    out.detail += r.check + " " + fmt(r.observed) + " in [" + fmt(r.lower) + ", " + fmt(r.upper) + "]";
  }
  if (out.detail.empty()) return {false, "no checks ran"};
  return out;
}

Outcome criterion7() {
  double worst = 0.0;
  auto check = [&](const TrialModel& model, const AllocationRule& rule) {
    for (int k = 0; k < model.arm_count(); ++k) {
      worst = std::max(worst, (cara_variance(model, rule, k) - fixed_design_variance(model, k))
                                  .cwiseAbs()
                                  .maxCoeff());
    }
  };
  check(cara::testing::bb_model(), AllocationRule::covariate_free_normal(3, 1.0));
  const TrialModel uniform({ArmModel::logistic(), ArmModel::logistic()},
                           CovariateSpec::product({UniformCoordinate{-1.0, 2.0}}, true),
                           (Matrix(2, 2) << 0.5, 0.8, -0.2, 0.3).finished(), ParameterBox::uniform(2, 2, -5, 5));
  check(uniform, AllocationRule::covariate_free_normal(2, 0.7));
  Vector a(2), b(2), c(2);
  a << 1, 0;
  b << 1, 1;
  c << 1, 2;
  const TrialModel three({ArmModel::logistic(), ArmModel::logistic(), ArmModel::logistic()},
                         CovariateSpec::discrete({a, b, c}, {0.2, 0.5, 0.3}),
                         (Matrix(3, 2) << 0.1, 0.4, -0.3, 0.2, 0.5, -0.6).finished(),
                         ParameterBox::uniform(3, 2, -5, 5));
  check(three, AllocationRule::custom(
                   3, 2,
                   [](const Matrix& t, const Vector&) {
                     Vector w = t.col(0).array().exp();
                     return Vector(w / w.sum());
                   },
                   false));
  return {worst < 1e-10, "max |v_k I_k^-1 - (E I_k)^-1| = " + fmt(worst) + " over 3 fixtures (tol 1e-10)"};
}

Outcome criterion8() {
  const auto mle = fit_logistic_mle(cara::testing::mle_sample(),
                                    {Vector::Constant(1, -5.0), Vector::Constant(1, 5.0)}, Vector::Zero(1));
  const double grid = cara::testing::grid_argmax(-5.0, 5.0, 1e-4);
  const double mle_gap = std::abs(mle.theta_hat(0) - grid);

  const auto data = cara::testing::linear_dataset();
  ArmSample sample(3);
  for (Eigen::Index i = 0; i < data.X.rows(); ++i) sample.add(data.X.row(i).transpose(), data.y(i));
  const auto lse = fit_linear_lse(sample, {Vector::Constant(3, -20.0), Vector::Constant(3, 20.0)});
  const Vector normal_eq = (data.X.transpose() * data.X).ldlt().solve(data.X.transpose() * data.y);
  const double lse_gap = (lse.theta_hat - normal_eq).cwiseAbs().maxCoeff();

  return {mle.converged && mle_gap < 1e-3 && lse_gap < 1e-10,
          "MLE " + fmt(mle.theta_hat(0)) + " vs grid " + fmt(grid) + " (gap " + fmt(mle_gap) +
              ", tol 1e-3); LSE gap " + fmt(lse_gap) + " (tol 1e-10)"};
}

Outcome criterion10() {
  auto config = load_config(cara::testing::config_path("f1.json"));
  config.replicates = 50;
  config.compute_plugin = true;
  const auto theory = theory_report(config.model, config.rule);
  const auto first = run_replications(config, theory);
  const auto second = run_replications(config, theory);
  const bool same_seed =
      build_report(config, theory, &first, nullptr).dump() == build_report(config, theory, &second, nullptr).dump();
  auto parallel = config;
  parallel.workers = 8;
  const auto third = run_replications(parallel, theory);
  const bool same_workers = Json(first).dump() == Json(third).dump();
  return {same_seed && same_workers, std::string("same seed identical: ") + (same_seed ? "yes" : "no") +
                                         "; 1 vs 8 workers identical: " + (same_workers ? "yes" : "no")};
}

}  // namespace

int main() {
  const std::vector<std::function<Outcome()>> criteria = {
      criterion1,
      [] { return from_f1("allocation_clt"); },
      [] { return from_f1("estimator_clt"); },
      [] { return verify_config("two_point.json", "conditional_clt"); },
      [] { return verify_config("f1_plugin.json", "plugin_consistency"); },
      [] { return verify_config("bb.json", "bb_closed_forms"); },
      criterion7,
      criterion8,
      [] { return verify_config("f1_rate.json", "consistency_rate"); },
      criterion10,
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.passed;
    std::cout << "criterion " << i + 1 << ": " << (o.passed ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  }
  std::cout << (all ? "acceptance: PASS" : "acceptance: FAIL") << std::endl;
  return all ? 0 : 1;
}
