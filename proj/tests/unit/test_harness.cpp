#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "cara/errors.hpp"
#include "cara/harness.hpp"
#include "cara/serialization.hpp"
#include "fixtures.hpp"

using namespace cara;

namespace {

Json minimal() {
  return Json::parse(R"({
    "model": {
      "covariates": {"type": "discrete", "points": [[1.0]], "probabilities": [1.0]},
      "arms": [{"family": "logistic"}, {"family": "logistic"}],
      "theta": [[0.5], [0.0]]
    },
    "rule": {"kind": "odds_ratio"},
    "n": 100
  })");
}

std::string error_key(const Json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<none>";
}

ExperimentConfig f1_small(std::int64_t replicates, std::int64_t n = 400) {
  auto config = load_config(cara::testing::config_path("f1.json"));
  config.replicates = replicates;
  config.n = n;
  config.seed = 17;
  return config;
}

}  // namespace

TEST(Config, MinimalDocumentGetsDefaults) {
  const auto c = parse_config(minimal());
  EXPECT_EQ(c.m0, 2);
  EXPECT_EQ(c.replicates, 1);
  EXPECT_EQ(c.seed, 1u);
  EXPECT_EQ(c.workers, 1);
  EXPECT_EQ(c.estimation.refit_interval, 1);
  EXPECT_EQ(c.rule.kind(), RuleKind::odds_ratio);
  EXPECT_DOUBLE_EQ(c.model.box().upper(0, 0), 10.0);
  EXPECT_EQ(c.document.at("m0"), 2);
  // the echoed document parses to the same configuration
  const auto again = parse_config(c.document);
  EXPECT_EQ(again.document, c.document);
}

TEST(Config, HorizonTooShortNamesN) {
  auto doc = minimal();
  doc["n"] = 5;
  doc["m0"] = 3;
  EXPECT_EQ(error_key(doc), "n");
}

TEST(Config, BurnInTooSmallNamesM0) {
  auto doc = minimal();
  doc["m0"] = 1;
  EXPECT_EQ(error_key(doc), "m0");
}

TEST(Config, UnknownRuleKindListsSupportedKinds) {
  auto doc = minimal();
  doc["rule"]["kind"] = "thompson";
  try {
    parse_config(doc);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "rule.kind");
    const std::string msg = e.what();
    for (auto kind : supported_rule_kinds()) EXPECT_NE(msg.find(kind), std::string::npos) << kind;
  }
}

TEST(Config, UnknownKeysAreRejected) {
  auto doc = minimal();
  doc["replicats"] = 10;
  EXPECT_EQ(error_key(doc), "replicats");
  doc = minimal();
  doc["model"]["arms"][0]["varience"] = 2;
  EXPECT_EQ(error_key(doc).rfind("model.arms", 0), 0u);
}

TEST(Config, ModelErrorsCarryTheirKey) {
  auto doc = minimal();
  doc["model"]["covariates"]["probabilities"] = {0.7};
  EXPECT_EQ(error_key(doc), "model.covariates.probabilities");
  doc = minimal();
  doc["model"]["theta"] = {{0.5}, {0.0}, {1.0}};
  EXPECT_EQ(error_key(doc), "model.theta");
  doc = minimal();
  doc["model"]["theta_box"] = {{"lower", -0.2}, {"upper", 0.2}};
  EXPECT_EQ(error_key(doc), "model.theta");
}

TEST(Config, XListMustBeInSupport) {
  auto doc = minimal();
  doc["x_list"] = {{2.0}};
  EXPECT_EQ(error_key(doc).rfind("x_list", 0), 0u);
}

TEST(Config, CriteriaNamesAreChecked) {
  auto doc = minimal();
  doc["criteria"] = {"allocation_clt", "magic"};
  EXPECT_EQ(error_key(doc).rfind("criteria", 0), 0u);
  doc["criteria"] = {"consistency_rate"};
  doc["consistency_horizons"] = {200};
  EXPECT_EQ(error_key(doc).rfind("consistency_horizons", 0), 0u);
}

TEST(Config, SharedSlopesNeedNormalArms) {
  auto doc = minimal();
  doc["estimation"] = {{"shared_slopes", true}};
  EXPECT_NE(error_key(doc), "<none>");
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"f1.json", "f1_plugin.json", "f1_rate.json", "two_point.json", "bb.json"}) {
    EXPECT_NO_THROW(load_config(cara::testing::config_path(name))) << name;
  }
  EXPECT_THROW(load_config(cara::testing::config_path("missing.json")), Error);
}

TEST(Replications, SingleReplicateHasZeroCovariance) {
  const auto summary = run_replications(f1_small(1));
  EXPECT_EQ(summary.records.size(), 1u);
  EXPECT_EQ(summary.allocation_covariance, Matrix::Zero(2, 2));
  EXPECT_TRUE(std::isfinite(summary.median_estimation_error));
}

TEST(Replications, AggregationMatchesTwoPassOverCsv) {
  const auto config = f1_small(40);
  const auto summary = run_replications(config);
  std::ostringstream out;
  write_replicate_csv(out, summary);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  std::vector<double> samples;
  const double n = static_cast<double>(config.n);
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    std::getline(row, cell, ',');
    std::getline(row, cell, ',');
    samples.push_back(std::sqrt(n) * (std::stod(cell) / n - 0.75));
  }
  ASSERT_EQ(samples.size(), 40u);
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= 40.0;
  double var = 0.0;
  for (double s : samples) var += (s - mean) * (s - mean);
  var /= 39.0;
  EXPECT_NEAR(summary.allocation_mean(0), mean, 1e-12);
  EXPECT_NEAR(summary.allocation_covariance(0, 0), var, 1e-12);
  EXPECT_NEAR(summary.allocation_ratio(0), var / (29.0 / 16.0), 1e-12);
}

TEST(Replications, WorkerCountDoesNotChangeResults) {
  auto one = f1_small(24);
  one.compute_plugin = true;
  auto many = one;
  many.workers = 8;
  const std::string a = Json(run_replications(one)).dump();
  const std::string b = Json(run_replications(many)).dump();
  EXPECT_EQ(a, b);
}

TEST(Replications, SampleCovariance) {
  Matrix s(3, 2);
  s << 1, 2, 3, 4, 5, 9;
  const Matrix c = sample_covariance(s);
  EXPECT_NEAR(c(0, 0), 4.0, 1e-15);
  EXPECT_NEAR(c(0, 1), 7.0, 1e-15);
  EXPECT_NEAR(c(1, 1), 13.0, 1e-14);
}

TEST(Verification, EmptyCriteriaIsAnError) {
  auto config = f1_small(2);
  config.criteria.clear();
  EXPECT_THROW(verify(config), ConfigError);
}

TEST(Verification, PerturbedTheoryFails) {
  auto config = f1_small(200);
  config.criteria = {"allocation_clt"};
  auto theory = theory_report(config.model, config.rule);
  VerificationInputs inputs;
  inputs.summary = run_replications(config, theory);
  theory.sigma *= 2.0;
  const auto results = evaluate_criteria(config, theory, inputs);
  bool any_variance_failed = false;
  for (const auto& r : results) {
    if (r.check.find("Var") != std::string::npos) any_variance_failed = any_variance_failed || !r.passed;
  }
  EXPECT_TRUE(any_variance_failed);
}

TEST(Verification, ReportCarriesToolVersionAndConfig) {
  const auto config = f1_small(3);
  const auto theory = theory_report(config.model, config.rule);
  const auto summary = run_replications(config, theory);
  const Json report = build_report(config, theory, &summary, nullptr);
  EXPECT_EQ(report.at("tool").at("version"), std::string(tool_version()));
  EXPECT_EQ(report.at("config").at("name"), "f1");
  EXPECT_TRUE(report.at("verification").is_null());
}
