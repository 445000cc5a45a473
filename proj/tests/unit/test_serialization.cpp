#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "cara/serialization.hpp"
#include "fixtures.hpp"

using namespace cara;

namespace {

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

ExperimentConfig small_config(std::int64_t replicates) {
  auto config = load_config(cara::testing::config_path("two_point.json"));
  config.n = 200;
  config.replicates = replicates;
  config.seed = 99;
  return config;
}

}  // namespace

TEST(Serialization, MatrixSchema) {
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, std::numeric_limits<double>::quiet_NaN();
  const Json j = matrix_to_json(m);
  EXPECT_EQ(j.at("shape"), Json::array({2, 3}));
  EXPECT_EQ(j.at("data").size(), 6u);
  EXPECT_EQ(j.at("data")[2], 3.0);
  EXPECT_TRUE(j.at("data")[5].is_null());
  const Matrix back = matrix_from_json(j);
  EXPECT_EQ(back.block(0, 0, 2, 2), m.block(0, 0, 2, 2));
  EXPECT_TRUE(std::isnan(back(1, 2)));
  EXPECT_THROW(matrix_from_json(Json{{"shape", {2, 2}}, {"data", {1, 2, 3}}}), std::exception);
}

TEST(Serialization, FormatDouble) {
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(format_double(-2.5e-300), "-2.5e-300");
  EXPECT_EQ(format_double(std::nan("")), "nan");
  EXPECT_EQ(format_double(-INFINITY), "-inf");
  const double x = 0.8413447460685429;
  EXPECT_EQ(std::stod(format_double(x)), x);
}

TEST(Serialization, TheoryRoundTrip) {
  const auto t = theory_report(cara::testing::two_point_model(), AllocationRule::odds_ratio(2));
  const Json j = t;
  const auto back = j.get<TheoryReport>();
  EXPECT_EQ(back.v, t.v);
  EXPECT_EQ(back.sigma, t.sigma);
  EXPECT_EQ(back.V, t.V);
  ASSERT_EQ(back.conditional.size(), t.conditional.size());
  EXPECT_EQ(back.conditional[1].sigma_given_x, t.conditional[1].sigma_given_x);
  EXPECT_EQ(back.method, t.method);
  EXPECT_EQ(Json(back).dump(), j.dump());
}

TEST(Serialization, SummaryRoundTrip) {
  const auto config = small_config(4);
  const auto summary = run_replications(config);
  const Json j = summary;
  const auto back = j.get<ReplicationSummary>();
  EXPECT_EQ(back.records.size(), 4u);
  EXPECT_EQ(back.allocation_covariance, summary.allocation_covariance);
  EXPECT_EQ(back.records[2].theta_hat, summary.records[2].theta_hat);
  EXPECT_EQ(Json(back).dump(), j.dump());
}

TEST(Serialization, VerificationRoundTrip) {
  VerificationReport r{"x", {{"allocation_clt", "var arm 1", 1.5, 1.4, 1.2, 1.6, true}}, true};
  const auto back = Json(r).get<VerificationReport>();
  EXPECT_EQ(back.results.at(0).check, "var arm 1");
  EXPECT_EQ(back.results.at(0).upper, 1.6);
  EXPECT_TRUE(back.passed);
}

TEST(Serialization, ExpectationMethodNames) {
  for (auto m : {ExpectationMethod::exact_enumeration, ExpectationMethod::quadrature, ExpectationMethod::monte_carlo}) {
    EXPECT_EQ(expectation_method_from_name(expectation_method_name(m)), m);
  }
  EXPECT_THROW(expectation_method_from_name("simpson"), std::exception);
}

TEST(Serialization, ReplicateCsvHasOneRowPerReplicate) {
  const auto summary = run_replications(small_config(3));
  std::ostringstream out;
  write_replicate_csv(out, summary);
  const auto rows = lines(out.str());
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "replicate,seed,N_1,N_2,theta_1_1,theta_1_2,theta_2_1,theta_2_2,n_x1,p1_x1,p2_x1,n_x2,p1_x2,p2_x2");
  EXPECT_EQ(rows[1].rfind("0,", 0), 0u);
}

TEST(Serialization, PatientCsv) {
  TrialOptions o;
  o.horizon = 50;
  o.m0 = 15;
  const auto h = run_trial(cara::testing::two_point_model(), AllocationRule::odds_ratio(2), o, 4);
  std::ostringstream out;
  write_patient_csv(out, h);
  const auto rows = lines(out.str());
  ASSERT_EQ(rows.size(), 51u);
  EXPECT_EQ(rows[0], "m,x1,x2,arm,psi1,psi2,y");
  EXPECT_EQ(rows[1].substr(0, 4), "1,1,");
  const Json s = history_summary(h);
  EXPECT_EQ(s.at("n"), 50);
}
