#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cara/errors.hpp"
#include "cara/estimation.hpp"
#include "fixtures.hpp"

using namespace cara;
using cara::testing::linear_dataset;
using cara::testing::mle_dataset;
using cara::testing::mle_sample;

namespace {

Bounds box1(double lo, double hi) { return {Vector::Constant(1, lo), Vector::Constant(1, hi)}; }

Bounds box_d(int d, double lo, double hi) { return {Vector::Constant(d, lo), Vector::Constant(d, hi)}; }

// score of the eight-row dataset, solved by bisection
double score_root() {
  auto score = [](double t) {
    double s = 0.0;
    for (const auto& r : mle_dataset()) s += r.x * (r.y - 1.0 / (1.0 + std::exp(-t * r.x)));
    return s;
  };
  double lo = -5.0, hi = 5.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (score(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST(ArmSample, MergesIdenticalRows) {
  ArmSample s(2);
  Vector x(2);
  x << 1.0, 0.5;
  s.add(x, 1.0);
  s.add(x, 1.0);
  s.add(x, 0.0);
  EXPECT_EQ(s.count(), 3);
  ASSERT_EQ(s.rows().size(), 2u);
  EXPECT_DOUBLE_EQ(s.rows()[0].weight, 2.0);
  EXPECT_DOUBLE_EQ(s.gram()(1, 1), 0.75);
  EXPECT_DOUBLE_EQ(s.cross()(0), 2.0);
  EXPECT_DOUBLE_EQ(s.sum_squares(), 2.0);
  EXPECT_THROW(s.add(Vector::Ones(3), 0.0), DimensionError);
}

TEST(LogisticMle, MatchesGridSearch) {
  const auto fit = fit_logistic_mle(mle_sample(), box1(-5, 5), Vector::Zero(1));
  ASSERT_TRUE(fit.converged);
  EXPECT_FALSE(fit.projected);
  const double grid = cara::testing::grid_argmax(-5.0, 5.0, 1e-4);
  EXPECT_NEAR(fit.theta_hat(0), grid, 1e-3);
}

TEST(LogisticMle, SolvesTheScoreEquation) {
  const auto fit = fit_logistic_mle(mle_sample(), box1(-5, 5), Vector::Constant(1, 3.0));
  ASSERT_TRUE(fit.converged);
  EXPECT_NEAR(fit.theta_hat(0), score_root(), 1e-8);
  EXPECT_NEAR(fit.objective, cara::testing::mle_dataset_log_likelihood(fit.theta_hat(0)), 1e-12);
}

TEST(LogisticMle, ObjectiveNeverDecreases) {
  const auto fit = fit_logistic_mle(mle_sample(), box1(-5, 5), Vector::Constant(1, -4.9));
  ASSERT_GE(fit.objective_trace.size(), 2u);
  for (std::size_t i = 1; i < fit.objective_trace.size(); ++i) {
    EXPECT_GE(fit.objective_trace[i], fit.objective_trace[i - 1]);
  }
}

TEST(LogisticMle, SeparableDataIsProjectedOntoTheBox) {
  ArmSample s(1);
  for (double x : {-2.0, -1.0}) s.add(Vector::Constant(1, x), 0.0);
  for (double x : {1.0, 2.0}) s.add(Vector::Constant(1, x), 1.0);
  const auto fit = fit_logistic_mle(s, box1(-3, 3), Vector::Zero(1));
  EXPECT_TRUE(fit.projected);
  EXPECT_DOUBLE_EQ(fit.theta_hat(0), 3.0);
  EXPECT_FALSE(fit.failed());
}

TEST(LogisticMle, EmptySampleFails) {
  const auto fit = fit_logistic_mle(ArmSample(2), box_d(2, -1, 1), Vector::Constant(2, 4.0));
  EXPECT_EQ(fit.status, FitStatus::empty_sample);
  EXPECT_TRUE(fit.failed());
  EXPECT_EQ(fit.theta_hat, Vector::Constant(2, 1.0));
}

TEST(LogisticMle, RankDeficientDesignFails) {
  ArmSample s(2);
  Vector x(2);
  x << 1.0, 2.0;
  s.add(x, 1.0);
  s.add(2.0 * x, 0.0);
  s.add(x, 0.0);
  const auto fit = fit_logistic_mle(s, box_d(2, -5, 5), Vector::Zero(2));
  EXPECT_EQ(fit.status, FitStatus::singular_hessian);
}

TEST(LinearLse, MatchesQrSolution) {
  const auto data = linear_dataset();
  ArmSample s(3);
  for (Eigen::Index i = 0; i < data.X.rows(); ++i) s.add(data.X.row(i).transpose(), data.y(i));
  const auto fit = fit_linear_lse(s, box_d(3, -20, 20));
  ASSERT_TRUE(fit.converged);
  const Vector qr = data.X.colPivHouseholderQr().solve(data.y);
  EXPECT_LT((fit.theta_hat - qr).cwiseAbs().maxCoeff(), 1e-10);
  const double sse = (data.y - data.X * qr).squaredNorm();
  EXPECT_NEAR(fit.objective, sse, 1e-10);
  EXPECT_NEAR(residual_variance(s, fit.theta_hat), sse / 7.0, 1e-10);
}

TEST(LinearLse, DegenerateAndClamped) {
  ArmSample s(2);
  s.add(Vector::Ones(2), 1.0);
  EXPECT_EQ(fit_linear_lse(s, box_d(2, -1, 1)).status, FitStatus::degenerate_design);
  EXPECT_EQ(fit_linear_lse(ArmSample(2), box_d(2, -1, 1)).status, FitStatus::empty_sample);

  ArmSample t(1);
  t.add(Vector::Ones(1), 10.0);
  const auto fit = fit_linear_lse(t, box1(-2, 2));
  EXPECT_TRUE(fit.projected);
  EXPECT_DOUBLE_EQ(fit.theta_hat(0), 2.0);
}

TEST(SharedSlopeLse, MatchesExplicitLeastSquares) {
  const auto data = linear_dataset();
  // split rows over two arms and shift arm 2's responses
  std::vector<ArmSample> samples{ArmSample(3), ArmSample(3)};
  Matrix design(10, 4);
  Vector y(10);
  for (Eigen::Index i = 0; i < 10; ++i) {
    const int arm = i % 2;
    const double yi = data.y(i) - (arm == 1 ? 0.8 : 0.0);
    samples[static_cast<std::size_t>(arm)].add(data.X.row(i).transpose(), yi);
    design.row(i) << (arm == 0 ? 1.0 : 0.0), (arm == 1 ? 1.0 : 0.0), data.X(i, 1), data.X(i, 2);
    y(i) = yi;
  }
  const auto fits = fit_shared_slope_lse(samples, ParameterBox::uniform(2, 3, -20, 20));
  ASSERT_EQ(fits.size(), 2u);
  const Vector beta = design.colPivHouseholderQr().solve(y);
  for (int k = 0; k < 2; ++k) {
    ASSERT_TRUE(fits[static_cast<std::size_t>(k)].converged);
    EXPECT_NEAR(fits[static_cast<std::size_t>(k)].theta_hat(0), beta(k), 1e-10);
    EXPECT_NEAR(fits[static_cast<std::size_t>(k)].theta_hat(1), beta(2), 1e-10);
    EXPECT_NEAR(fits[static_cast<std::size_t>(k)].theta_hat(2), beta(3), 1e-10);
  }
}

TEST(SharedSlopeLse, RequiresInterceptAndData) {
  std::vector<ArmSample> samples{ArmSample(2), ArmSample(2)};
  Vector x(2);
  x << 2.0, 1.0;
  samples[0].add(x, 1.0);
  samples[1].add(x, 1.0);
  EXPECT_THROW(fit_shared_slope_lse(samples, ParameterBox::uniform(2, 2, -5, 5)), ConfigError);

  std::vector<ArmSample> empty{ArmSample(2), ArmSample(2)};
  Vector z(2);
  z << 1.0, 0.0;
  empty[0].add(z, 0.0);
  const auto fits = fit_shared_slope_lse(empty, ParameterBox::uniform(2, 2, -5, 5));
  EXPECT_EQ(fits[1].status, FitStatus::empty_sample);
}

TEST(UpdateAllEstimates, FailedArmKeepsPreviousEstimate) {
  const auto model = cara::testing::f1_model();
  std::vector<ArmSample> samples{ArmSample(1), ArmSample(1)};
  for (int i = 0; i < 5; ++i) samples[0].add(Vector::Ones(1), i < 3 ? 1.0 : 0.0);
  Matrix previous(2, 1);
  previous << 0.1, -0.3;
  const auto update = update_all_estimates(samples, previous, model);
  EXPECT_NEAR(update.theta_hat(0, 0), std::log(1.5), 1e-8);
  EXPECT_DOUBLE_EQ(update.theta_hat(1, 0), -0.3);
  EXPECT_TRUE(update.fits[1].failed());
}

TEST(FitStatus, Names) {
  EXPECT_EQ(fit_status_name(FitStatus::converged), "converged");
  EXPECT_EQ(fit_status_name(FitStatus::empty_sample), "empty_sample");
}
