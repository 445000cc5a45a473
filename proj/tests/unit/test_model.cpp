#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "cara/errors.hpp"
#include "cara/model.hpp"
#include "fixtures.hpp"

using namespace cara;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST(Covariates, DiscreteValidation) {
  EXPECT_THROW(CovariateSpec::discrete({}, {}), ConfigError);
  EXPECT_THROW(CovariateSpec::discrete({vec({1})}, {0.5}), ConfigError);
  EXPECT_THROW(CovariateSpec::discrete({vec({1}), vec({2})}, {0.5}), ConfigError);
  EXPECT_THROW(CovariateSpec::discrete({vec({1}), vec({1, 2})}, {0.5, 0.5}), ConfigError);
  EXPECT_THROW(CovariateSpec::discrete({vec({1}), vec({1})}, {0.5, 0.5}), ConfigError);
  EXPECT_THROW(CovariateSpec::discrete({vec({1}), vec({2})}, {1.0, 0.0}), ConfigError);
  EXPECT_THROW(CovariateSpec::discrete({vec({std::nan("")})}, {1.0}), ConfigError);
  try {
    CovariateSpec::discrete({vec({1}), vec({2})}, {0.3, 0.3});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "covariates.probabilities");
  }
}

TEST(Covariates, DiscreteWithInterceptPrependsOne) {
  const auto spec = CovariateSpec::discrete({vec({0.0}), vec({2.0})}, {0.25, 0.75}, true);
  EXPECT_EQ(spec.dimension(), 2);
  ASSERT_EQ(spec.support().size(), 2u);
  EXPECT_EQ(spec.support()[1], vec({1.0, 2.0}));
  EXPECT_DOUBLE_EQ(spec.mass(vec({1.0, 2.0})), 0.75);
  EXPECT_DOUBLE_EQ(spec.mass(vec({1.0, 3.0})), 0.0);
  EXPECT_FALSE(spec.support_index(vec({2.0})).has_value());
}

TEST(Covariates, ProductValidation) {
  EXPECT_THROW(CovariateSpec::product({UniformCoordinate{1.0, 1.0}}), ConfigError);
  EXPECT_THROW(CovariateSpec::product({UniformCoordinate{0.0, INFINITY}}), ConfigError);
  EXPECT_THROW(CovariateSpec::product({TwoPointCoordinate{0.0, 0.0, 0.5}}), ConfigError);
  EXPECT_THROW(CovariateSpec::product({TwoPointCoordinate{0.0, 1.0, 1.0}}), ConfigError);
  EXPECT_THROW(CovariateSpec::product({}, false), ConfigError);
}

TEST(Covariates, ProductSupportEnumeration) {
  const auto spec = cara::testing::bb_covariates();
  EXPECT_EQ(spec.dimension(), 3);
  ASSERT_TRUE(spec.has_finite_support());
  ASSERT_EQ(spec.support().size(), 4u);
  // first coordinate varies slowest
  EXPECT_EQ(spec.support()[0], vec({1, 0, 1}));
  EXPECT_EQ(spec.support()[1], vec({1, 0, 3}));
  EXPECT_EQ(spec.support()[2], vec({1, 1, 1}));
  EXPECT_EQ(spec.support()[3], vec({1, 1, 3}));
  double total = 0.0;
  for (double m : spec.masses()) {
    EXPECT_DOUBLE_EQ(m, 0.25);
    total += m;
  }
  EXPECT_DOUBLE_EQ(total, 1.0);
}

TEST(Covariates, ContinuousProductHasNoSupport) {
  const auto spec = CovariateSpec::product({UniformCoordinate{-1.0, 1.0}, ConstantCoordinate{2.0}}, true);
  EXPECT_FALSE(spec.has_finite_support());
  EXPECT_DOUBLE_EQ(spec.mass(vec({1.0, 0.0, 2.0})), 0.0);
  RandomStream rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Vector x = spec.sample(rng);
    ASSERT_EQ(x.size(), 3);
    EXPECT_EQ(x(0), 1.0);
    EXPECT_GE(x(1), -1.0);
    EXPECT_LT(x(1), 1.0);
    EXPECT_EQ(x(2), 2.0);
  }
}

TEST(Covariates, DiscreteSamplingFrequencies) {
  const auto spec = CovariateSpec::discrete({vec({0}), vec({1}), vec({2})}, {0.2, 0.5, 0.3});
  RandomStream rng(11);
  std::map<double, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[spec.sample(rng)(0)];
  EXPECT_NEAR(counts[0.0] / double(n), 0.2, 4 * std::sqrt(0.2 * 0.8 / n));
  EXPECT_NEAR(counts[1.0] / double(n), 0.5, 4 * std::sqrt(0.25 / n));
  EXPECT_NEAR(counts[2.0] / double(n), 0.3, 4 * std::sqrt(0.3 * 0.7 / n));
}

TEST(Covariates, TwoPointSamplingFrequency) {
  const auto spec = CovariateSpec::product({TwoPointCoordinate{1.0, 3.0, 0.25}});
  RandomStream rng(12);
  int high = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) high += spec.sample(rng)(0) == 3.0;
  EXPECT_NEAR(high / double(n), 0.25, 4 * std::sqrt(0.25 * 0.75 / n));
}

TEST(ArmModel, NormalNeedsPositiveVariance) {
  EXPECT_THROW(ArmModel::normal(0.0), ConfigError);
  EXPECT_THROW(ArmModel::normal(-1.0), ConfigError);
  EXPECT_DOUBLE_EQ(ArmModel::normal(2.5).dispersion(), 2.5);
}

TEST(ArmModel, CumulantDerivativesMatchFiniteDifferences) {
  for (const auto& arm : {ArmModel::logistic(), ArmModel::normal(1.7)}) {
    for (double mu : {-30.0, -3.0, -0.4, 0.0, 0.9, 4.0, 30.0}) {
      const double h = 1e-5;
      const double d1 = (arm.cumulant(mu + h) - arm.cumulant(mu - h)) / (2 * h);
      const double d2 = (arm.cumulant_d1(mu + h) - arm.cumulant_d1(mu - h)) / (2 * h);
      EXPECT_NEAR(arm.cumulant_d1(mu), d1, 1e-6 * std::max(1.0, std::abs(mu)));
      EXPECT_NEAR(arm.cumulant_d2(mu), d2, 1e-6);
    }
  }
}

TEST(ArmModel, LogisticIsNumericallyStable) {
  const auto arm = ArmModel::logistic();
  EXPECT_TRUE(std::isfinite(arm.cumulant(800.0)));
  EXPECT_NEAR(arm.cumulant(800.0), 800.0, 1e-12);
  EXPECT_NEAR(arm.cumulant(-800.0), 0.0, 1e-300);
  EXPECT_DOUBLE_EQ(arm.cumulant_d1(0.0), 0.5);
  EXPECT_DOUBLE_EQ(arm.cumulant_d2(0.0), 0.25);
  EXPECT_TRUE(std::isfinite(arm.log_density(1.0, -800.0)));
}

TEST(ArmModel, ScoreIsGradientOfLogDensity) {
  const Vector x = vec({1.0, -0.5, 2.0});
  const Vector theta = vec({0.3, 0.8, -0.2});
  for (const auto& arm : {ArmModel::logistic(), ArmModel::normal(0.7)}) {
    for (double y : {0.0, 1.0, 0.37}) {
      if (arm.family() == Family::logistic && y != 0.0 && y != 1.0) continue;
      const Vector s = score(arm, theta, x, y);
      for (int j = 0; j < 3; ++j) {
        Vector tp = theta, tm = theta;
        const double h = 1e-6;
        tp(j) += h;
        tm(j) -= h;
        const double fd =
            (arm.log_density(y, x.dot(tp)) - arm.log_density(y, x.dot(tm))) / (2 * h);
        EXPECT_NEAR(s(j), fd, 1e-6);
      }
    }
  }
}

TEST(ArmModel, FisherInfoIsScoreOuterProductExpectation) {
  const Vector x = vec({1.0, 0.5});
  const Vector theta = vec({0.4, -1.1});
  // logistic: exact expectation over y in {0, 1}
  const auto logistic = ArmModel::logistic();
  const double p = mean_response(logistic, theta, x);
  const Vector s1 = score(logistic, theta, x, 1.0);
  const Vector s0 = score(logistic, theta, x, 0.0);
  const Matrix expected = p * s1 * s1.transpose() + (1 - p) * s0 * s0.transpose();
  EXPECT_LT((conditional_fisher_info(logistic, theta, x) - expected).cwiseAbs().maxCoeff(), 1e-14);
  // closed form p(1-p) x x^T
  EXPECT_LT((conditional_fisher_info(logistic, theta, x) - p * (1 - p) * x * x.transpose())
                .cwiseAbs()
                .maxCoeff(),
            1e-15);
  // normal: x x^T / sigma^2
  const auto normal = ArmModel::normal(2.0);
  EXPECT_LT((conditional_fisher_info(normal, theta, x) - 0.5 * x * x.transpose()).cwiseAbs().maxCoeff(),
            1e-15);
}

TEST(ArmModel, ResponsesHaveTheModelMean) {
  const Vector x = vec({1.0, 2.0});
  const Vector theta = vec({-0.5, 0.4});
  RandomStream rng(21);
  const auto logistic = ArmModel::logistic();
  const auto normal = ArmModel::normal(4.0);
  const int n = 100000;
  double sl = 0.0, sn = 0.0, sn2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double yl = sample_response(logistic, theta, x, rng);
    ASSERT_TRUE(yl == 0.0 || yl == 1.0);
    sl += yl;
    const double yn = sample_response(normal, theta, x, rng);
    sn += yn;
    sn2 += yn * yn;
  }
  const double p = 1.0 / (1.0 + std::exp(-0.3));
  EXPECT_NEAR(sl / n, p, 4 * std::sqrt(p * (1 - p) / n));
  EXPECT_NEAR(sn / n, 0.3, 4 * std::sqrt(4.0 / n));
  EXPECT_NEAR(sn2 / n - (sn / n) * (sn / n), 4.0, 0.1);
}

TEST(ArmModel, DimensionMismatchThrows) {
  EXPECT_THROW(mean_response(ArmModel::logistic(), vec({1, 2}), vec({1})), DimensionError);
}

TEST(TrialModel, Validation) {
  const auto cov = CovariateSpec::discrete({vec({1})}, {1.0});
  const auto box = ParameterBox::uniform(2, 1, -2, 2);
  EXPECT_NO_THROW(TrialModel({ArmModel::logistic(), ArmModel::logistic()}, cov,
                             (Matrix(2, 1) << 0.5, 0.0).finished(), box));
  // one arm
  EXPECT_THROW(TrialModel({ArmModel::logistic()}, cov, Matrix::Zero(1, 1),
                          ParameterBox::uniform(1, 1, -2, 2)),
               ConfigError);
  // wrong theta shape
  EXPECT_THROW(TrialModel({ArmModel::logistic(), ArmModel::logistic()}, cov, Matrix::Zero(2, 2), box),
               ConfigError);
  // theta on the boundary
  try {
    TrialModel({ArmModel::logistic(), ArmModel::logistic()}, cov,
               (Matrix(2, 1) << 2.0, 0.0).finished(), box);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "model.theta");
  }
  // unbounded box
  ParameterBox open = box;
  open.upper(0, 0) = INFINITY;
  EXPECT_THROW(TrialModel({ArmModel::logistic(), ArmModel::logistic()}, cov,
                          (Matrix(2, 1) << 0.5, 0.0).finished(), open),
               ConfigError);
}

TEST(Bounds, ClampAndContains) {
  Bounds b{vec({-1, -2}), vec({1, 2})};
  EXPECT_TRUE(b.contains(vec({1, 0})));
  EXPECT_FALSE(b.contains_strictly(vec({1, 0})));
  EXPECT_TRUE(b.contains_strictly(vec({0.5, 0})));
  EXPECT_EQ(b.clamp(vec({3, -5})), vec({1, -2}));
  EXPECT_EQ(b.center(), vec({0, 0}));
}
