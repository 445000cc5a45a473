#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cara/allocation.hpp"
#include "cara/estimation.hpp"
#include "cara/harness.hpp"
#include "cara/model.hpp"

namespace cara::testing {

inline std::string config_path(const std::string& name) {
  return std::string(CARA_CONFIG_DIR) + "/" + name;
}

inline std::string data_path(const std::string& name) {
  return std::string(CARA_TEST_DATA_DIR) + "/" + name;
}

/// K = 2, d = 1, xi = 1, logistic arms, theta = (ln 3, 0).
inline TrialModel f1_model(double box = 2.0) {
  return TrialModel({ArmModel::logistic(), ArmModel::logistic()},
                    CovariateSpec::discrete({Vector::Ones(1)}, {1.0}),
                    (Matrix(2, 1) << std::log(3.0), 0.0).finished(),
                    ParameterBox::uniform(2, 1, -box, box));
}

/// xi in {(1,0), (1,1)} with probability 1/2 each.
inline TrialModel two_point_model() {
  Vector a(2), b(2);
  a << 1.0, 0.0;
  b << 1.0, 1.0;
  return TrialModel({ArmModel::logistic(), ArmModel::logistic()},
                    CovariateSpec::discrete({a, b}, {0.5, 0.5}),
                    (Matrix(2, 2) << 1.0, -1.0, 0.0, 0.5).finished(),
                    ParameterBox::uniform(2, 2, -3.0, 3.0));
}

/// Intercept plus two two-point coordinates: a = (0.5, 2), Var = diag(0.25, 1).
inline CovariateSpec bb_covariates() {
  return CovariateSpec::product({TwoPointCoordinate{0.0, 1.0, 0.5}, TwoPointCoordinate{1.0, 3.0, 0.5}},
                                true);
}

inline TrialModel bb_model(double mu1 = 1.0, double mu2 = 0.0, double sigma2 = 1.0) {
  return TrialModel({ArmModel::normal(sigma2), ArmModel::normal(sigma2)}, bb_covariates(),
                    (Matrix(2, 3) << mu1, 0.5, -0.25, mu2, 0.5, -0.25).finished(),
                    ParameterBox::uniform(2, 3, -20.0, 20.0));
}

/// Eight observations for the logistic MLE check: scalar covariate, no intercept.
struct MleRow {
  double x;
  double y;
};

inline const std::vector<MleRow>& mle_dataset() {
  static const std::vector<MleRow> rows = {
      {-2.0, 0.0}, {-1.0, 0.0}, {-0.5, 1.0}, {0.5, 0.0},
      {1.0, 1.0},  {1.5, 1.0},  {2.0, 0.0},  {3.0, 1.0},
  };
  return rows;
}

inline ArmSample mle_sample() {
  ArmSample sample(1);
  for (const auto& r : mle_dataset()) sample.add(Vector::Constant(1, r.x), r.y);
  return sample;
}

/// Log-likelihood of the eight-row dataset at a scalar theta, written out directly.
inline double mle_dataset_log_likelihood(double theta) {
  double ll = 0.0;
  for (const auto& r : mle_dataset()) {
    const double eta = theta * r.x;
    ll += r.y * eta - std::log1p(std::exp(eta));
  }
  return ll;
}

/// Exhaustive grid search over [lo, hi] with the given step.
inline double grid_argmax(double lo, double hi, double step) {
  double best = lo;
  double best_ll = mle_dataset_log_likelihood(lo);
  const auto count = static_cast<long>(std::llround((hi - lo) / step));
  for (long i = 1; i <= count; ++i) {
    const double t = lo + static_cast<double>(i) * step;
    const double ll = mle_dataset_log_likelihood(t);
    if (ll > best_ll) {
      best_ll = ll;
      best = t;
    }
  }
  return best;
}

/// Deterministic normal-response dataset for the least-squares check (d = 3).
struct LinearDataset {
  Matrix X;
  Vector y;
};

inline LinearDataset linear_dataset() {
  LinearDataset out{Matrix(10, 3), Vector(10)};
  const double x1[] = {0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0};
  const double x2[] = {1.0, 3.0, 3.0, 1.0, 3.0, 1.0, 1.0, 3.0, 3.0, 1.0};
  const double e[] = {0.31, -1.2, 0.44, 0.05, -0.73, 1.9, -0.2, 0.66, -0.9, 0.12};
  for (int i = 0; i < 10; ++i) {
    out.X.row(i) << 1.0, x1[i], x2[i];
    out.y(i) = 1.0 + 0.5 * x1[i] - 0.25 * x2[i] + e[i];
  }
  return out;
}

}  // namespace cara::testing
