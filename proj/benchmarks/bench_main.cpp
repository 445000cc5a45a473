#include <benchmark/benchmark.h>

#include <cmath>

#include "cara/asymptotics.hpp"
#include "cara/engine.hpp"
#include "cara/estimation.hpp"

namespace {

cara::TrialModel two_point() {
  Eigen::VectorXd a(2), b(2);
  a << 1.0, 0.0;
  b << 1.0, 1.0;
  return cara::TrialModel({cara::ArmModel::logistic(), cara::ArmModel::logistic()},
                          cara::CovariateSpec::discrete({a, b}, {0.5, 0.5}),
                          (cara::Matrix(2, 2) << 1.0, -1.0, 0.0, 0.5).finished(),
                          cara::ParameterBox::uniform(2, 2, -3.0, 3.0));
}

cara::TrialModel uniform_normal() {
  return cara::TrialModel({cara::ArmModel::normal(1.0), cara::ArmModel::normal(1.0)},
                          cara::CovariateSpec::product({cara::UniformCoordinate{0.0, 1.0},
                                                        cara::UniformCoordinate{-1.0, 1.0}},
                                                       true),
                          (cara::Matrix(2, 3) << 1.0, 0.5, -0.2, 0.0, 0.3, 0.4).finished(),
                          cara::ParameterBox::uniform(2, 3, -10.0, 10.0));
}

void BM_TrialSteps(benchmark::State& state) {
  const auto model = two_point();
  const auto rule = cara::AllocationRule::odds_ratio(2);
  cara::TrialOptions o;
  o.horizon = state.range(0);
  o.m0 = 15;
  o.trajectory_stride = static_cast<int>(o.horizon);
  std::uint64_t seed = 1;
  for (auto _ : state) {
    auto h = cara::run_trial(model, rule, o, seed++);
    benchmark::DoNotOptimize(h.counts);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrialSteps)->Arg(1000)->Arg(10000);

void BM_LogisticFit(benchmark::State& state) {
  cara::RandomStream rng(5);
  cara::ArmSample sample(3);
  const auto rows = state.range(0);
  for (std::int64_t i = 0; i < rows; ++i) {
    Eigen::VectorXd x(3);
    x << 1.0, rng.uniform(), rng.normal();
    const double p = 1.0 / (1.0 + std::exp(-(0.3 + x(1) - 0.5 * x(2))));
    sample.add(x, rng.uniform() < p ? 1.0 : 0.0);
  }
  const cara::Bounds box{Eigen::VectorXd::Constant(3, -10.0), Eigen::VectorXd::Constant(3, 10.0)};
  for (auto _ : state) {
    auto fit = cara::fit_logistic_mle(sample, box, Eigen::VectorXd::Zero(3));
    benchmark::DoNotOptimize(fit.theta_hat);
  }
}
BENCHMARK(BM_LogisticFit)->Arg(100)->Arg(1000);

void BM_TheoryQuadrature(benchmark::State& state) {
  const auto model = uniform_normal();
  const auto rule = cara::AllocationRule::exponential(2, 3, 1.0);
  for (auto _ : state) {
    auto t = cara::theory_report(model, rule);
    benchmark::DoNotOptimize(t.sigma);
  }
}
BENCHMARK(BM_TheoryQuadrature);

}  // namespace

BENCHMARK_MAIN();
