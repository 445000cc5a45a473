#include "cara/engine.hpp"

#include <limits>
#include <numeric>

#include "cara/errors.hpp"

namespace cara {

double TrialHistory::conditional_proportion(std::size_t s, int k) const {
  const auto total = support_counts.at(s);
  if (total == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(support_arm_counts.at(s).at(static_cast<std::size_t>(k))) /
         static_cast<double>(total);
}

Trial::Trial(const TrialModel& model, const AllocationRule& rule, TrialOptions options,
             std::uint64_t seed)
    : model_(model), rule_(rule), options_(std::move(options)), streams_(seed) {
  const int K = model.arm_count();
  const int d = model.dimension();
  if (rule.arm_count() != K || rule.dimension() != d) {
    throw DimensionError("rule '" + rule.name() + "' is defined for K=" +
                         std::to_string(rule.arm_count()) + ", d=" + std::to_string(rule.dimension()) +
                         " but the model has K=" + std::to_string(K) + ", d=" + std::to_string(d));
  }
  if (options_.m0 < d + 1) {
    throw ConfigError("m0", "burn-in size must be at least d + 1 = " + std::to_string(d + 1));
  }
  if (options_.horizon < static_cast<std::int64_t>(K) * options_.m0) {
    throw ConfigError("n", "horizon must be at least K * m0 = " +
                               std::to_string(static_cast<std::int64_t>(K) * options_.m0));
  }
  if (options_.estimation.refit_interval < 1) {
    throw ConfigError("refit_interval", "must be >= 1");
  }
  if (options_.trajectory_stride < 1) {
    throw ConfigError("trajectory_stride", "must be >= 1");
  }

  history_.arm_count = K;
  history_.dimension = d;
  history_.m0 = options_.m0;
  history_.seed = seed;
  history_.counts.assign(static_cast<std::size_t>(K), 0);
  history_.support = model.covariates().support();
  history_.support_counts.assign(history_.support.size(), 0);
  history_.support_arm_counts.assign(history_.support.size(),
                                     std::vector<std::int64_t>(static_cast<std::size_t>(K), 0));
  history_.arm_samples.assign(static_cast<std::size_t>(K), ArmSample(d));
  history_.fit_flags.assign(static_cast<std::size_t>(K), ArmFitFlags{});
  Matrix start(K, d);
  for (int k = 0; k < K; ++k) {
    start.row(k) = model.box().arm(k).clamp(Vector::Zero(d)).transpose();
  }
  history_.theta_hat = start;
  history_.records.reserve(static_cast<std::size_t>(options_.horizon));
}

void Trial::record(const Vector& x, int arm, Vector psi, bool burn_in) {
  const double y =
      sample_response(model_.arm(arm), model_.true_theta(arm), x, streams_.response);
  int support_index = -1;
  if (!history_.support.empty()) {
    if (auto idx = model_.covariates().support_index(x)) {
      support_index = static_cast<int>(*idx);
      ++history_.support_counts[*idx];
      ++history_.support_arm_counts[*idx][static_cast<std::size_t>(arm)];
    }
  }
  ++history_.counts[static_cast<std::size_t>(arm)];
  history_.arm_samples[static_cast<std::size_t>(arm)].add(x, y);
  history_.records.push_back(
      {history_.size() + 1, x, arm, std::move(psi), y, support_index, burn_in});
}

void Trial::refit() {
  auto update = update_all_estimates(history_, model_, options_.estimation);
  for (std::size_t k = 0; k < update.fits.size(); ++k) {
    const auto& fit = update.fits[k];
    auto& flags = history_.fit_flags[k];
    ++flags.fits;
    if (fit.failed()) ++flags.failures;
    if (fit.projected) ++flags.projected;
    if (!fit.converged) ++flags.not_converged;
    flags.last_converged = fit.converged;
  }
  history_.theta_hat = std::move(update.theta_hat);
}

void Trial::snapshot(bool force) {
  const auto m = history_.size();
  if (!history_.trajectory.empty() && history_.trajectory.back().m == m) {
    history_.trajectory.back().theta_hat = history_.theta_hat;
    return;
  }
  if (force || adaptive_steps_ % options_.trajectory_stride == 0) {
    history_.trajectory.push_back({m, history_.theta_hat});
  }
}

void Trial::burn_in() {
  if (burn_in_done_) return;
  const int K = model_.arm_count();
  const auto m0 = static_cast<std::size_t>(options_.m0);
  std::vector<int> schedule(static_cast<std::size_t>(K) * m0);
  for (std::size_t i = 0; i < schedule.size(); ++i) schedule[i] = static_cast<int>(i / m0);
  // Fisher-Yates on the multiset {1^m0, ..., K^m0}
  for (std::size_t i = schedule.size() - 1; i > 0; --i) {
    std::swap(schedule[i], schedule[streams_.burn_in.index(i + 1)]);
  }
  const Vector uniform = Vector::Constant(K, 1.0 / K);
  for (int arm : schedule) {
    record(model_.covariates().sample(streams_.covariate), arm, uniform, true);
  }
  refit();
  burn_in_done_ = true;
  snapshot(true);
}

void Trial::step() {
  if (!burn_in_done_) throw Error("step() called before burn_in()");
  const Vector x = model_.covariates().sample(streams_.covariate);
  Vector psi = probabilities(rule_, history_.theta_hat, x);

  const double u = streams_.assignment.uniform() * psi.sum();
  int arm = 0;
  double cumulative = psi(0);
  while (u >= cumulative && arm + 1 < psi.size()) cumulative += psi(++arm);

  record(x, arm, std::move(psi), false);
  ++adaptive_steps_;
  if (adaptive_steps_ % options_.estimation.refit_interval == 0) refit();
  snapshot(false);
}

void Trial::run() {
  burn_in();
  while (history_.size() < options_.horizon) step();
  if (adaptive_steps_ % options_.estimation.refit_interval != 0) refit();
  snapshot(true);
}

TrialHistory burn_in(const TrialModel& model, const AllocationRule& rule, int m0,
                     std::uint64_t seed, const EstimationOptions& estimation) {
  TrialOptions options;
  options.horizon = static_cast<std::int64_t>(model.arm_count()) * m0;
  options.m0 = m0;
  options.estimation = estimation;
  Trial trial(model, rule, options, seed);
  trial.burn_in();
  return std::move(trial).release();
}

TrialHistory run_trial(const TrialModel& model, const AllocationRule& rule,
                       const TrialOptions& options, std::uint64_t seed) {
  Trial trial(model, rule, options, seed);
  trial.run();
  return std::move(trial).release();
}

}  // namespace cara
