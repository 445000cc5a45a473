#include "cara/estimation.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include "cara/engine.hpp"
#include "cara/errors.hpp"

namespace cara {

namespace {

constexpr double kMaxCondition = 1e12;
constexpr int kMaxHalvings = 50;

double softplus(double eta) {
  return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

double sigmoid(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

struct LogisticState {
  double log_likelihood = 0.0;
  Vector gradient;
  Matrix information;
};

LogisticState evaluate_logistic(const ArmSample& sample, const Vector& theta) {
  const auto d = theta.size();
  LogisticState s{0.0, Vector::Zero(d), Matrix::Zero(d, d)};
  for (const auto& row : sample.rows()) {
    const double eta = row.x.dot(theta);
    const double p = sigmoid(eta);
    s.log_likelihood += row.weight * (row.y * eta - softplus(eta));
    s.gradient.noalias() += (row.weight * (row.y - p)) * row.x;
    s.information.selfadjointView<Eigen::Lower>().rankUpdate(row.x, row.weight * p * (1.0 - p));
  }
  s.information = s.information.selfadjointView<Eigen::Lower>();
  return s;
}

/// Coordinates pinned at a bound with the gradient pushing outward.
std::vector<bool> active_set(const Vector& theta, const Vector& gradient, const Bounds& box) {
  std::vector<bool> active(static_cast<std::size_t>(theta.size()), false);
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    active[static_cast<std::size_t>(i)] = (theta(i) <= box.lower(i) && gradient(i) < 0.0) ||
                                          (theta(i) >= box.upper(i) && gradient(i) > 0.0);
  }
  return active;
}

double projected_gradient_norm(const Vector& gradient, const std::vector<bool>& active) {
  double norm = 0.0;
  for (Eigen::Index i = 0; i < gradient.size(); ++i) {
    if (!active[static_cast<std::size_t>(i)]) norm = std::max(norm, std::abs(gradient(i)));
  }
  return norm;
}

bool any_active(const std::vector<bool>& active) {
  for (bool a : active) {
    if (a) return true;
  }
  return false;
}

}  // namespace

// --- ArmSample --------------------------------------------------------------

ArmSample::ArmSample(int dimension)
    : dimension_(dimension),
      gram_(Matrix::Zero(dimension, dimension)),
      cross_(Vector::Zero(dimension)) {}

void ArmSample::add(const Vector& x, double y) {
  if (x.size() != dimension_) {
    throw DimensionError("sample row has dimension " + std::to_string(x.size()) + ", expected " +
                         std::to_string(dimension_));
  }
  std::string key(sizeof(double) * static_cast<std::size_t>(dimension_ + 1), '\0');
  std::memcpy(key.data(), x.data(), sizeof(double) * static_cast<std::size_t>(dimension_));
  std::memcpy(key.data() + sizeof(double) * static_cast<std::size_t>(dimension_), &y, sizeof(double));
  auto [it, inserted] = index_.try_emplace(std::move(key), rows_.size());
  if (inserted) {
    rows_.push_back({x, y, 1.0});
  } else {
    rows_[it->second].weight += 1.0;
  }
  ++count_;
  gram_.noalias() += x * x.transpose();
  cross_.noalias() += y * x;
  sum_squares_ += y * y;
}

std::string_view fit_status_name(FitStatus status) noexcept {
  switch (status) {
    case FitStatus::converged: return "converged";
    case FitStatus::max_iterations: return "max_iterations";
    case FitStatus::empty_sample: return "empty_sample";
    case FitStatus::singular_hessian: return "singular_hessian";
    case FitStatus::degenerate_design: return "degenerate_design";
  }
  return "unknown";
}

// --- Logistic MLE -----------------------------------------------------------

double logistic_log_likelihood(const ArmSample& sample, const Vector& theta) {
  double ll = 0.0;
  for (const auto& row : sample.rows()) {
    const double eta = row.x.dot(theta);
    ll += row.weight * (row.y * eta - softplus(eta));
  }
  return ll;
}

FitResult fit_logistic_mle(const ArmSample& sample, const Bounds& box, const Vector& init,
                           const EstimationOptions& opts) {
  FitResult result;
  Vector theta = box.clamp(init);
  result.theta_hat = theta;
  if (sample.empty()) {
    result.status = FitStatus::empty_sample;
    return result;
  }

  LogisticState state = evaluate_logistic(sample, theta);
  result.objective_trace.push_back(state.log_likelihood);
  result.status = FitStatus::max_iterations;

  const auto d = theta.size();
  int iteration = 0;
  for (; iteration < opts.max_iterations; ++iteration) {
    const auto active = active_set(theta, state.gradient, box);
    if (projected_gradient_norm(state.gradient, active) <= opts.gradient_tolerance) {
      result.status = FitStatus::converged;
      break;
    }

    // Newton direction on the free coordinates only.
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < d; ++i) {
      if (!active[static_cast<std::size_t>(i)]) free.push_back(i);
    }
    const auto nf = static_cast<Eigen::Index>(free.size());
    Matrix info(nf, nf);
    Vector grad(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      grad(a) = state.gradient(free[static_cast<std::size_t>(a)]);
      for (Eigen::Index b = 0; b < nf; ++b) {
        info(a, b) = state.information(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
      }
    }
    if (condition_number(info) > kMaxCondition) {
      FitResult failed;
      failed.theta_hat = box.clamp(init);
      failed.status = FitStatus::singular_hessian;
      failed.iterations = iteration;
      failed.objective = logistic_log_likelihood(sample, failed.theta_hat);
      return failed;
    }
    const Vector step_free = info.ldlt().solve(grad);
    Vector direction = Vector::Zero(d);
    for (Eigen::Index a = 0; a < nf; ++a) direction(free[static_cast<std::size_t>(a)]) = step_free(a);

    double scale = 1.0;
    Vector candidate = theta;
    double candidate_ll = -std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int h = 0; h <= kMaxHalvings; ++h, scale *= 0.5) {
      candidate = box.clamp(theta + scale * direction);
      candidate_ll = logistic_log_likelihood(sample, candidate);
      if (candidate_ll >= state.log_likelihood) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // no ascent available at machine precision
      result.status = FitStatus::converged;
      break;
    }
    const double moved = (candidate - theta).lpNorm<Eigen::Infinity>();
    theta = candidate;
    state = evaluate_logistic(sample, theta);
    result.objective_trace.push_back(state.log_likelihood);
    if (moved <= opts.step_tolerance) {
      ++iteration;
      result.status = FitStatus::converged;
      break;
    }
  }

  result.theta_hat = theta;
  result.iterations = iteration;
  result.objective = state.log_likelihood;
  result.converged = result.status == FitStatus::converged;
  result.projected = any_active(active_set(theta, state.gradient, box));
  return result;
}

// --- Least squares ----------------------------------------------------------

namespace {

double sse_at(const ArmSample& sample, const Vector& theta) {
  return sample.sum_squares() - 2.0 * theta.dot(sample.cross()) +
         theta.dot(sample.gram() * theta);
}

}  // namespace

FitResult fit_linear_lse(const ArmSample& sample, const Bounds& box) {
  FitResult result;
  result.theta_hat = box.center();
  const auto d = sample.dimension();
  if (sample.empty()) {
    result.status = FitStatus::empty_sample;
    return result;
  }
  if (sample.count() < d || condition_number(sample.gram()) > kMaxCondition) {
    result.status = FitStatus::degenerate_design;
    return result;
  }
  const Vector theta = sample.gram().ldlt().solve(sample.cross());
  result.theta_hat = box.clamp(theta);
  result.projected = result.theta_hat != theta;
  result.converged = true;
  result.iterations = 1;
  result.status = FitStatus::converged;
  result.objective = sse_at(sample, result.theta_hat);
  result.objective_trace.push_back(result.objective);
  return result;
}

std::vector<FitResult> fit_shared_slope_lse(std::span<const ArmSample> samples,
                                            const ParameterBox& box) {
  const auto K = static_cast<Eigen::Index>(samples.size());
  if (K == 0) return {};
  const Eigen::Index d = samples.front().dimension();
  const Eigen::Index p = K + d - 1;

  std::vector<FitResult> results(static_cast<std::size_t>(K));
  for (Eigen::Index k = 0; k < K; ++k) {
    results[static_cast<std::size_t>(k)].theta_hat = box.arm(static_cast<int>(k)).center();
  }

  Matrix normal = Matrix::Zero(p, p);
  Vector rhs = Vector::Zero(p);
  std::int64_t total = 0;
  for (Eigen::Index k = 0; k < K; ++k) {
    const auto& s = samples[static_cast<std::size_t>(k)];
    if (s.dimension() != d) throw DimensionError("shared-slope fit: arm dimensions differ");
    if (s.empty()) {
      for (auto& r : results) r.status = FitStatus::empty_sample;
      return results;
    }
    const Matrix& g = s.gram();
    if (std::abs(g(0, 0) - static_cast<double>(s.count())) > 1e-9 * static_cast<double>(s.count())) {
      throw ConfigError("estimation.shared_slopes",
                        "shared-slope fitting requires a leading intercept coordinate of 1");
    }
    normal(k, k) = g(0, 0);
    if (d > 1) {
      normal.block(k, K, 1, d - 1) = g.block(0, 1, 1, d - 1);
      normal.block(K, k, d - 1, 1) = g.block(1, 0, d - 1, 1);
      normal.block(K, K, d - 1, d - 1) += g.block(1, 1, d - 1, d - 1);
      rhs.tail(d - 1) += s.cross().tail(d - 1);
    }
    rhs(k) = s.cross()(0);
    total += s.count();
  }
  if (total < p || condition_number(normal) > kMaxCondition) {
    for (auto& r : results) r.status = FitStatus::degenerate_design;
    return results;
  }
  const Vector solution = normal.ldlt().solve(rhs);
  for (Eigen::Index k = 0; k < K; ++k) {
    Vector theta(d);
    theta(0) = solution(k);
    if (d > 1) theta.tail(d - 1) = solution.tail(d - 1);
    auto& r = results[static_cast<std::size_t>(k)];
    const Bounds b = box.arm(static_cast<int>(k));
    r.theta_hat = b.clamp(theta);
    r.projected = r.theta_hat != theta;
    r.converged = true;
    r.iterations = 1;
    r.status = FitStatus::converged;
    r.objective = sse_at(samples[static_cast<std::size_t>(k)], r.theta_hat);
    r.objective_trace.push_back(r.objective);
  }
  return results;
}

double residual_variance(const ArmSample& sample, const Vector& theta) {
  const auto dof = sample.count() - sample.dimension();
  if (dof <= 0) {
    throw NumericalError("residual variance needs more observations than parameters");
  }
  return std::max(sse_at(sample, theta), 0.0) / static_cast<double>(dof);
}

// --- Update ----------------------------------------------------------------

EstimateUpdate update_all_estimates(std::span<const ArmSample> samples, const Matrix& previous,
                                    const TrialModel& model, const EstimationOptions& opts) {
  const int K = model.arm_count();
  if (static_cast<int>(samples.size()) != K || previous.rows() != K ||
      previous.cols() != model.dimension()) {
    throw DimensionError("update_all_estimates: samples/estimates do not match the model");
  }
  EstimateUpdate update{previous, {}};
  update.fits.reserve(static_cast<std::size_t>(K));

  if (opts.shared_slopes) {
    for (const auto& arm : model.arms()) {
      if (arm.family() != Family::normal) {
        throw ConfigError("estimation.shared_slopes", "shared slopes require normal arms");
      }
    }
    update.fits = fit_shared_slope_lse(samples, model.box());
  } else {
    for (int k = 0; k < K; ++k) {
      const auto& sample = samples[static_cast<std::size_t>(k)];
      const Bounds box = model.box().arm(k);
      if (model.arm(k).family() == Family::logistic) {
        update.fits.push_back(
            fit_logistic_mle(sample, box, previous.row(k).transpose(), opts));
      } else {
        update.fits.push_back(fit_linear_lse(sample, box));
      }
    }
  }
  for (int k = 0; k < K; ++k) {
    const auto& fit = update.fits[static_cast<std::size_t>(k)];
    if (!fit.failed()) update.theta_hat.row(k) = fit.theta_hat.transpose();
  }
  return update;
}

EstimateUpdate update_all_estimates(const TrialHistory& history, const TrialModel& model,
                                    const EstimationOptions& opts) {
  return update_all_estimates(history.arm_samples, history.theta_hat, model, opts);
}

}  // namespace cara
