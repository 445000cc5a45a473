#include "cara/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "cara/errors.hpp"

namespace cara {

namespace {

constexpr double kMassTolerance = 1e-12;

void check_dims(const Vector& theta_k, const Vector& x) {
  if (theta_k.size() != x.size()) {
    throw DimensionError("parameter has dimension " + std::to_string(theta_k.size()) +
                         " but covariate has dimension " + std::to_string(x.size()));
  }
}

double logistic_mean(double mu) {
  if (mu >= 0.0) return 1.0 / (1.0 + std::exp(-mu));
  const double e = std::exp(mu);
  return e / (1.0 + e);
}

double softplus(double mu) {
  return mu > 0.0 ? mu + std::log1p(std::exp(-mu)) : std::log1p(std::exp(mu));
}

}  // namespace

// --- CovariateSpec ----------------------------------------------------------

CovariateSpec CovariateSpec::discrete(std::vector<Vector> points, std::vector<double> probabilities,
                                      bool intercept) {
  if (points.empty()) throw ConfigError("covariates.points", "support must not be empty");
  if (points.size() != probabilities.size()) {
    throw ConfigError("covariates.probabilities",
                      "expected " + std::to_string(points.size()) + " probabilities, got " +
                          std::to_string(probabilities.size()));
  }
  const auto raw_dim = points.front().size();
  double total = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != raw_dim) {
      throw ConfigError("covariates.points", "support point " + std::to_string(i) +
                                                 " has dimension " +
                                                 std::to_string(points[i].size()) + ", expected " +
                                                 std::to_string(raw_dim));
    }
    if (!points[i].allFinite()) {
      throw ConfigError("covariates.points", "support points must be finite");
    }
    if (!(probabilities[i] > 0.0)) {
      throw ConfigError("covariates.probabilities", "probabilities must be positive");
    }
    total += probabilities[i];
  }
  if (std::abs(total - 1.0) > kMassTolerance) {
    throw ConfigError("covariates.probabilities", "probabilities sum to " + std::to_string(total));
  }

  CovariateSpec spec;
  spec.kind_ = Kind::discrete;
  spec.intercept_ = intercept;
  spec.dimension_ = static_cast<int>(raw_dim) + (intercept ? 1 : 0);
  if (spec.dimension_ < 1) throw ConfigError("covariates.points", "covariate dimension must be >= 1");
  for (auto& p : points) {
    if (intercept) {
      Vector full(p.size() + 1);
      full(0) = 1.0;
      full.tail(p.size()) = p;
      spec.support_.push_back(std::move(full));
    } else {
      spec.support_.push_back(std::move(p));
    }
  }
  for (std::size_t i = 0; i < spec.support_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (spec.support_[i] == spec.support_[j]) {
        throw ConfigError("covariates.points", "duplicate support point " + std::to_string(i));
      }
    }
  }
  spec.masses_ = std::move(probabilities);
  spec.cumulative_.resize(spec.masses_.size());
  std::partial_sum(spec.masses_.begin(), spec.masses_.end(), spec.cumulative_.begin());
  return spec;
}

CovariateSpec CovariateSpec::product(std::vector<CoordinateDistribution> coordinates,
                                     bool intercept) {
  for (std::size_t i = 0; i < coordinates.size(); ++i) {
    const std::string key = "covariates.coordinates[" + std::to_string(i) + "]";
    std::visit(
        [&](const auto& c) {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, UniformCoordinate>) {
            if (!std::isfinite(c.lower) || !std::isfinite(c.upper) || !(c.lower < c.upper)) {
              throw ConfigError(key, "uniform bounds must be finite with lower < upper");
            }
          } else if constexpr (std::is_same_v<T, TwoPointCoordinate>) {
            if (!std::isfinite(c.low) || !std::isfinite(c.high) || c.low == c.high) {
              throw ConfigError(key, "two-point values must be finite and distinct");
            }
            if (!(c.p_high > 0.0 && c.p_high < 1.0)) {
              throw ConfigError(key, "two-point probability must lie in (0, 1)");
            }
          } else {
            if (!std::isfinite(c.value)) throw ConfigError(key, "constant must be finite");
          }
        },
        coordinates[i]);
  }
  CovariateSpec spec;
  spec.kind_ = Kind::product;
  spec.intercept_ = intercept;
  spec.dimension_ = static_cast<int>(coordinates.size()) + (intercept ? 1 : 0);
  if (spec.dimension_ < 1) {
    throw ConfigError("covariates.coordinates", "covariate dimension must be >= 1");
  }
  spec.coordinates_ = std::move(coordinates);
  spec.enumerate_product_support();
  return spec;
}

void CovariateSpec::enumerate_product_support() {
  const bool finite = std::none_of(coordinates_.begin(), coordinates_.end(), [](const auto& c) {
    return std::holds_alternative<UniformCoordinate>(c);
  });
  if (!finite) return;

  std::vector<Vector> points{Vector(dimension_)};
  std::vector<double> masses{1.0};
  int offset = 0;
  if (intercept_) {
    points.front()(0) = 1.0;
    offset = 1;
  }
  for (std::size_t i = 0; i < coordinates_.size(); ++i) {
    const int at = offset + static_cast<int>(i);
    std::vector<std::pair<double, double>> values;
    if (const auto* tp = std::get_if<TwoPointCoordinate>(&coordinates_[i])) {
      values = {{tp->low, 1.0 - tp->p_high}, {tp->high, tp->p_high}};
    } else {
      values = {{std::get<ConstantCoordinate>(coordinates_[i]).value, 1.0}};
    }
    std::vector<Vector> next_points;
    std::vector<double> next_masses;
    for (std::size_t p = 0; p < points.size(); ++p) {
      for (const auto& [value, prob] : values) {
        Vector v = points[p];
        v(at) = value;
        next_points.push_back(std::move(v));
        next_masses.push_back(masses[p] * prob);
      }
    }
    points = std::move(next_points);
    masses = std::move(next_masses);
  }
  support_ = std::move(points);
  masses_ = std::move(masses);
  cumulative_.resize(masses_.size());
  std::partial_sum(masses_.begin(), masses_.end(), cumulative_.begin());
}

std::optional<std::size_t> CovariateSpec::support_index(const Vector& x) const {
  for (std::size_t i = 0; i < support_.size(); ++i) {
    if (support_[i].size() == x.size() && support_[i] == x) return i;
  }
  return std::nullopt;
}

double CovariateSpec::mass(const Vector& x) const {
  const auto idx = support_index(x);
  return idx ? masses_[*idx] : 0.0;
}

Vector CovariateSpec::sample(RandomStream& rng) const {
  if (kind_ == Kind::discrete) {
    const double u = rng.uniform();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    auto idx = static_cast<std::size_t>(it - cumulative_.begin());
    if (idx >= support_.size()) idx = support_.size() - 1;  // u beyond a sum just below 1
    return support_[idx];
  }
  Vector x(dimension_);
  int at = 0;
  if (intercept_) x(at++) = 1.0;
  for (const auto& c : coordinates_) {
    std::visit(
        [&](const auto& dist) {
          using T = std::decay_t<decltype(dist)>;
          if constexpr (std::is_same_v<T, UniformCoordinate>) {
            x(at) = dist.lower + (dist.upper - dist.lower) * rng.uniform();
          } else if constexpr (std::is_same_v<T, TwoPointCoordinate>) {
            x(at) = rng.uniform() < dist.p_high ? dist.high : dist.low;
          } else {
            x(at) = dist.value;
          }
        },
        c);
    ++at;
  }
  return x;
}

// --- ArmModel ---------------------------------------------------------------

std::string_view family_name(Family family) noexcept {
  switch (family) {
    case Family::logistic: return "logistic";
    case Family::normal: return "normal";
  }
  return "unknown";
}

ArmModel ArmModel::logistic() { return ArmModel(Family::logistic, 1.0); }

ArmModel ArmModel::normal(double variance) {
  if (!(variance > 0.0) || !std::isfinite(variance)) {
    throw ConfigError("variance", "normal response variance must be positive and finite");
  }
  return ArmModel(Family::normal, variance);
}

double ArmModel::link(double eta) const noexcept { return eta; }
double ArmModel::link_derivative(double) const noexcept { return 1.0; }
double ArmModel::link_second_derivative(double) const noexcept { return 0.0; }

double ArmModel::cumulant(double mu) const noexcept {
  return family_ == Family::logistic ? softplus(mu) : 0.5 * mu * mu;
}

double ArmModel::cumulant_d1(double mu) const noexcept {
  return family_ == Family::logistic ? logistic_mean(mu) : mu;
}

double ArmModel::cumulant_d2(double mu) const noexcept {
  if (family_ == Family::logistic) {
    const double p = logistic_mean(mu);
    return p * (1.0 - p);
  }
  return 1.0;
}

double ArmModel::log_density(double y, double mu) const noexcept {
  const double core = (y * mu - cumulant(mu)) / dispersion_;
  if (family_ == Family::logistic) return core;
  return core - 0.5 * y * y / dispersion_ - 0.5 * std::log(2.0 * std::numbers::pi * dispersion_);
}

// --- Bounds / TrialModel ----------------------------------------------------

bool Bounds::contains(const Vector& theta) const {
  return (theta.array() >= lower.array()).all() && (theta.array() <= upper.array()).all();
}

bool Bounds::contains_strictly(const Vector& theta) const {
  return (theta.array() > lower.array()).all() && (theta.array() < upper.array()).all();
}

Vector Bounds::clamp(const Vector& theta) const {
  return theta.cwiseMax(lower).cwiseMin(upper);
}

ParameterBox ParameterBox::uniform(int arms, int dimension, double lo, double hi) {
  return {Matrix::Constant(arms, dimension, lo), Matrix::Constant(arms, dimension, hi)};
}

TrialModel::TrialModel(std::vector<ArmModel> arms, CovariateSpec covariates, Matrix true_theta,
                       ParameterBox box)
    : arms_(std::move(arms)),
      covariates_(std::move(covariates)),
      true_theta_(std::move(true_theta)),
      box_(std::move(box)) {
  const auto K = static_cast<Eigen::Index>(arms_.size());
  const Eigen::Index d = covariates_.dimension();
  if (K < 2) throw ConfigError("model.arms", "at least two arms are required");
  if (true_theta_.rows() != K || true_theta_.cols() != d) {
    throw ConfigError("model.theta", "expected a " + std::to_string(K) + " x " + std::to_string(d) +
                                         " matrix, got " + std::to_string(true_theta_.rows()) +
                                         " x " + std::to_string(true_theta_.cols()));
  }
  if (box_.lower.rows() != K || box_.lower.cols() != d || box_.upper.rows() != K ||
      box_.upper.cols() != d) {
    throw ConfigError("model.theta_box", "box shape must match theta");
  }
  if (!true_theta_.allFinite() || !box_.lower.allFinite() || !box_.upper.allFinite()) {
    throw ConfigError("model.theta_box", "parameter box must be bounded");
  }
  for (Eigen::Index k = 0; k < K; ++k) {
    if (!box_.arm(static_cast<int>(k)).contains_strictly(this->true_theta(static_cast<int>(k)))) {
      throw ConfigError("model.theta", "true theta of arm " + std::to_string(k + 1) +
                                           " is not an interior point of its parameter box");
    }
  }
}

// --- Operations -------------------------------------------------------------

Vector sample_covariate(const CovariateSpec& spec, RandomStream& rng) { return spec.sample(rng); }

double mean_response(const ArmModel& arm, const Vector& theta_k, const Vector& x) {
  check_dims(theta_k, x);
  return arm.cumulant_d1(arm.link(x.dot(theta_k)));
}

double sample_response(const ArmModel& arm, const Vector& theta_k, const Vector& x,
                       RandomStream& rng) {
  const double mean = mean_response(arm, theta_k, x);
  if (arm.family() == Family::logistic) return rng.uniform() < mean ? 1.0 : 0.0;
  return mean + std::sqrt(arm.dispersion()) * rng.normal();
}

Matrix conditional_fisher_info(const ArmModel& arm, const Vector& theta_k, const Vector& x) {
  check_dims(theta_k, x);
  const double eta = x.dot(theta_k);
  const double hp = arm.link_derivative(eta);
  const double w = arm.cumulant_d2(arm.link(eta)) * hp * hp / arm.dispersion();
  return w * x * x.transpose();
}

Vector score(const ArmModel& arm, const Vector& theta_k, const Vector& x, double y) {
  check_dims(theta_k, x);
  const double eta = x.dot(theta_k);
  const double residual = y - arm.cumulant_d1(arm.link(eta));
  return (residual * arm.link_derivative(eta) / arm.dispersion()) * x;
}

}  // namespace cara
