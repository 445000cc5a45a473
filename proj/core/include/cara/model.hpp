#pragma once

#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "cara/linalg.hpp"
#include "cara/random.hpp"

namespace cara {

// ---------------------------------------------------------------------------
// Covariate distributions
// ---------------------------------------------------------------------------

struct UniformCoordinate {
  double lower;
  double upper;
};

/// Takes `low` with probability 1 - p_high and `high` with probability p_high.
struct TwoPointCoordinate {
  double low;
  double high;
  double p_high;
};

struct ConstantCoordinate {
  double value;
};

using CoordinateDistribution =
    std::variant<UniformCoordinate, TwoPointCoordinate, ConstantCoordinate>;

/**
 * Distribution of the patient covariate vector.
 *
 * Two kinds are supported: a finite list of support points with masses, and a
 * product of independent bounded coordinates. With the intercept flag set, a
 * constant leading 1 is prepended to every drawn vector, so `dimension()`
 * counts it. Only bounded supports can be expressed.
 *
 * A product spec whose coordinates are all two-point or constant has finite
 * support; `has_finite_support()` reports it and `support()` enumerates it in
 * lexicographic order (first coordinate varies slowest).
 */
class CovariateSpec {
 public:
  enum class Kind { discrete, product };

  static CovariateSpec discrete(std::vector<Vector> points, std::vector<double> probabilities,
                                bool intercept = false);
  static CovariateSpec product(std::vector<CoordinateDistribution> coordinates,
                               bool intercept = false);

  Kind kind() const noexcept { return kind_; }
  int dimension() const noexcept { return dimension_; }
  bool intercept() const noexcept { return intercept_; }
  bool has_finite_support() const noexcept { return !support_.empty(); }

  /// Full covariate vectors (intercept included) of the finite support.
  const std::vector<Vector>& support() const noexcept { return support_; }
  const std::vector<double>& masses() const noexcept { return masses_; }

  /// Exact-match lookup into the finite support.
  std::optional<std::size_t> support_index(const Vector& x) const;
  /// P(xi = x); zero off the support or for non-finite specs.
  double mass(const Vector& x) const;

  const std::vector<CoordinateDistribution>& coordinates() const noexcept { return coordinates_; }

  Vector sample(RandomStream& rng) const;

 private:
  CovariateSpec() = default;
  void enumerate_product_support();

  Kind kind_ = Kind::discrete;
  int dimension_ = 0;
  bool intercept_ = false;
  std::vector<Vector> support_;
  std::vector<double> masses_;
  std::vector<double> cumulative_;
  std::vector<CoordinateDistribution> coordinates_;
};

// ---------------------------------------------------------------------------
// Response models
// ---------------------------------------------------------------------------

enum class Family { logistic, normal };

std::string_view family_name(Family family) noexcept;

/**
 * Exponential-family response model for one arm,
 *   f(y | x, theta) = exp{(y mu - a(mu)) / phi + b(y, phi)},  mu = h(x theta^T).
 *
 * Both built-in families use the identity link. Adding a family means
 * extending the cumulant and link members in model.cpp.
 */
class ArmModel {
 public:
  static ArmModel logistic();
  static ArmModel normal(double variance);

  Family family() const noexcept { return family_; }
  /// phi: 1 for logistic, sigma^2 for normal.
  double dispersion() const noexcept { return dispersion_; }

  double link(double eta) const noexcept;
  double link_derivative(double eta) const noexcept;
  double link_second_derivative(double eta) const noexcept;

  double cumulant(double mu) const noexcept;
  double cumulant_d1(double mu) const noexcept;
  double cumulant_d2(double mu) const noexcept;

  /// log f(y | mu) including b(y, phi).
  double log_density(double y, double mu) const noexcept;

  /// Var(Y | x) = a''(mu) phi.
  double response_variance(double mu) const noexcept { return cumulant_d2(mu) * dispersion_; }

 private:
  ArmModel(Family family, double dispersion) : family_(family), dispersion_(dispersion) {}

  Family family_;
  double dispersion_;
};

// ---------------------------------------------------------------------------
// Trial model
// ---------------------------------------------------------------------------

struct Bounds {
  Vector lower;
  Vector upper;

  bool contains(const Vector& theta) const;
  bool contains_strictly(const Vector& theta) const;
  Vector clamp(const Vector& theta) const;
  Vector center() const { return 0.5 * (lower + upper); }
};

/// Axis-aligned box per arm; rows of `lower` / `upper` are arms.
struct ParameterBox {
  Matrix lower;
  Matrix upper;

  static ParameterBox uniform(int arms, int dimension, double lo, double hi);
  Bounds arm(int k) const { return {lower.row(k).transpose(), upper.row(k).transpose()}; }
};

class TrialModel {
 public:
  /// Validates shapes and that every true theta_k lies strictly inside its box.
  TrialModel(std::vector<ArmModel> arms, CovariateSpec covariates, Matrix true_theta,
             ParameterBox box);

  int arm_count() const noexcept { return static_cast<int>(arms_.size()); }
  int dimension() const noexcept { return covariates_.dimension(); }
  const std::vector<ArmModel>& arms() const noexcept { return arms_; }
  const ArmModel& arm(int k) const { return arms_.at(static_cast<std::size_t>(k)); }
  const CovariateSpec& covariates() const noexcept { return covariates_; }
  /// K x d; row k is theta_k.
  const Matrix& true_theta() const noexcept { return true_theta_; }
  Vector true_theta(int k) const { return true_theta_.row(k).transpose(); }
  const ParameterBox& box() const noexcept { return box_; }

 private:
  std::vector<ArmModel> arms_;
  CovariateSpec covariates_;
  Matrix true_theta_;
  ParameterBox box_;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

Vector sample_covariate(const CovariateSpec& spec, RandomStream& rng);

/// a'(h(x theta^T)).
double mean_response(const ArmModel& arm, const Vector& theta_k, const Vector& x);

double sample_response(const ArmModel& arm, const Vector& theta_k, const Vector& x,
                       RandomStream& rng);

/// (1/phi) a''(mu) h'(x theta^T)^2 x^T x.
Matrix conditional_fisher_info(const ArmModel& arm, const Vector& theta_k, const Vector& x);

/// Gradient of log f(y | x, theta_k) with respect to theta_k.
Vector score(const ArmModel& arm, const Vector& theta_k, const Vector& x, double y);

}  // namespace cara
