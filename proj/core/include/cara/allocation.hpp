#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "cara/linalg.hpp"

namespace cara {

enum class RuleKind {
  ratio_of_g,             ///< G(z_k) / sum_j G(z_j)
  exponential,            ///< e^{T z_k} / sum_j e^{T z_j}
  two_arm_difference,     ///< (G(z_1 - z_2), G(z_2 - z_1)), K = 2
  odds_ratio,             ///< e^{z_k} / (e^{z_1} + e^{z_2}), K = 2
  covariate_free_normal,  ///< Phi((theta_{1,0} - theta_{2,0}) / T), ignores x, K = 2
  custom,                 ///< user-supplied probabilities, numerical Jacobian
};

/// G for ratio-of-G rules: e^z or 1 + z^2.
enum class RatioFunction { exponential, one_plus_square };

/// G for two-arm difference rules, scaled by the spread: Phi(u/T) or 1/(1+e^{-u/T}).
enum class DifferenceFunction { normal_cdf, logistic };

/**
 * An allocation function pi(theta*, x) mapping a K x d parameter matrix and a
 * covariate to a strictly positive probability vector over the K arms.
 *
 * For every built-in kind except `covariate_free_normal`, pi depends on
 * theta* only through the linear scores z_k = theta*_k x^T.
 */
class AllocationRule {
 public:
  using ProbabilityFn = std::function<Vector(const Matrix& theta_star, const Vector& x)>;

  static AllocationRule ratio_of_g(int arms, int dimension, RatioFunction g);
  static AllocationRule exponential(int arms, int dimension, double spread);
  static AllocationRule two_arm_difference(int dimension, DifferenceFunction g, double spread);
  static AllocationRule odds_ratio(int dimension);
  static AllocationRule covariate_free_normal(int dimension, double spread);
  static AllocationRule custom(int arms, int dimension, ProbabilityFn fn, bool uses_covariate,
                               std::string name = "custom");

  RuleKind kind() const noexcept { return kind_; }
  int arm_count() const noexcept { return arms_; }
  int dimension() const noexcept { return dimension_; }
  double spread() const noexcept { return spread_; }
  RatioFunction ratio_function() const noexcept { return ratio_fn_; }
  DifferenceFunction difference_function() const noexcept { return difference_fn_; }
  bool uses_covariate() const noexcept { return uses_covariate_; }
  bool has_analytic_jacobian() const noexcept { return kind_ != RuleKind::custom; }
  const std::string& name() const noexcept { return name_; }

  const ProbabilityFn& custom_function() const noexcept { return custom_; }

 private:
  AllocationRule(RuleKind kind, int arms, int dimension) : kind_(kind), arms_(arms), dimension_(dimension) {}

  RuleKind kind_;
  int arms_;
  int dimension_;
  double spread_ = 1.0;
  RatioFunction ratio_fn_ = RatioFunction::exponential;
  DifferenceFunction difference_fn_ = DifferenceFunction::normal_cdf;
  bool uses_covariate_ = true;
  std::string name_;
  ProbabilityFn custom_;
};

/// Names accepted by configuration parsing, in a stable order.
std::vector<std::string_view> supported_rule_kinds();

/// pi(theta*, x) as a K-vector.
Vector probabilities(const AllocationRule& rule, const Matrix& theta_star, const Vector& x);

/// K x (K d) matrix with entry (k, j d + l) = d pi_k / d theta*_{j l}.
/// Analytic for built-ins; falls back to central differences for custom rules.
Matrix jacobian(const AllocationRule& rule, const Matrix& theta_star, const Vector& x);

/// Central-difference Jacobian with the same layout as `jacobian`.
Matrix finite_difference_jacobian(const AllocationRule& rule, const Matrix& theta_star,
                                  const Vector& x, double step = 1e-5);

/// Columns of a full Jacobian that belong to arm k (a K x d block).
Matrix arm_block(const Matrix& full_jacobian, int k, int dimension);

double standard_normal_cdf(double z);
double standard_normal_pdf(double z);

}  // namespace cara
