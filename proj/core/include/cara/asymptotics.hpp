#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "cara/allocation.hpp"
#include "cara/engine.hpp"
#include "cara/linalg.hpp"
#include "cara/model.hpp"

namespace cara {

// ---------------------------------------------------------------------------
// Expectations over the covariate distribution
// ---------------------------------------------------------------------------

enum class ExpectationMethod { exact_enumeration, quadrature, monte_carlo };

std::string_view expectation_method_name(ExpectationMethod method) noexcept;

struct ExpectationPolicy {
  /// Uniform coordinates handled by tensor Gauss-Legendre before switching to Monte Carlo.
  int max_quadrature_dimensions = 3;
  int nodes_per_dimension = 64;
  std::size_t monte_carlo_draws = 1'000'000;
  std::uint64_t monte_carlo_seed = 0x243F6A8885A308D3ULL;
  bool force_monte_carlo = false;
};

/**
 * Deterministic node set for E[f(xi)].
 *
 * Finite supports are enumerated exactly. Product specs with uniform
 * coordinates use a tensor Gauss-Legendre rule (two-point and constant
 * coordinates are still enumerated), or plain Monte Carlo with a fixed seed
 * when there are too many uniform coordinates. Nodes are visited in a fixed
 * order so sums are bit-stable.
 */
class CovariateIntegrator {
 public:
  explicit CovariateIntegrator(const CovariateSpec& spec, ExpectationPolicy policy = {});

  ExpectationMethod method() const noexcept { return method_; }
  std::size_t node_count() const noexcept;

  template <class Fn>
  void for_each(Fn&& fn) const {
    if (method_ == ExpectationMethod::monte_carlo) {
      RandomStream rng(policy_.monte_carlo_seed);
      const double w = 1.0 / static_cast<double>(policy_.monte_carlo_draws);
      for (std::size_t i = 0; i < policy_.monte_carlo_draws; ++i) fn(spec_.sample(rng), w);
      return;
    }
    if (method_ == ExpectationMethod::exact_enumeration) {
      for (std::size_t i = 0; i < spec_.support().size(); ++i) fn(spec_.support()[i], spec_.masses()[i]);
      return;
    }
    std::vector<std::size_t> at(axes_.size(), 0);
    Vector x(spec_.dimension());
    if (spec_.intercept()) x(0) = 1.0;
    const int offset = spec_.intercept() ? 1 : 0;
    while (true) {
      double w = 1.0;
      for (std::size_t c = 0; c < axes_.size(); ++c) {
        x(offset + static_cast<int>(c)) = axes_[c][at[c]].first;
        w *= axes_[c][at[c]].second;
      }
      fn(static_cast<const Vector&>(x), w);
      std::size_t c = axes_.size();
      while (c > 0) {
        --c;
        if (++at[c] < axes_[c].size()) break;
        at[c] = 0;
        if (c == 0) return;
      }
      if (axes_.empty()) return;
    }
  }

 private:
  const CovariateSpec& spec_;
  ExpectationPolicy policy_;
  ExpectationMethod method_;
  std::vector<std::vector<std::pair<double, double>>> axes_;
};

// ---------------------------------------------------------------------------
// Theory
// ---------------------------------------------------------------------------

struct TargetAllocation {
  Vector v;
  /// K blocks; block k is dg / dtheta_k (K x d).
  std::vector<Matrix> dg_dtheta;
  /// Monte Carlo standard error of v (zeros for deterministic rules).
  Vector standard_error;
  ExpectationMethod method = ExpectationMethod::exact_enumeration;
  std::size_t node_count = 0;
};

struct InformationMatrices {
  std::vector<Matrix> information;  ///< I_k = E[pi_k I_k(theta_k | xi)]
  std::vector<Matrix> V;            ///< I_k^{-1}
};

struct SigmaParts {
  Matrix sigma1;
  Matrix sigma2;
  Matrix sigma;
};

struct ConditionalTheory {
  Vector x;
  double mass = 0.0;
  Vector pi;
  Matrix sigma_given_x;
};

struct TheoryReport {
  Vector v;
  Vector v_standard_error;
  std::vector<Matrix> dg_dtheta;
  std::vector<Matrix> information;
  std::vector<Matrix> V_blocks;
  Matrix V;
  Matrix sigma1;
  Matrix sigma2;
  Matrix sigma;
  std::vector<ConditionalTheory> conditional;
  ExpectationMethod method = ExpectationMethod::exact_enumeration;
  std::size_t node_count = 0;
};

/// v = E[pi(theta, xi)] and dg/dtheta_k = E[d pi / d theta_k].
TargetAllocation target_allocation(const TrialModel& model, const AllocationRule& rule,
                                   const ExpectationPolicy& policy = {});

/// Throws SingularInformationError when some I_k has condition number above 1e12.
InformationMatrices info_matrices(const TrialModel& model, const AllocationRule& rule,
                                  const ExpectationPolicy& policy = {});

/// Sigma1 = diag(v) - v^T v, Sigma2 = sum_k D_k V_k D_k^T, Sigma = Sigma1 + 2 Sigma2.
SigmaParts assemble_sigma(const Vector& v, const std::vector<Matrix>& dg_dtheta,
                          const std::vector<Matrix>& V_blocks);

SigmaParts sigma(const TrialModel& model, const AllocationRule& rule,
                 const ExpectationPolicy& policy = {});

/// diag(pi) - pi^T pi + 2 sum_k J_k V_k J_k^T * mass, with J_k = d pi(x) / d theta_k.
Matrix assemble_conditional_sigma(const Vector& pi, const Matrix& full_jacobian,
                                  const std::vector<Matrix>& V_blocks, double mass);

/// Asymptotic covariance of the allocation proportions among patients with
/// covariate x. Throws ZeroMassCovariateError when P(xi = x) = 0.
Matrix sigma_given_x(const TrialModel& model, const AllocationRule& rule, const Vector& x,
                     const ExpectationPolicy& policy = {});

/// All theory quantities. Conditional blocks are computed for `x_list`, or for
/// every support point when `x_list` is empty and the support is finite.
TheoryReport theory_report(const TrialModel& model, const AllocationRule& rule,
                           const std::vector<Vector>& x_list = {},
                           const ExpectationPolicy& policy = {});

/// Asymptotic covariance of sqrt(N_k)(theta_hat_k - theta_k) under the
/// adaptive design: v_k (E[pi_k I_k(theta_k | xi)])^{-1}.
Matrix cara_variance(const TrialModel& model, const AllocationRule& rule, int k,
                     const ExpectationPolicy& policy = {});

/// Same quantity under a fixed allocation: (E[I_k(theta_k | xi)])^{-1}.
Matrix fixed_design_variance(const TrialModel& model, int k, const ExpectationPolicy& policy = {});

/// Conditional response variance used by `lse_sandwich`.
using ConditionalVariance = std::function<double(int arm, const Vector& x)>;

/// V_k = I_xk^{-1} I_Yk I_xk^{-1} with I_xk = E[pi_k xi^T xi] and
/// I_Yk = E[pi_k Var(Y_k | xi) xi^T xi]. Defaults to the arm's own variance,
/// which is only available for normal arms.
std::vector<Matrix> lse_sandwich(const TrialModel& model, const AllocationRule& rule,
                                 const ConditionalVariance& variance = {},
                                 const ExpectationPolicy& policy = {});

// ---------------------------------------------------------------------------
// Plug-in estimates from one trial
// ---------------------------------------------------------------------------

struct PluginOptions {
  /// Replace a normal arm's sigma^2 by its residual mean square.
  bool estimate_dispersion = false;
};

struct ConditionalEstimate {
  Vector x;
  double mass = 0.0;  ///< #{m : xi_m = x} / n
  Vector pi;
  Matrix sigma_given_x;
};

struct PluginReport {
  std::int64_t n = 0;
  Matrix theta_hat;
  Vector dispersion;
  std::vector<Matrix> information;
  std::vector<Matrix> V_blocks;
  /// Arms whose information estimate could not be inverted; their Sigma2 term is omitted.
  std::vector<bool> singular;
  Matrix sigma1;
  std::vector<Matrix> dg_dtheta;
  Matrix sigma;
  std::vector<ConditionalEstimate> conditional;
  /// All plug-in covariance matrices have eigenvalues >= -1e-10.
  bool psd = true;
};

/// Conditional blocks follow `x_list`, or the whole finite support when it is empty.
PluginReport plugin_estimates(const TrialHistory& history, const TrialModel& model,
                              const AllocationRule& rule, const std::vector<Vector>& x_list = {},
                              const PluginOptions& options = {});

// ---------------------------------------------------------------------------
// Two-arm normal design with common covariate slope
// ---------------------------------------------------------------------------

struct BbParameters {
  double mu1 = 0.0;
  double mu2 = 0.0;
  Vector beta;
  double sigma2 = 1.0;
  double spread = 1.0;
  Vector covariate_mean;        ///< a = E xi~
  Matrix covariate_covariance;  ///< Var xi~
};

struct BbLimits {
  double v1 = 0.5;
  double v2 = 0.5;
  /// Asymptotic covariance of sqrt(n)(mu_hat_1 - mu_1, mu_hat_2 - mu_2).
  Matrix intercept_covariance;
  /// Asymptotic covariance of sqrt(n)(beta_hat - beta).
  Matrix slope_covariance;
  /// Asymptotic variance of sqrt(n)(N_{n,1}/n - v_1).
  double allocation_variance = 0.0;
};

/**
 * Closed-form limits for the two-arm normal linear design with allocation
 * Phi((mu_hat_1 - mu_hat_2)/T), arm intercepts mu_k and a common slope beta.
 *
 * The allocation variance is v1 v2 + 2 sigma^2 (g')^2 / (v1 v2) where
 * g' = phi((mu1 - mu2)/T) / T is the derivative of mu1 -> Phi((mu1 - mu2)/T).
 */
BbLimits bb_closed_forms(const BbParameters& params);

/// Reads mu_k, beta, sigma^2 and T from a model / rule pair and computes the
/// covariate moments with the integrator.
BbParameters bb_parameters(const TrialModel& model, const AllocationRule& rule,
                           const ExpectationPolicy& policy = {});

}  // namespace cara
