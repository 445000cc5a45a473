#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cara/linalg.hpp"
#include "cara/model.hpp"

namespace cara {

struct TrialHistory;

struct EstimationOptions {
  double gradient_tolerance = 1e-8;
  double step_tolerance = 1e-10;
  int max_iterations = 100;
  /// Refit after every `refit_interval` adaptive assignments.
  int refit_interval = 1;
  /// Fit normal arms jointly with arm-specific intercepts and a common
  /// covariate slope (all arms must be normal and covariates must carry an
  /// intercept).
  bool shared_slopes = false;
};

/**
 * The observations (x, y) of one arm.
 *
 * Identical (x, y) pairs are merged into one weighted row, so samples drawn
 * from discrete covariates with binary responses stay small no matter how
 * many patients accrue. Running sums x x^T, y x and y^2 are kept for the
 * least-squares fits.
 */
class ArmSample {
 public:
  struct Row {
    Vector x;
    double y;
    double weight;
  };

  explicit ArmSample(int dimension);

  void add(const Vector& x, double y);

  int dimension() const noexcept { return dimension_; }
  std::int64_t count() const noexcept { return count_; }
  bool empty() const noexcept { return count_ == 0; }
  const std::vector<Row>& rows() const noexcept { return rows_; }
  const Matrix& gram() const noexcept { return gram_; }
  const Vector& cross() const noexcept { return cross_; }
  double sum_squares() const noexcept { return sum_squares_; }

 private:
  int dimension_;
  std::int64_t count_ = 0;
  std::vector<Row> rows_;
  Matrix gram_;
  Vector cross_;
  double sum_squares_ = 0.0;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class FitStatus {
  converged,
  max_iterations,
  empty_sample,
  singular_hessian,
  degenerate_design,
};

std::string_view fit_status_name(FitStatus status) noexcept;

struct FitResult {
  Vector theta_hat;
  bool converged = false;
  /// A box constraint is active at the returned estimate.
  bool projected = false;
  int iterations = 0;
  /// Log-likelihood for MLE fits, residual sum of squares for LSE fits.
  double objective = 0.0;
  FitStatus status = FitStatus::converged;
  /// Objective after the starting point and after every accepted step.
  std::vector<double> objective_trace;

  /// The fit produced no usable estimate and the caller should keep its previous one.
  bool failed() const noexcept {
    return status == FitStatus::empty_sample || status == FitStatus::singular_hessian ||
           status == FitStatus::degenerate_design;
  }
};

/// Logistic log-likelihood sum w (y eta - log(1 + e^eta)).
double logistic_log_likelihood(const ArmSample& sample, const Vector& theta);

/// Newton iterations (IRLS) with step halving, projected onto the box.
FitResult fit_logistic_mle(const ArmSample& sample, const Bounds& box, const Vector& init,
                           const EstimationOptions& opts = {});

/// Solves the normal equations, then clamps to the box.
FitResult fit_linear_lse(const ArmSample& sample, const Bounds& box);

/// Joint least squares with per-arm intercepts and one slope vector shared by
/// all arms. Row k of the result holds (intercept_k, slope).
std::vector<FitResult> fit_shared_slope_lse(std::span<const ArmSample> samples,
                                            const ParameterBox& box);

/// Residual mean square SSE / (n - d) at theta.
double residual_variance(const ArmSample& sample, const Vector& theta);

struct EstimateUpdate {
  Matrix theta_hat;
  std::vector<FitResult> fits;
};

/// Refits every arm from the history's samples, warm-started at the
/// history's current estimate. Arms whose fit fails keep that estimate.
EstimateUpdate update_all_estimates(const TrialHistory& history, const TrialModel& model,
                                    const EstimationOptions& opts = {});

/// Same as above from explicit per-arm samples and previous estimates.
EstimateUpdate update_all_estimates(std::span<const ArmSample> samples, const Matrix& previous,
                                    const TrialModel& model, const EstimationOptions& opts = {});

}  // namespace cara
