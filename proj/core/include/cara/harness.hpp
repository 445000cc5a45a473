#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cara/allocation.hpp"
#include "cara/asymptotics.hpp"
#include "cara/estimation.hpp"
#include "cara/model.hpp"

namespace cara {

std::string_view tool_version() noexcept;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Relative bands and absolute limits used by the criteria sets.
struct Tolerances {
  double allocation_variance = 0.15;   ///< |Var / Sigma_kk - 1|
  double allocation_mean_sd = 3.0;     ///< |mean| <= this * sqrt(Sigma_kk / R)
  double estimator_variance = 0.15;    ///< |Var / V_k,jj - 1|
  double conditional_variance = 0.20;  ///< |Var / Sigma_{|x},kk - 1|
  double plugin_sigma = 0.10;          ///< median relative error of Sigma-hat
  double plugin_V = 0.10;              ///< median relative error of V-hat_k
  double bb_variance = 0.15;
};

struct OutputSpec {
  std::string dir;
  bool per_patient_csv = false;
};

struct ExperimentConfig {
  ExperimentConfig(TrialModel model_, AllocationRule rule_)
      : model(std::move(model_)), rule(std::move(rule_)) {}

  std::string name;
  TrialModel model;
  AllocationRule rule;
  std::int64_t n = 0;
  int m0 = 0;
  std::int64_t replicates = 1;
  std::uint64_t seed = 0;
  int workers = 1;  ///< 0 = hardware concurrency
  std::vector<Vector> x_list;
  EstimationOptions estimation;
  ExpectationPolicy expectation;
  PluginOptions plugin;
  bool compute_plugin = true;
  OutputSpec output;
  std::vector<std::string> criteria;
  Tolerances tolerances;
  std::vector<std::int64_t> consistency_horizons;
  /// The parsed document with defaults filled in.
  nlohmann::json document;

  TrialOptions trial_options() const;
};

/// Names accepted in the `criteria` list.
std::vector<std::string_view> supported_criteria();

/// Validates a JSON document and builds the model and rule. Errors are
/// ConfigError naming the offending key.
ExperimentConfig parse_config(const nlohmann::json& document);
ExperimentConfig parse_config_text(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Replication
// ---------------------------------------------------------------------------

struct ReplicateRecord {
  std::int64_t replicate = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  std::vector<std::int64_t> counts;  ///< N_{n,k}
  Matrix theta_hat;
  /// N_n(x) and N_{n,k|x} over the finite covariate support (empty otherwise).
  std::vector<std::int64_t> x_counts;
  std::vector<std::vector<std::int64_t>> x_arm_counts;
  std::int64_t fit_failures = 0;
  /// ||Sigma-hat - Sigma||_inf / ||Sigma||_inf, NaN when not computed.
  double plugin_sigma_error = std::numeric_limits<double>::quiet_NaN();
  Vector plugin_V_error;
};

struct ConditionalSummary {
  Vector x;
  Vector pi;  ///< pi(theta, x)
  Matrix theory;
  std::int64_t replicates_used = 0;
  Vector mean;
  Matrix covariance;
  Vector ratio;  ///< diag(covariance) / diag(theory)
};

/**
 * Across-replicate moments. Allocation moments are of sqrt(n)(N_n/n - v),
 * estimator moments of sqrt(n)(theta_hat_n - theta) flattened row-major,
 * conditional moments of sqrt(N_n(x))(N_{n|x}/N_n(x) - pi(theta, x)).
 * Covariances use divisor R - 1 over the successful replicates.
 */
struct ReplicationSummary {
  std::int64_t n = 0;
  std::int64_t replicates = 0;
  std::int64_t failures = 0;
  std::uint64_t master_seed = 0;
  Vector v;
  Matrix theta;
  std::vector<Vector> support;
  std::vector<ReplicateRecord> records;

  Vector allocation_mean;
  Matrix allocation_covariance;
  Vector allocation_ratio;
  Vector estimator_mean;
  Matrix estimator_covariance;
  Vector estimator_ratio;
  std::vector<ConditionalSummary> conditional;

  /// Median over replicates of ||theta_hat_n - theta|| (Frobenius).
  double median_estimation_error = 0.0;

  bool has_plugin = false;
  double median_plugin_sigma_error = 0.0;
  Vector median_plugin_V_error;
  /// Element-wise median of the per-replicate plug-in reports.
  std::optional<PluginReport> median_plugin;
};

/// Replicate i runs with seed derive_seed(config.seed, i). The summary does
/// not depend on `config.workers`.
ReplicationSummary run_replications(const ExperimentConfig& config);
ReplicationSummary run_replications(const ExperimentConfig& config, const TheoryReport& theory);

/// Moments and ratios from the stored records.
void aggregate(ReplicationSummary& summary, const ExperimentConfig& config,
               const TheoryReport& theory);

/// Unbiased sample covariance of the rows of `samples`.
Matrix sample_covariance(const Matrix& samples);

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

struct CriterionResult {
  std::string criterion;
  std::string check;
  double observed = 0.0;
  double target = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool passed = false;
};

struct VerificationReport {
  std::string config_name;
  std::vector<CriterionResult> results;
  bool passed = false;
};

struct ConsistencyPoint {
  std::int64_t n = 0;
  double median_error = 0.0;
};

struct VerificationInputs {
  std::optional<ReplicationSummary> summary;
  std::optional<BbLimits> bb;
  std::vector<ConsistencyPoint> consistency;
};

std::vector<CriterionResult> evaluate_criteria(const ExperimentConfig& config,
                                               const TheoryReport& theory,
                                               const VerificationInputs& inputs);

struct VerificationRun {
  TheoryReport theory;
  VerificationInputs inputs;
  VerificationReport report;
};

/// Runs theory, replications and plug-ins for the configured criteria.
/// An empty criteria list is an error.
VerificationRun verify(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

/// The JSON report: tool version, config echo, theory and whatever else is given.
nlohmann::json build_report(const ExperimentConfig& config, const TheoryReport& theory,
                            const ReplicationSummary* summary,
                            const VerificationReport* verification,
                            const std::vector<ConsistencyPoint>& consistency = {});

/// Writes report.json and, when a summary is given, replicates.csv into `dir`.
void emit_reports(const std::filesystem::path& dir, const ExperimentConfig& config,
                  const TheoryReport& theory, const ReplicationSummary* summary,
                  const VerificationReport* verification,
                  const std::vector<ConsistencyPoint>& consistency = {});

}  // namespace cara
