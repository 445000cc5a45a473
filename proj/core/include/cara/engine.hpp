#pragma once

#include <cstdint>
#include <vector>

#include "cara/allocation.hpp"
#include "cara/estimation.hpp"
#include "cara/linalg.hpp"
#include "cara/model.hpp"
#include "cara/random.hpp"

namespace cara {

struct PatientRecord {
  std::int64_t index;  ///< 1-based accrual order
  Vector x;
  int arm;             ///< 0-based
  Vector psi;          ///< assignment probabilities used for this patient
  double y;
  int support_index;   ///< position in the finite covariate support, -1 otherwise
  bool burn_in;
};

struct EstimateSnapshot {
  std::int64_t m;  ///< number of patients the estimate is based on
  Matrix theta_hat;
};

struct ArmFitFlags {
  std::int64_t fits = 0;
  std::int64_t failures = 0;
  std::int64_t projected = 0;
  std::int64_t not_converged = 0;
  bool last_converged = false;
};

/**
 * Everything a trial has produced so far.
 *
 * Burn-in rows record psi = (1/K, ..., 1/K), the marginal probability of each
 * arm under the permuted block.
 */
struct TrialHistory {
  int arm_count = 0;
  int dimension = 0;
  std::int64_t m0 = 0;
  std::uint64_t seed = 0;

  std::vector<PatientRecord> records;
  std::vector<std::int64_t> counts;  ///< N_{m,k}

  /// Finite covariate support and tallies N_m(x), N_{m,k|x}; empty for continuous specs.
  std::vector<Vector> support;
  std::vector<std::int64_t> support_counts;
  std::vector<std::vector<std::int64_t>> support_arm_counts;

  Matrix theta_hat;  ///< current estimate (K x d)
  std::vector<EstimateSnapshot> trajectory;
  std::vector<ArmSample> arm_samples;
  std::vector<ArmFitFlags> fit_flags;

  std::int64_t size() const noexcept { return static_cast<std::int64_t>(records.size()); }
  /// N_{n,k|x} / N_n(x) for support point `s`; NaN when N_n(x) = 0.
  double conditional_proportion(std::size_t s, int k) const;
};

struct TrialOptions {
  std::int64_t horizon = 0;  ///< n
  int m0 = 0;
  EstimationOptions estimation;
  /// Keep every `trajectory_stride`-th estimate (the final one is always kept).
  int trajectory_stride = 1;
};

/**
 * A single sequential trial.
 *
 * Patient m+1 is assigned with probabilities pi(theta_hat_m, xi_{m+1}); only the
 * chosen arm's response is generated. Covariates, assignments, responses and
 * the burn-in permutation each use their own random stream so that a change
 * in one never shifts the draws of another.
 */
class Trial {
 public:
  Trial(const TrialModel& model, const AllocationRule& rule, TrialOptions options,
        std::uint64_t seed);

  /// Assigns m0 patients to every arm in one uniformly permuted block, then
  /// fits the first estimates.
  void burn_in();

  /// One adaptive assignment.
  void step();

  /// Runs burn-in (if not done) and steps until the horizon.
  void run();

  bool burn_in_done() const noexcept { return burn_in_done_; }
  const TrialHistory& history() const noexcept { return history_; }
  TrialHistory release() && { return std::move(history_); }

 private:
  void record(const Vector& x, int arm, Vector psi, bool burn_in);
  void refit();
  void snapshot(bool force);

  const TrialModel& model_;
  const AllocationRule& rule_;
  TrialOptions options_;
  TrialStreams streams_;
  TrialHistory history_;
  bool burn_in_done_ = false;
  std::int64_t adaptive_steps_ = 0;
};

/// Burn-in only: K m0 patients, each arm exactly m0.
TrialHistory burn_in(const TrialModel& model, const AllocationRule& rule, int m0,
                     std::uint64_t seed, const EstimationOptions& estimation = {});

/// Burn-in followed by n - K m0 adaptive steps.
TrialHistory run_trial(const TrialModel& model, const AllocationRule& rule,
                       const TrialOptions& options, std::uint64_t seed);

}  // namespace cara
