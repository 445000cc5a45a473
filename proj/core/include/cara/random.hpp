#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace cara {

/// SplitMix64 output mixing function.
std::uint64_t mix64(std::uint64_t z) noexcept;

/// Splittable seed derivation. Stream `index` of `master` is
/// mix64(master + (index + 1) * 0x9E3779B97F4A7C15). Replicate i of an
/// experiment uses derive_seed(master, i); a trial seeded with s draws its
/// covariate / assignment / response / burn-in streams from
/// derive_seed(s, 0..3).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept;

/// A 64-bit Mersenne Twister with portable variate conversions.
///
/// The standard distributions are implementation-defined, so uniform, normal
/// and bounded-integer variates are produced here from raw engine output to
/// keep results identical across standard libraries.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();

  /// Uniform on (0, 1).
  double uniform_open();

  /// Standard normal (Box-Muller, one variate per call).
  double normal();

  /// Uniform integer in [0, n). `n` must be positive.
  std::size_t index(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

/// The per-purpose streams a single trial consumes.
struct TrialStreams {
  explicit TrialStreams(std::uint64_t trial_seed)
      : covariate(derive_seed(trial_seed, 0)),
        assignment(derive_seed(trial_seed, 1)),
        response(derive_seed(trial_seed, 2)),
        burn_in(derive_seed(trial_seed, 3)) {}

  RandomStream covariate;
  RandomStream assignment;
  RandomStream response;
  RandomStream burn_in;
};

}  // namespace cara
