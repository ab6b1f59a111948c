#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <random>

namespace pcbackdoor {

/// Deterministic random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The standard's distribution classes are implementation-defined,
/// so every conversion to doubles, indices and normals is done here; the same
/// seed produces the same draws on every conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Stream derived from a seed and a path of keys (sample id, epoch, ...).
  /// Distinct paths give statistically independent streams.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n);
  /// Uniform integer in [lo, hi], inclusive.
  std::int64_t integer(std::int64_t lo, std::int64_t hi);
  /// Standard normal draw (Box-Muller).
  double normal();
  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// Child generator seeded from the next draw of this one.
  Rng fork();

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_normal_;
};

/// SplitMix64 finalizer, used to scramble seeds and hash keys.
std::uint64_t mix64(std::uint64_t x);

}  // namespace pcbackdoor
