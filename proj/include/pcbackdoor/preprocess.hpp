#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "pcbackdoor/geometry.hpp"
#include "pcbackdoor/rng.hpp"
#include "pcbackdoor/trigger.hpp"

namespace pcbackdoor {

/// Statistical outlier removal: drop the n_remove points whose mean distance
/// to their k nearest neighbors is largest.
struct SorParams {
  std::size_t k = 30;
  std::size_t n_remove = 100;
  friend bool operator==(const SorParams&, const SorParams&) = default;
};

/// Simple random sampling without replacement.
struct SrsParams {
  std::size_t n_keep = 1024;
  friend bool operator==(const SrsParams&, const SrsParams&) = default;
};

namespace aug {

/// R_z(u), u ~ U(0, max_angle_deg) in degrees.
struct RotateZ {
  double max_angle_deg = 20.0;
  friend bool operator==(const RotateZ&, const RotateZ&) = default;
};
/// Three independent angles in [0, 2pi), composed as R_x R_y R_z.
struct RotateXyz360 {
  friend bool operator==(const RotateXyz360&, const RotateXyz360&) = default;
};
/// One factor u ~ U(lo, hi) on all axes.
struct Scale {
  double lo = 0.5;
  double hi = 1.5;
  friend bool operator==(const Scale&, const Scale&) = default;
};
/// One offset with each component ~ U(-range, range).
struct Shift {
  double range = 0.1;
  friend bool operator==(const Shift&, const Shift&) = default;
};
/// Drop ratio u ~ U(0, max_ratio); dropped points become copies of the first kept point.
struct Dropout {
  double max_ratio = 0.2;
  friend bool operator==(const Dropout&, const Dropout&) = default;
};
/// Per-coordinate N(0, sigma^2) noise clipped to [-clip, clip].
struct Jitter {
  double sigma = 0.02;
  double clip = 0.05;
  friend bool operator==(const Jitter&, const Jitter&) = default;
};

}  // namespace aug

using AugKind = std::variant<aug::RotateZ, aug::RotateXyz360, aug::Scale, aug::Shift, aug::Dropout,
                             aug::Jitter>;

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

struct CountRange {
  std::size_t lo = 1;
  std::size_t hi = 1;
  friend bool operator==(const CountRange&, const CountRange&) = default;
};

enum class AdaptiveMode { Average, Smooth };

/// Sampling ranges of the victim's WLT-style augmentation. Angles in degrees.
struct AdaptiveRanges {
  Range alpha_deg{-10.0, 10.0};
  Range scale{1.0, 10.0};
  CountRange anchors{1, 32};
  Range bandwidth{0.1, 0.9};

  void validate() const;
  friend bool operator==(const AdaptiveRanges&, const AdaptiveRanges&) = default;
};

struct AdaptiveDefense {
  AdaptiveMode mode = AdaptiveMode::Average;
  AdaptiveRanges ranges;
  bool renormalize = true;
  friend bool operator==(const AdaptiveDefense&, const AdaptiveDefense&) = default;
};

/// Draws of one adaptive-defense application, exposed for testing.
struct AdaptiveDraw {
  double alpha;  // radians
  double scale;
  std::size_t anchors;
  double bandwidth;  // unused in average mode
  std::size_t fps_start;
};

std::vector<std::size_t> sor_removed_indices(const PointCloud& cloud, const SorParams& params);
PointCloud sor(const PointCloud& cloud, const SorParams& params);

PointCloud srs(const PointCloud& cloud, std::size_t n_keep, Rng& rng);

PointCloud random_augment(const PointCloud& cloud, const AugKind& kind, Rng& rng);

AdaptiveDraw draw_adaptive(const PointCloud& cloud, AdaptiveMode mode, const AdaptiveRanges& ranges,
                           Rng& rng);
PointCloud apply_adaptive(const PointCloud& cloud, AdaptiveMode mode, const AdaptiveDraw& draw,
                          bool renormalize);
PointCloud adaptive_wlt_defense(const PointCloud& cloud, AdaptiveMode mode,
                                const AdaptiveRanges& ranges, Rng& rng, bool renormalize = true);

using StepKind = std::variant<SorParams, SrsParams, aug::RotateZ, aug::RotateXyz360, aug::Scale,
                              aug::Shift, aug::Dropout, aug::Jitter, AdaptiveDefense>;

struct StepSpec {
  StepKind kind;
  // Draw fresh randomness every epoch; when false the step sees the same
  // draws in every epoch.
  bool reseed_per_epoch = true;
  friend bool operator==(const StepSpec&, const StepSpec&) = default;
};

/// Ordered pre-processing steps. Empty means identity.
struct PipelineSpec {
  std::vector<StepSpec> steps;

  bool empty() const noexcept { return steps.empty(); }
  void validate() const;
  friend bool operator==(const PipelineSpec&, const PipelineSpec&) = default;
};

/// Short name of a step kind ("sor", "rotz", ...).
std::string step_name(const StepKind& kind);
/// True when the step never consumes randomness.
bool step_is_deterministic(const StepKind& kind);

PointCloud apply_step(const PointCloud& cloud, const StepKind& kind, Rng& rng);

/// Runs the steps in order; step i draws from its own child of `rng`.
PointCloud run_pipeline(const PointCloud& cloud, const PipelineSpec& spec, Rng& rng);

/// Runs the steps in order with per-step streams keyed by (seed, sample, epoch, step).
/// Steps with reseed_per_epoch == false use epoch 0 for their key.
PointCloud run_pipeline(const PointCloud& cloud, const PipelineSpec& spec, std::uint64_t seed,
                        std::uint64_t sample_id, std::uint64_t epoch);

/// Compact textual form, e.g. "sor(k=30,remove=100),rotz(max=20)". Angles in degrees.
std::string format_pipeline(const PipelineSpec& spec);
/// Inverse of format_pipeline. Bare step names take default parameters.
/// Throws ConfigError on unknown steps or parameters.
PipelineSpec parse_pipeline(const std::string& text);

}  // namespace pcbackdoor
