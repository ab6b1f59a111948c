#pragma once

#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <variant>

#include "pcbackdoor/geometry.hpp"
#include "pcbackdoor/rng.hpp"

namespace pcbackdoor {

constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Weighted local transformation trigger: FPS anchors, one rotation+scaling
/// per anchor, Gaussian-kernel blending of the per-anchor images.
struct WltParams {
  std::size_t anchors = 16;
  double alpha = deg_to_rad(5.0);  // radians, same angle about x, y and z
  double scale = 5.0;
  double bandwidth = 0.5;
  std::uint64_t seed = 0;
  // Re-normalize the blended cloud into the unit ball.
  bool renormalize = true;

  void validate() const;
  friend bool operator==(const WltParams&, const WltParams&) = default;
};

/// Extra points placed uniformly inside a small ball.
struct BallTriggerParams {
  Vec3 center = Vec3::Constant(0.05);
  double radius = 0.05;
  double ratio = 0.01;

  void validate() const;
  friend bool operator==(const BallTriggerParams& a, const BallTriggerParams& b) {
    return a.center == b.center && a.radius == b.radius && a.ratio == b.ratio;
  }
};

/// Global rotation about the z axis.
struct RotationTriggerParams {
  double angle_z = deg_to_rad(10.0);

  void validate() const;
  friend bool operator==(const RotationTriggerParams&, const RotationTriggerParams&) = default;
};

using Trigger = std::variant<WltParams, BallTriggerParams, RotationTriggerParams>;

std::string trigger_name(const Trigger& trigger);

/// R * S * (x - a) + a.
Vec3 anchor_transform(const Vec3& x, const Vec3& anchor, const Mat3& rotation, const Mat3& scaling);

/// exp(-|x - a|^2 / (2 h^2)). Throws InvalidArgument for h <= 0.
double gaussian_weight(const Vec3& x, const Vec3& anchor, double bandwidth);

/// Kernel-weighted blend of the per-anchor transforms of every point.
/// No normalization is applied to the result.
PointCloud wlt_blend(const PointCloud& cloud, std::span<const Vec3> anchors, const Mat3& rotation,
                     const Mat3& scaling, double bandwidth);

/// Same transform set blended with uniform weights 1/W.
PointCloud wlt_average(const PointCloud& cloud, std::span<const Vec3> anchors, const Mat3& rotation,
                       const Mat3& scaling);

/// FPS start index drawn from `params.seed`.
std::size_t wlt_default_start(const PointCloud& cloud, const WltParams& params);

/// Applies the WLT trigger. Anchors come from FPS starting at `fps_start`
/// (drawn from params.seed when absent). The input is expected to be
/// unit-ball normalized. Throws InvalidArgument when W > K.
PointCloud wlt_apply(const PointCloud& cloud, const WltParams& params,
                     std::optional<std::size_t> fps_start = std::nullopt);

/// Number of ball points added for a cloud of `cloud_size` points: ceil(ratio * K).
std::size_t ball_point_count(std::size_t cloud_size, double ratio);

/// Keeps K fixed: random original points are dropped to make room for the
/// ball points, which are appended at the end of the cloud.
PointCloud ball_trigger_apply(const PointCloud& cloud, const BallTriggerParams& params, Rng& rng);

PointCloud rotation_trigger_apply(const PointCloud& cloud, const RotationTriggerParams& params);

struct TriggeredCloud {
  PointCloud cloud;
  std::optional<std::size_t> fps_start;  // set for WLT
};

/// Dispatches on the trigger kind. `rng` supplies the per-sample draws: the
/// FPS start for WLT and the ball points for the ball trigger.
TriggeredCloud apply_trigger(const Trigger& trigger, const PointCloud& cloud, Rng& rng);

}  // namespace pcbackdoor
