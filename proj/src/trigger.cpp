#include "pcbackdoor/trigger.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pcbackdoor/error.hpp"

namespace pcbackdoor {

void WltParams::validate() const {
  if (anchors < 1) throw InvalidArgument("WLT: anchor count must be at least 1");
  if (!std::isfinite(alpha)) throw InvalidArgument("WLT: alpha must be finite");
  if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidArgument("WLT: scale must be positive");
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
    throw InvalidArgument("WLT: bandwidth must be positive");
  }
}

void BallTriggerParams::validate() const {
  if (!center.allFinite()) throw InvalidArgument("ball trigger: center must be finite");
  if (!(radius > 0.0) || !std::isfinite(radius)) throw InvalidArgument("ball trigger: radius must be positive");
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("ball trigger: ratio must lie in (0, 1)");
}

void RotationTriggerParams::validate() const {
  if (!std::isfinite(angle_z)) throw InvalidArgument("rotation trigger: angle must be finite");
}

std::string trigger_name(const Trigger& trigger) {
  struct {
    std::string operator()(const WltParams&) const { return "wlt"; }
    std::string operator()(const BallTriggerParams&) const { return "ball"; }
    std::string operator()(const RotationTriggerParams&) const { return "rotation"; }
  } name;
  return std::visit(name, trigger);
}

Vec3 anchor_transform(const Vec3& x, const Vec3& anchor, const Mat3& rotation, const Mat3& scaling) {
  return rotation * (scaling * (x - anchor)) + anchor;
}

double gaussian_weight(const Vec3& x, const Vec3& anchor, double bandwidth) {
  if (!(bandwidth > 0.0)) throw InvalidArgument("gaussian_weight: bandwidth must be positive");
  return std::exp(-squared_distance(x, anchor) / (2.0 * bandwidth * bandwidth));
}

PointCloud wlt_blend(const PointCloud& cloud, std::span<const Vec3> anchors, const Mat3& rotation,
                     const Mat3& scaling, double bandwidth) {
  if (anchors.empty()) throw InvalidArgument("wlt_blend: need at least one anchor");
  if (!(bandwidth > 0.0)) throw InvalidArgument("wlt_blend: bandwidth must be positive");
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  std::vector<double> w(anchors.size());
  for (const Vec3& x : cloud) {
    double total = 0.0;
    for (std::size_t j = 0; j < anchors.size(); ++j) {
      w[j] = gaussian_weight(x, anchors[j], bandwidth);
      total += w[j];
    }
    // Every weight underflowed: the point is far from all anchors relative to h.
    // Fall back to the nearest anchor, which is the limit of the blend.
    if (!(total > 0.0)) {
      std::size_t nearest = 0;
      for (std::size_t j = 1; j < anchors.size(); ++j) {
        if (squared_distance(x, anchors[j]) < squared_distance(x, anchors[nearest])) nearest = j;
      }
      std::fill(w.begin(), w.end(), 0.0);
      w[nearest] = 1.0;
      total = 1.0;
    }
    Vec3 acc = Vec3::Zero();
    for (std::size_t j = 0; j < anchors.size(); ++j) {
      acc += (w[j] / total) * anchor_transform(x, anchors[j], rotation, scaling);
    }
    out.push_back(acc);
  }
  return PointCloud(std::move(out));
}

PointCloud wlt_average(const PointCloud& cloud, std::span<const Vec3> anchors, const Mat3& rotation,
                       const Mat3& scaling) {
  if (anchors.empty()) throw InvalidArgument("wlt_average: need at least one anchor");
  const double w = 1.0 / static_cast<double>(anchors.size());
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const Vec3& x : cloud) {
    Vec3 acc = Vec3::Zero();
    for (const Vec3& a : anchors) acc += w * anchor_transform(x, a, rotation, scaling);
    out.push_back(acc);
  }
  return PointCloud(std::move(out));
}

std::size_t wlt_default_start(const PointCloud& cloud, const WltParams& params) {
  Rng rng(params.seed);
  return static_cast<std::size_t>(rng.index(cloud.size()));
}

PointCloud wlt_apply(const PointCloud& cloud, const WltParams& params,
                     std::optional<std::size_t> fps_start) {
  params.validate();
  if (params.anchors > cloud.size()) {
    throw InvalidArgument("WLT: anchor count exceeds the number of points");
  }
  const std::size_t start = fps_start.value_or(wlt_default_start(cloud, params));
  const auto ids = farthest_point_sampling(cloud, params.anchors, start);
  std::vector<Vec3> anchors;
  anchors.reserve(ids.size());
  for (std::size_t id : ids) anchors.push_back(cloud[id]);

  const Mat3 rotation = composed_rotation(params.alpha);
  const Mat3 scaling = Vec3::Constant(params.scale).asDiagonal();
  PointCloud blended = wlt_blend(cloud, anchors, rotation, scaling, params.bandwidth);
  return params.renormalize ? normalize_unit_ball(blended) : blended;
}

std::size_t ball_point_count(std::size_t cloud_size, double ratio) {
  // The small slack keeps exact products such as 0.01 * 100 from rounding up.
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(cloud_size) - 1e-9));
}

PointCloud ball_trigger_apply(const PointCloud& cloud, const BallTriggerParams& params, Rng& rng) {
  params.validate();
  const std::size_t k = cloud.size();
  const std::size_t n_ball = ball_point_count(k, params.ratio);
  if (n_ball < 1 || n_ball >= k) {
    throw InvalidArgument("ball trigger: ratio * K must give between 1 and K-1 points");
  }

  // Choose which originals survive: a uniform subset of size K - n_ball, in order.
  std::vector<std::size_t> ids(k);
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t i = 0; i < n_ball; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.index(k - i));
    std::swap(ids[i], ids[j]);
  }
  std::vector<bool> dropped(k, false);
  for (std::size_t i = 0; i < n_ball; ++i) dropped[ids[i]] = true;

  std::vector<Vec3> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (!dropped[i]) out.push_back(cloud[i]);
  }
  for (std::size_t i = 0; i < n_ball; ++i) {
    Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    while (dir.squaredNorm() == 0.0) dir = Vec3(rng.normal(), rng.normal(), rng.normal());
    const double r = params.radius * std::cbrt(rng.uniform());
    out.push_back(params.center + r * dir.normalized());
  }
  return PointCloud(std::move(out));
}

PointCloud rotation_trigger_apply(const PointCloud& cloud, const RotationTriggerParams& params) {
  params.validate();
  return transform(cloud, rotation_matrix_axis(Axis::Z, params.angle_z));
}

TriggeredCloud apply_trigger(const Trigger& trigger, const PointCloud& cloud, Rng& rng) {
  if (const auto* wlt = std::get_if<WltParams>(&trigger)) {
    const auto start = static_cast<std::size_t>(rng.index(cloud.size()));
    return {wlt_apply(cloud, *wlt, start), start};
  }
  if (const auto* ball = std::get_if<BallTriggerParams>(&trigger)) {
    return {ball_trigger_apply(cloud, *ball, rng), std::nullopt};
  }
  return {rotation_trigger_apply(cloud, std::get<RotationTriggerParams>(trigger)), std::nullopt};
}

}  // namespace pcbackdoor
