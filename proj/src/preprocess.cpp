#include "pcbackdoor/preprocess.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "pcbackdoor/error.hpp"

namespace pcbackdoor {

std::vector<std::size_t> sor_removed_indices(const PointCloud& cloud, const SorParams& params) {
  const std::size_t n = cloud.size();
  if (params.k < 1 || params.k + 1 > n) {
    throw InvalidArgument("SOR: need 1 <= k < K (k=" + std::to_string(params.k) +
                          ", K=" + std::to_string(n) + ")");
  }
  if (params.n_remove >= n) throw InvalidArgument("SOR: cannot remove every point");
  if (params.n_remove == 0) return {};

  const auto means = k_nearest_distances(cloud, params.k);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Largest mean first; among equal means the higher index goes first so the
  // lower index is kept.
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(params.n_remove),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      return means[a] > means[b] || (means[a] == means[b] && a > b);
                    });
  order.resize(params.n_remove);
  std::sort(order.begin(), order.end());
  return order;
}

PointCloud sor(const PointCloud& cloud, const SorParams& params) {
  const auto removed = sor_removed_indices(cloud, params);
  if (removed.empty()) return cloud;
  std::vector<Vec3> kept;
  kept.reserve(cloud.size() - removed.size());
  auto next = removed.begin();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (next != removed.end() && *next == i) {
      ++next;
      continue;
    }
    kept.push_back(cloud[i]);
  }
  return PointCloud(std::move(kept));
}

PointCloud srs(const PointCloud& cloud, std::size_t n_keep, Rng& rng) {
  const std::size_t n = cloud.size();
  if (n_keep < 1 || n_keep > n) {
    throw InvalidArgument("SRS: need 1 <= n_keep <= K (n_keep=" + std::to_string(n_keep) +
                          ", K=" + std::to_string(n) + ")");
  }
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t i = 0; i < n_keep; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.index(n - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(n_keep);
  std::sort(ids.begin(), ids.end());
  std::vector<Vec3> kept;
  kept.reserve(n_keep);
  for (std::size_t id : ids) kept.push_back(cloud[id]);
  return PointCloud(std::move(kept));
}

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_aug(const AugKind& kind) {
  std::visit(Overloaded{
                 [](const aug::RotateZ& r) {
                   if (!std::isfinite(r.max_angle_deg) || r.max_angle_deg < 0.0)
                     throw InvalidArgument("rotz: max angle must be finite and >= 0");
                 },
                 [](const aug::RotateXyz360&) {},
                 [](const aug::Scale& s) {
                   if (!(s.lo > 0.0) || !(s.hi >= s.lo) || !std::isfinite(s.hi))
                     throw InvalidArgument("scale: need 0 < lo <= hi");
                 },
                 [](const aug::Shift& s) {
                   if (!(s.range >= 0.0) || !std::isfinite(s.range))
                     throw InvalidArgument("shift: range must be finite and >= 0");
                 },
                 [](const aug::Dropout& d) {
                   if (!(d.max_ratio >= 0.0 && d.max_ratio < 1.0))
                     throw InvalidArgument("dropout: max ratio must lie in [0, 1)");
                 },
                 [](const aug::Jitter& j) {
                   if (!(j.sigma >= 0.0) || !(j.clip >= 0.0) || !std::isfinite(j.sigma) ||
                       !std::isfinite(j.clip))
                     throw InvalidArgument("jitter: sigma and clip must be finite and >= 0");
                 },
             },
             kind);
}

PointCloud translate(const PointCloud& cloud, const Vec3& offset) {
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const Vec3& p : cloud) out.emplace_back(p + offset);
  return PointCloud(std::move(out));
}

}  // namespace

PointCloud random_augment(const PointCloud& cloud, const AugKind& kind, Rng& rng) {
  check_aug(kind);
  return std::visit(
      Overloaded{
          [&](const aug::RotateZ& r) {
            const double angle = rng.uniform(0.0, deg_to_rad(r.max_angle_deg));
            return transform(cloud, rotation_matrix_axis(Axis::Z, angle));
          },
          [&](const aug::RotateXyz360&) {
            const double two_pi = 2.0 * std::numbers::pi;
            const double ax = rng.uniform(0.0, two_pi);
            const double ay = rng.uniform(0.0, two_pi);
            const double az = rng.uniform(0.0, two_pi);
            const Mat3 r = rotation_matrix_axis(Axis::X, ax) * rotation_matrix_axis(Axis::Y, ay) *
                           rotation_matrix_axis(Axis::Z, az);
            return transform(cloud, r);
          },
          [&](const aug::Scale& s) {
            const double factor = rng.uniform(s.lo, s.hi);
            std::vector<Vec3> out;
            out.reserve(cloud.size());
            for (const Vec3& p : cloud) out.emplace_back(factor * p);
            return PointCloud(std::move(out));
          },
          [&](const aug::Shift& s) {
            const double x = rng.uniform(-s.range, s.range);
            const double y = rng.uniform(-s.range, s.range);
            const double z = rng.uniform(-s.range, s.range);
            return translate(cloud, Vec3(x, y, z));
          },
          [&](const aug::Dropout& d) {
            const double ratio = rng.uniform(0.0, d.max_ratio);
            std::vector<bool> drop(cloud.size());
            for (std::size_t i = 0; i < cloud.size(); ++i) drop[i] = rng.uniform() < ratio;
            const auto first_kept = std::find(drop.begin(), drop.end(), false);
            const std::size_t keep_id =
                first_kept == drop.end() ? 0 : static_cast<std::size_t>(first_kept - drop.begin());
            std::vector<Vec3> out;
            out.reserve(cloud.size());
            for (std::size_t i = 0; i < cloud.size(); ++i) out.push_back(drop[i] ? cloud[keep_id] : cloud[i]);
            return PointCloud(std::move(out));
          },
          [&](const aug::Jitter& j) {
            std::vector<Vec3> out;
            out.reserve(cloud.size());
            for (const Vec3& p : cloud) {
              Vec3 noise;
              for (int c = 0; c < 3; ++c) noise[c] = std::clamp(j.sigma * rng.normal(), -j.clip, j.clip);
              out.emplace_back(p + noise);
            }
            return PointCloud(std::move(out));
          },
      },
      kind);
}

void AdaptiveRanges::validate() const {
  auto ok = [](const Range& r) { return std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi; };
  if (!ok(alpha_deg)) throw InvalidArgument("adaptive defense: invalid alpha range");
  if (!ok(scale) || !(scale.lo > 0.0)) throw InvalidArgument("adaptive defense: invalid scale range");
  if (!ok(bandwidth) || !(bandwidth.lo > 0.0))
    throw InvalidArgument("adaptive defense: invalid bandwidth range");
  if (anchors.lo < 1 || anchors.hi < anchors.lo)
    throw InvalidArgument("adaptive defense: invalid anchor range");
}

AdaptiveDraw draw_adaptive(const PointCloud& cloud, AdaptiveMode mode, const AdaptiveRanges& ranges,
                           Rng& rng) {
  ranges.validate();
  AdaptiveDraw d{};
  d.alpha = deg_to_rad(rng.uniform(ranges.alpha_deg.lo, ranges.alpha_deg.hi));
  d.scale = rng.uniform(ranges.scale.lo, ranges.scale.hi);
  d.anchors = static_cast<std::size_t>(
      rng.integer(static_cast<std::int64_t>(ranges.anchors.lo), static_cast<std::int64_t>(ranges.anchors.hi)));
  d.bandwidth = mode == AdaptiveMode::Smooth ? rng.uniform(ranges.bandwidth.lo, ranges.bandwidth.hi) : 0.0;
  if (d.anchors > cloud.size()) {
    throw InvalidArgument("adaptive defense: drawn anchor count exceeds the number of points");
  }
  d.fps_start = static_cast<std::size_t>(rng.index(cloud.size()));
  return d;
}

PointCloud apply_adaptive(const PointCloud& cloud, AdaptiveMode mode, const AdaptiveDraw& draw,
                          bool renormalize) {
  if (mode == AdaptiveMode::Smooth) {
    WltParams p;
    p.anchors = draw.anchors;
    p.alpha = draw.alpha;
    p.scale = draw.scale;
    p.bandwidth = draw.bandwidth;
    p.renormalize = renormalize;
    return wlt_apply(cloud, p, draw.fps_start);
  }
  const auto ids = farthest_point_sampling(cloud, draw.anchors, draw.fps_start);
  std::vector<Vec3> anchors;
  anchors.reserve(ids.size());
  for (std::size_t id : ids) anchors.push_back(cloud[id]);
  const Mat3 scaling = Vec3::Constant(draw.scale).asDiagonal();
  PointCloud out = wlt_average(cloud, anchors, composed_rotation(draw.alpha), scaling);
  return renormalize ? normalize_unit_ball(out) : out;
}

PointCloud adaptive_wlt_defense(const PointCloud& cloud, AdaptiveMode mode,
                                const AdaptiveRanges& ranges, Rng& rng, bool renormalize) {
  const AdaptiveDraw draw = draw_adaptive(cloud, mode, ranges, rng);
  return apply_adaptive(cloud, mode, draw, renormalize);
}

// ---------------------------------------------------------------------------
// Pipelines

std::string step_name(const StepKind& kind) {
  return std::visit(Overloaded{
                        [](const SorParams&) -> std::string { return "sor"; },
                        [](const SrsParams&) -> std::string { return "srs"; },
                        [](const aug::RotateZ&) -> std::string { return "rotz"; },
                        [](const aug::RotateXyz360&) -> std::string { return "rot3"; },
                        [](const aug::Scale&) -> std::string { return "scale"; },
                        [](const aug::Shift&) -> std::string { return "shift"; },
                        [](const aug::Dropout&) -> std::string { return "dropout"; },
                        [](const aug::Jitter&) -> std::string { return "jitter"; },
                        [](const AdaptiveDefense& a) -> std::string {
                          return a.mode == AdaptiveMode::Average ? "average" : "smooth";
                        },
                    },
                    kind);
}

bool step_is_deterministic(const StepKind& kind) { return std::holds_alternative<SorParams>(kind); }

PointCloud apply_step(const PointCloud& cloud, const StepKind& kind, Rng& rng) {
  return std::visit(Overloaded{
                        [&](const SorParams& p) { return sor(cloud, p); },
                        [&](const SrsParams& p) { return srs(cloud, p.n_keep, rng); },
                        [&](const AdaptiveDefense& a) {
                          return adaptive_wlt_defense(cloud, a.mode, a.ranges, rng, a.renormalize);
                        },
                        [&](const auto& augment) { return random_augment(cloud, AugKind{augment}, rng); },
                    },
                    kind);
}

void PipelineSpec::validate() const {
  for (const StepSpec& step : steps) {
    std::visit(Overloaded{
                   [](const SorParams& p) {
                     if (p.k < 1) throw InvalidArgument("sor: k must be at least 1");
                   },
                   [](const SrsParams& p) {
                     if (p.n_keep < 1) throw InvalidArgument("srs: keep must be at least 1");
                   },
                   [](const AdaptiveDefense& a) { a.ranges.validate(); },
                   [](const auto& augment) { check_aug(AugKind{augment}); },
               },
               step.kind);
  }
}

PointCloud run_pipeline(const PointCloud& cloud, const PipelineSpec& spec, Rng& rng) {
  PointCloud current = cloud;
  for (const StepSpec& step : spec.steps) {
    Rng step_rng = rng.fork();
    current = apply_step(current, step.kind, step_rng);
  }
  return current;
}

PointCloud run_pipeline(const PointCloud& cloud, const PipelineSpec& spec, std::uint64_t seed,
                        std::uint64_t sample_id, std::uint64_t epoch) {
  PointCloud current = cloud;
  for (std::size_t i = 0; i < spec.steps.size(); ++i) {
    const StepSpec& step = spec.steps[i];
    Rng step_rng = Rng::derive(seed, {sample_id, step.reseed_per_epoch ? epoch : 0, i});
    current = apply_step(current, step.kind, step_rng);
  }
  return current;
}

// ---------------------------------------------------------------------------
// Text form

namespace {

std::string fmt_num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string fmt_num(std::size_t v) { return std::to_string(v); }

using ParamMap = std::map<std::string, std::string>;

double get_double(ParamMap& params, const std::string& key, double fallback) {
  auto it = params.find(key);
  if (it == params.end()) return fallback;
  double v = 0.0;
  const std::string& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("pipeline parameter " + key + ": not a number: '" + s + "'");
  }
  params.erase(it);
  return v;
}

std::size_t get_count(ParamMap& params, const std::string& key, std::size_t fallback) {
  auto it = params.find(key);
  if (it == params.end()) return fallback;
  std::size_t v = 0;
  const std::string& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("pipeline parameter " + key + ": not a non-negative integer: '" + s + "'");
  }
  params.erase(it);
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_top_level(const std::string& text) {
  std::vector<std::string> parts;
  std::string cur;
  int depth = 0;
  for (char c : text) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (depth < 0) throw ConfigError("pipeline: unbalanced ')' in '" + text + "'");
    if (c == ',' && depth == 0) {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (depth != 0) throw ConfigError("pipeline: unbalanced '(' in '" + text + "'");
  parts.push_back(trim(cur));
  return parts;
}

StepSpec parse_step(const std::string& token) {
  std::string name = token;
  ParamMap params;
  if (const auto open = token.find('('); open != std::string::npos) {
    if (token.back() != ')') throw ConfigError("pipeline: malformed step '" + token + "'");
    name = trim(token.substr(0, open));
    const std::string inner = token.substr(open + 1, token.size() - open - 2);
    if (!trim(inner).empty()) {
      for (const std::string& kv : split_top_level(inner)) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("pipeline: expected key=value in '" + kv + "'");
        params[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
      }
    }
  }

  StepSpec step{SorParams{}};
  step.reseed_per_epoch = get_count(params, "reseed", 1) != 0;
  if (name == "sor") {
    SorParams p;
    p.k = get_count(params, "k", p.k);
    p.n_remove = get_count(params, "remove", p.n_remove);
    step.kind = p;
  } else if (name == "srs") {
    SrsParams p;
    p.n_keep = get_count(params, "keep", p.n_keep);
    step.kind = p;
  } else if (name == "rotz") {
    step.kind = aug::RotateZ{get_double(params, "max", aug::RotateZ{}.max_angle_deg)};
  } else if (name == "rot3") {
    step.kind = aug::RotateXyz360{};
  } else if (name == "scale") {
    aug::Scale p;
    p.lo = get_double(params, "lo", p.lo);
    p.hi = get_double(params, "hi", p.hi);
    step.kind = p;
  } else if (name == "shift") {
    step.kind = aug::Shift{get_double(params, "range", aug::Shift{}.range)};
  } else if (name == "dropout") {
    step.kind = aug::Dropout{get_double(params, "max", aug::Dropout{}.max_ratio)};
  } else if (name == "jitter") {
    aug::Jitter p;
    p.sigma = get_double(params, "sigma", p.sigma);
    p.clip = get_double(params, "clip", p.clip);
    step.kind = p;
  } else if (name == "average" || name == "smooth") {
    AdaptiveDefense a;
    a.mode = name == "average" ? AdaptiveMode::Average : AdaptiveMode::Smooth;
    a.ranges.alpha_deg.lo = get_double(params, "alpha_lo", a.ranges.alpha_deg.lo);
    a.ranges.alpha_deg.hi = get_double(params, "alpha_hi", a.ranges.alpha_deg.hi);
    a.ranges.scale.lo = get_double(params, "s_lo", a.ranges.scale.lo);
    a.ranges.scale.hi = get_double(params, "s_hi", a.ranges.scale.hi);
    a.ranges.anchors.lo = get_count(params, "w_lo", a.ranges.anchors.lo);
    a.ranges.anchors.hi = get_count(params, "w_hi", a.ranges.anchors.hi);
    a.ranges.bandwidth.lo = get_double(params, "h_lo", a.ranges.bandwidth.lo);
    a.ranges.bandwidth.hi = get_double(params, "h_hi", a.ranges.bandwidth.hi);
    a.renormalize = get_count(params, "renormalize", 1) != 0;
    step.kind = a;
  } else {
    throw ConfigError("pipeline: unknown step '" + name + "'");
  }
  if (!params.empty()) {
    throw ConfigError("pipeline: unknown parameter '" + params.begin()->first + "' for step " + name);
  }
  return step;
}

}  // namespace

std::string format_pipeline(const PipelineSpec& spec) {
  std::ostringstream out;
  for (std::size_t i = 0; i < spec.steps.size(); ++i) {
    const StepSpec& step = spec.steps[i];
    if (i) out << ',';
    out << step_name(step.kind) << '(';
    std::visit(Overloaded{
                   [&](const SorParams& p) { out << "k=" << p.k << ",remove=" << p.n_remove; },
                   [&](const SrsParams& p) { out << "keep=" << p.n_keep; },
                   [&](const aug::RotateZ& p) { out << "max=" << fmt_num(p.max_angle_deg); },
                   [&](const aug::RotateXyz360&) {},
                   [&](const aug::Scale& p) { out << "lo=" << fmt_num(p.lo) << ",hi=" << fmt_num(p.hi); },
                   [&](const aug::Shift& p) { out << "range=" << fmt_num(p.range); },
                   [&](const aug::Dropout& p) { out << "max=" << fmt_num(p.max_ratio); },
                   [&](const aug::Jitter& p) {
                     out << "sigma=" << fmt_num(p.sigma) << ",clip=" << fmt_num(p.clip);
                   },
                   [&](const AdaptiveDefense& a) {
                     const auto& r = a.ranges;
                     out << "alpha_lo=" << fmt_num(r.alpha_deg.lo) << ",alpha_hi=" << fmt_num(r.alpha_deg.hi)
                         << ",s_lo=" << fmt_num(r.scale.lo) << ",s_hi=" << fmt_num(r.scale.hi)
                         << ",w_lo=" << fmt_num(r.anchors.lo) << ",w_hi=" << fmt_num(r.anchors.hi);
                     out << ",h_lo=" << fmt_num(r.bandwidth.lo) << ",h_hi=" << fmt_num(r.bandwidth.hi);
                     if (!a.renormalize) out << ",renormalize=0";
                   },
               },
               step.kind);
    if (!step.reseed_per_epoch) {
      if (!std::holds_alternative<aug::RotateXyz360>(step.kind)) out << ',';
      out << "reseed=0";
    }
    out << ')';
  }
  return out.str();
}

PipelineSpec parse_pipeline(const std::string& text) {
  PipelineSpec spec;
  if (trim(text).empty() || trim(text) == "none") return spec;
  for (const std::string& token : split_top_level(text)) {
    if (token.empty()) throw ConfigError("pipeline: empty step in '" + text + "'");
    spec.steps.push_back(parse_step(token));
  }
  return spec;
}

}  // namespace pcbackdoor
