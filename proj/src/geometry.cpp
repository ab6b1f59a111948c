#include "pcbackdoor/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "pcbackdoor/error.hpp"

namespace pcbackdoor {

PointCloud::PointCloud(std::vector<Vec3> points) : points_(std::move(points)) {
  if (points_.empty()) throw InvalidArgument("point cloud must contain at least one point");
  for (const Vec3& p : points_) {
    if (!p.allFinite()) throw InvalidArgument("point cloud contains a non-finite coordinate");
  }
}

Vec3 PointCloud::centroid() const {
  Vec3 sum = Vec3::Zero();
  for (const Vec3& p : points_) sum += p;
  return sum / static_cast<double>(points_.size());
}

double PointCloud::max_norm() const {
  double best = 0.0;
  for (const Vec3& p : points_) best = std::max(best, p.norm());
  return best;
}

Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> PointCloud::to_matrix() const {
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> m(points_.size(), 3);
  for (std::size_t i = 0; i < points_.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = points_[i];
  return m;
}

void TriangleMesh::validate() const {
  const auto n = vertices.size();
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (std::uint32_t v : faces[f]) {
      if (v >= n) {
        throw InvalidArgument("face " + std::to_string(f) + " references vertex " +
                              std::to_string(v) + " of " + std::to_string(n));
      }
    }
  }
  for (const Vec3& v : vertices) {
    if (!v.allFinite()) throw InvalidArgument("mesh vertex has a non-finite coordinate");
  }
}

double TriangleMesh::face_area(std::size_t f) const {
  const auto& [a, b, c] = faces[f];
  return 0.5 * (vertices[b] - vertices[a]).cross(vertices[c] - vertices[a]).norm();
}

Mat3 rotation_matrix_axis(Axis axis, double angle) {
  if (!std::isfinite(angle)) throw InvalidArgument("rotation angle must be finite");
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Mat3 r;
  switch (axis) {
    case Axis::X:
      r << 1, 0, 0,
           0, c, -s,
           0, s, c;
      break;
    case Axis::Y:
      r << c, 0, s,
           0, 1, 0,
           -s, 0, c;
      break;
    case Axis::Z:
      r << c, -s, 0,
           s, c, 0,
           0, 0, 1;
      break;
  }
  return r;
}

Mat3 composed_rotation(double angle) {
  return rotation_matrix_axis(Axis::X, angle) * rotation_matrix_axis(Axis::Y, angle) *
         rotation_matrix_axis(Axis::Z, angle);
}

PointCloud transform(const PointCloud& cloud, const Mat3& m) {
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const Vec3& p : cloud) out.emplace_back(m * p);
  return PointCloud(std::move(out));
}

PointCloud normalize_unit_ball(const PointCloud& cloud) {
  const Vec3 c = cloud.centroid();
  std::vector<Vec3> centered;
  centered.reserve(cloud.size());
  double radius = 0.0;
  for (const Vec3& p : cloud) {
    centered.emplace_back(p - c);
    radius = std::max(radius, centered.back().norm());
  }
  if (!(radius > 0.0)) throw DegenerateCloud("cannot normalize a cloud whose points all coincide");
  for (Vec3& p : centered) p /= radius;
  return PointCloud(std::move(centered));
}

// ---------------------------------------------------------------------------
// KdTree

namespace {
constexpr std::uint32_t kLeafSize = 8;

bool closer(const KdTree::Neighbor& a, const KdTree::Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
}
}  // namespace

KdTree::KdTree(std::span<const Vec3> points) : points_(points), order_(points.size()) {
  std::iota(order_.begin(), order_.end(), 0u);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 1);
    build(0, static_cast<std::uint32_t>(points_.size()), 0);
  }
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end, int depth) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  // Split along the widest extent.
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];
  const std::int32_t left = build(begin, mid, depth + 1);
  const std::int32_t right = build(mid, end, depth + 1);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

std::vector<KdTree::Neighbor> KdTree::knn(const Vec3& query, std::size_t k,
                                          std::size_t exclude) const {
  std::vector<Neighbor> heap;  // max-heap under `closer`
  if (k == 0 || nodes_.empty()) return heap;
  heap.reserve(k + 1);

  auto visit = [&](auto&& self, std::int32_t id) -> void {
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        if (idx == exclude) continue;
        const Neighbor cand{point_distance(query, points_[idx]), idx};
        if (heap.size() < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end(), closer);
        } else if (closer(cand, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), closer);
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end(), closer);
        }
      }
      return;
    }
    const double delta = query[node.axis] - node.split;
    const std::int32_t near = delta < 0 ? node.left : node.right;
    const std::int32_t far = delta < 0 ? node.right : node.left;
    self(self, near);
    if (heap.size() < k || std::abs(delta) <= heap.front().distance) self(self, far);
  };
  visit(visit, 0);

  std::sort_heap(heap.begin(), heap.end(), closer);
  return heap;
}

double KdTree::nearest_distance(const Vec3& query) const {
  const auto nn = knn(query, 1);
  if (nn.empty()) throw InvalidArgument("nearest neighbor query on an empty set");
  return nn.front().distance;
}

std::vector<double> k_nearest_distances(const PointCloud& cloud, std::size_t k) {
  if (k == 0 || k >= cloud.size()) {
    throw InvalidArgument("k_nearest_distances: need 1 <= k < K (k=" + std::to_string(k) +
                          ", K=" + std::to_string(cloud.size()) + ")");
  }
  const KdTree tree(cloud.points());
  std::vector<double> means(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    double sum = 0.0;
    for (const auto& n : tree.knn(cloud[i], k, i)) sum += n.distance;
    means[i] = sum / static_cast<double>(k);
  }
  return means;
}

std::vector<std::size_t> farthest_point_sampling(const PointCloud& cloud, std::size_t count,
                                                 std::size_t start) {
  const std::size_t n = cloud.size();
  if (count == 0 || count > n) {
    throw InvalidArgument("farthest_point_sampling: need 1 <= W <= K (W=" + std::to_string(count) +
                          ", K=" + std::to_string(n) + ")");
  }
  if (start >= n) throw InvalidArgument("farthest_point_sampling: start index out of range");

  std::vector<std::size_t> selected{start};
  selected.reserve(count);
  std::vector<double> min_sq(n, std::numeric_limits<double>::infinity());
  std::size_t last = start;
  while (selected.size() < count) {
    std::size_t best = 0;
    double best_sq = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      min_sq[i] = std::min(min_sq[i], squared_distance(cloud[i], cloud[last]));
      if (min_sq[i] > best_sq) {
        best_sq = min_sq[i];
        best = i;
      }
    }
    selected.push_back(best);
    last = best;
  }
  return selected;
}

PointCloud sample_mesh_surface(const TriangleMesh& mesh, std::size_t count, Rng& rng) {
  mesh.validate();
  if (count == 0) throw InvalidArgument("sample_mesh_surface: point count must be positive");

  std::vector<double> cumulative;
  std::vector<std::size_t> face_ids;
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const double area = mesh.face_area(f);
    if (!(area > 0.0) || !std::isfinite(area)) continue;
    total += area;
    cumulative.push_back(total);
    face_ids.push_back(f);
  }
  if (face_ids.empty()) throw DegenerateMesh("mesh has zero total surface area");

  std::vector<Vec3> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    const auto& [ia, ib, ic] = mesh.faces[face_ids[static_cast<std::size_t>(it - cumulative.begin())]];
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    out.emplace_back((1.0 - r1) * mesh.vertices[ia] + r1 * (1.0 - r2) * mesh.vertices[ib] +
                     r1 * r2 * mesh.vertices[ic]);
  }
  return PointCloud(std::move(out));
}

}  // namespace pcbackdoor
