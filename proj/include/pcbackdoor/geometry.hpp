#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pcbackdoor/rng.hpp"

namespace pcbackdoor {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Ordered, non-empty set of 3D points with finite coordinates.
class PointCloud {
 public:
  /// Throws InvalidArgument if `points` is empty or has a non-finite coordinate.
  explicit PointCloud(std::vector<Vec3> points);

  std::size_t size() const noexcept { return points_.size(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }
  std::span<const Vec3> points() const noexcept { return points_; }
  auto begin() const noexcept { return points_.begin(); }
  auto end() const noexcept { return points_.end(); }

  Vec3 centroid() const;
  double max_norm() const;

  /// Points as a K x 3 row-major matrix.
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> to_matrix() const;

  friend bool operator==(const PointCloud& a, const PointCloud& b) {
    return a.points_ == b.points_;
  }

 private:
  std::vector<Vec3> points_;
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;

  /// Throws InvalidArgument when a face references a missing vertex.
  void validate() const;
  double face_area(std::size_t f) const;
};

enum class Axis { X, Y, Z };

/// Elementary right-handed rotation about one coordinate axis.
Mat3 rotation_matrix_axis(Axis axis, double angle);

/// R_x(angle) * R_y(angle) * R_z(angle).
Mat3 composed_rotation(double angle);

/// Applies `m` to every point.
PointCloud transform(const PointCloud& cloud, const Mat3& m);

/// Centers on the centroid and divides by the largest point norm.
/// Throws DegenerateCloud when all points coincide.
PointCloud normalize_unit_ball(const PointCloud& cloud);

/// Euclidean distance computed in a fixed evaluation order, shared by every
/// neighbor query so results do not depend on which search path was taken.
inline double point_distance(const Vec3& p, const Vec3& q) {
  const double dx = p.x() - q.x();
  const double dy = p.y() - q.y();
  const double dz = p.z() - q.z();
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline double squared_distance(const Vec3& p, const Vec3& q) {
  const double dx = p.x() - q.x();
  const double dy = p.y() - q.y();
  const double dz = p.z() - q.z();
  return dx * dx + dy * dy + dz * dz;
}

/// Static 3D kd-tree over a borrowed point span.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);

  struct Neighbor {
    double distance;
    std::size_t index;
  };

  /// The k nearest points to `query`, ascending by (distance, index).
  /// `exclude` removes one index from consideration (the query point itself).
  std::vector<Neighbor> knn(const Vec3& query, std::size_t k,
                            std::size_t exclude = static_cast<std::size_t>(-1)) const;

  /// Distance to the nearest point.
  double nearest_distance(const Vec3& query) const;

 private:
  struct Node {
    std::uint32_t begin, end;  // range in order_
    std::int32_t left = -1, right = -1;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end, int depth);

  std::span<const Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// Mean distance from every point to its k nearest other points.
/// Throws InvalidArgument when k == 0 or k >= K.
std::vector<double> k_nearest_distances(const PointCloud& cloud, std::size_t k);

/// Greedy farthest point sampling starting at `start`; ties go to the lowest index.
std::vector<std::size_t> farthest_point_sampling(const PointCloud& cloud, std::size_t count,
                                                 std::size_t start);

/// Area-weighted uniform sampling of `count` surface points. Zero-area faces
/// are skipped; throws DegenerateMesh when no face has positive area.
PointCloud sample_mesh_surface(const TriangleMesh& mesh, std::size_t count, Rng& rng);

}  // namespace pcbackdoor
