#include <cmath>
#include <numbers>

#include "doctest.h"
#include "oracles.hpp"
#include "pcbackdoor/error.hpp"
#include "pcbackdoor/geometry.hpp"

using namespace pcbackdoor;

namespace {

double max_abs(const Mat3& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("point cloud rejects empty and non-finite input") {
  CHECK_THROWS_AS(PointCloud({}), InvalidArgument);
  CHECK_THROWS_AS(PointCloud({Vec3(0, std::nan(""), 0)}), InvalidArgument);
  CHECK_THROWS_AS(PointCloud({Vec3(INFINITY, 0, 0)}), InvalidArgument);
}

TEST_CASE("rotation_matrix_axis") {
  CHECK(max_abs(rotation_matrix_axis(Axis::Z, 0.0) - Mat3::Identity()) == 0.0);
  const Vec3 v = rotation_matrix_axis(Axis::Z, std::numbers::pi / 2) * Vec3(1, 0, 0);
  CHECK((v - Vec3(0, 1, 0)).norm() < 1e-15);

  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(rng.normal(), rng.normal(), rng.normal());
    const double a = rng.uniform(-10, 10);
    for (Axis ax : {Axis::X, Axis::Y, Axis::Z}) {
      CHECK(std::abs((rotation_matrix_axis(ax, a) * p).norm() - p.norm()) < 1e-12);
    }
  }
  CHECK_THROWS_AS(rotation_matrix_axis(Axis::X, NAN), InvalidArgument);
}

TEST_CASE("rotation_matrix_axis sign conventions") {
  const double a = 0.3, c = std::cos(a), s = std::sin(a);
  Mat3 rx, ry, rz;
  rx << 1, 0, 0, 0, c, -s, 0, s, c;
  ry << c, 0, s, 0, 1, 0, -s, 0, c;
  rz << c, -s, 0, s, c, 0, 0, 0, 1;
  CHECK(max_abs(rotation_matrix_axis(Axis::X, a) - rx) == 0.0);
  CHECK(max_abs(rotation_matrix_axis(Axis::Y, a) - ry) == 0.0);
  CHECK(max_abs(rotation_matrix_axis(Axis::Z, a) - rz) == 0.0);
  CHECK(max_abs(composed_rotation(a) - rx * ry * rz) < 1e-15);
}

TEST_CASE("composed_rotation is a proper rotation") {
  CHECK(max_abs(composed_rotation(0.0) - Mat3::Identity()) == 0.0);
  for (double deg : {5.0, 37.0, 180.0}) {
    const Mat3 r = composed_rotation(deg * std::numbers::pi / 180.0);
    CHECK(std::abs(r.determinant() - 1.0) < 1e-12);
    CHECK(max_abs(r.transpose() * r - Mat3::Identity()) < 1e-12);
  }
}

TEST_CASE("normalize_unit_ball") {
  const PointCloud two({Vec3(0, 0, 0), Vec3(2, 0, 0)});
  const PointCloud n = normalize_unit_ball(two);
  CHECK((n[0] - Vec3(-1, 0, 0)).norm() < 1e-15);
  CHECK((n[1] - Vec3(1, 0, 0)).norm() < 1e-15);

  Rng rng(6);
  const PointCloud c = normalize_unit_ball(oracle::random_cloud(100, rng, -3, 5));
  Vec3 centroid = Vec3::Zero();
  double max_norm = 0.0;
  for (const Vec3& p : c) {
    centroid += p;
    max_norm = std::max(max_norm, p.norm());
  }
  CHECK((centroid / 100.0).norm() < 1e-9);
  CHECK(std::abs(max_norm - 1.0) < 1e-9);

  const PointCloud again = normalize_unit_ball(c);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK((again[i] - c[i]).norm() < 1e-9);

  CHECK_THROWS_AS(normalize_unit_ball(PointCloud({Vec3(1, 1, 1), Vec3(1, 1, 1)})), DegenerateCloud);
}

TEST_CASE("k_nearest_distances hand cases") {
  const PointCloud line({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)});
  CHECK(k_nearest_distances(line, 1) == std::vector<double>{1.0, 1.0, 1.0});
  CHECK(k_nearest_distances(line, 2) == std::vector<double>{1.5, 1.0, 1.5});
  CHECK_THROWS_AS(k_nearest_distances(line, 0), InvalidArgument);
  CHECK_THROWS_AS(k_nearest_distances(line, 3), InvalidArgument);
}

TEST_CASE("k_nearest_distances equals the brute-force oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud c = oracle::random_cloud(64, rng);
    CHECK(k_nearest_distances(c, 5) == oracle::knn_mean(c, 5));
  }
  // Integer grid: many exact distance ties.
  std::vector<Vec3> grid;
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 4; ++y)
      for (int z = 0; z < 4; ++z) grid.emplace_back(x, y, z);
  const PointCloud g(grid);
  for (std::size_t k : {1, 6, 13, 63}) CHECK(k_nearest_distances(g, k) == oracle::knn_mean(g, k));
}

TEST_CASE("kd-tree knn orders by distance then index") {
  const PointCloud c({Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 2)});
  const KdTree tree(c.points());
  const auto nn = tree.knn(Vec3::Zero(), 4);
  REQUIRE(nn.size() == 4);
  CHECK(nn[0].index == 0);
  CHECK(nn[1].index == 1);
  CHECK(nn[2].index == 2);
  CHECK(nn[3].index == 3);
  CHECK(tree.nearest_distance(Vec3(0, 0, 3)) == 1.0);
}

TEST_CASE("farthest_point_sampling") {
  const PointCloud line({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(3, 0, 0)});
  CHECK(farthest_point_sampling(line, 1, 2) == std::vector<std::size_t>{2});
  CHECK(farthest_point_sampling(line, 2, 0) == std::vector<std::size_t>{0, 3});
  CHECK_THROWS_AS(farthest_point_sampling(line, 0, 0), InvalidArgument);
  CHECK_THROWS_AS(farthest_point_sampling(line, 5, 0), InvalidArgument);
  CHECK_THROWS_AS(farthest_point_sampling(line, 2, 4), InvalidArgument);

  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud c = oracle::random_cloud(32, rng);
    const std::size_t start = rng.index(32);
    CHECK(farthest_point_sampling(c, 4, start) == oracle::fps(c, 4, start));
  }
}

TEST_CASE("farthest_point_sampling ties go to the lowest index") {
  // Square corners: from corner 0 the two adjacent corners tie after the diagonal.
  const PointCloud sq({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(1, 1, 0)});
  CHECK(farthest_point_sampling(sq, 3, 0) == std::vector<std::size_t>{0, 3, 1});
}

TEST_CASE("sample_mesh_surface") {
  TriangleMesh tri{{Vec3(0, 0, 1), Vec3(1, 0, 1), Vec3(0, 1, 1)}, {{0, 1, 2}}};
  Rng rng(9);
  const PointCloud pts = sample_mesh_surface(tri, 1000, rng);
  CHECK(pts.size() == 1000);
  for (const Vec3& p : pts) {
    CHECK(std::abs(p.z() - 1.0) < 1e-9);
    CHECK(p.x() >= -1e-12);
    CHECK(p.y() >= -1e-12);
    CHECK(p.x() + p.y() <= 1.0 + 1e-12);
  }

  Rng a(10), b(10);
  CHECK(sample_mesh_surface(tri, 50, a) == sample_mesh_surface(tri, 50, b));
}

TEST_CASE("sample_mesh_surface splits by area within 3 sigma") {
  // Unit square as two equal triangles, split along the diagonal x = y.
  TriangleMesh sq{{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0), Vec3(0, 1, 0)}, {{0, 1, 2}, {0, 2, 3}}};
  const std::size_t k = 10000;
  Rng rng(11);
  const PointCloud pts = sample_mesh_surface(sq, k, rng);
  std::size_t lower = 0;
  for (const Vec3& p : pts) lower += p.x() > p.y();
  const double sigma = std::sqrt(k * 0.25);
  CHECK(std::abs(static_cast<double>(lower) - k / 2.0) <= 3 * sigma);
}

TEST_CASE("sample_mesh_surface skips zero-area faces and rejects degenerate meshes") {
  TriangleMesh m{{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(0, 1, 0)}, {{0, 1, 2}, {0, 1, 3}}};
  Rng rng(12);
  for (const Vec3& p : sample_mesh_surface(m, 200, rng)) CHECK(p.x() + p.y() <= 1.0 + 1e-12);
  TriangleMesh flat{{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)}, {{0, 1, 2}}};
  CHECK_THROWS_AS(sample_mesh_surface(flat, 10, rng), DegenerateMesh);
  TriangleMesh bad{{Vec3(0, 0, 0)}, {{0, 1, 2}}};
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}
