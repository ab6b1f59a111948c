#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "pcbackdoor/dataset.hpp"
#include "pcbackdoor/error.hpp"

using namespace pcbackdoor;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pcbd_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("off parsing") {
  SUBCASE("minimal triangle") {
    std::istringstream in("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
    const TriangleMesh m = parse_off(in);
    CHECK(m.vertices.size() == 3);
    REQUIRE(m.faces.size() == 1);
    CHECK(m.faces[0] == decltype(m.faces[0]){0, 1, 2});
  }
  SUBCASE("quads are split into two triangles") {
    std::istringstream in("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n");
    CHECK(parse_off(in).faces.size() == 2);
  }
  SUBCASE("fused header") {
    std::istringstream in("OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
    CHECK(parse_off(in).vertices.size() == 3);
  }
  SUBCASE("comments are skipped") {
    std::istringstream in("OFF\n# generated\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
    CHECK(parse_off(in).faces.size() == 1);
  }
  SUBCASE("errors carry the line number") {
    std::istringstream in("OFF\n3 1 0\n0 0 0\n1 0 zz\n0 1 0\n3 0 1 2\n");
    try {
      parse_off(in, "bad.off");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("4") != std::string::npos);
    }
    std::istringstream range("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n");
    CHECK_THROWS_AS(parse_off(range), ParseError);
    std::istringstream header("PLY\n");
    CHECK_THROWS_AS(parse_off(header), ParseError);
  }
}

TEST_CASE("xyz round trip is exact") {
  const fs::path dir = temp_dir("xyz");
  Rng rng(40);
  const PointCloud c = oracle::random_cloud(300, rng);
  write_xyz(dir / "c.xyz", c);
  CHECK(load_xyz(dir / "c.xyz") == c);

  std::istringstream in("# header\n1 2 3\n\n# note\n4 5 6\n");
  const PointCloud p = parse_xyz(in);
  REQUIRE(p.size() == 2);
  CHECK(p[1] == Vec3(4, 5, 6));
  std::istringstream bad("1 2\n");
  CHECK_THROWS_AS(parse_xyz(bad), ParseError);
  fs::remove_all(dir);
}

TEST_CASE("manifest round trip and indexing") {
  const fs::path dir = temp_dir("manifest");
  Rng rng(41);
  for (const char* cls : {"chair", "airplane"}) {
    for (const char* split : {"train", "test"}) {
      fs::create_directories(dir / cls / split);
      for (int i = 0; i < 3; ++i)
        write_xyz(dir / cls / split / (std::string(cls) + "_" + std::to_string(i) + ".xyz"),
                  oracle::random_cloud(40, rng));
    }
  }
  const auto entries = index_directory(dir);
  CHECK(entries.size() == 12);
  write_manifest(dir / "manifest.csv", entries);
  CHECK(read_manifest(dir / "manifest.csv") == entries);

  ManifestLoadOptions opt;
  opt.points = 32;
  const LabeledDataset train = load_manifest_dataset(dir / "manifest.csv", Split::Train, opt);
  CHECK(train.size() == 6);
  CHECK(train.class_names == std::vector<std::string>{"airplane", "chair"});
  for (const Sample& s : train.samples) {
    CHECK(s.cloud.size() == 32);
    double r = 0;
    for (const Vec3& p : s.cloud) r = std::max(r, p.norm());
    CHECK(r == doctest::Approx(1.0).epsilon(1e-12));
  }
  fs::remove_all(dir);
}

TEST_CASE("synthetic corpus") {
  SUBCASE("noise-free spheres sit on one radius") {
    Rng rng(42);
    SyntheticOptions opt;
    opt.classes = {ShapeClass::Sphere};
    opt.noise_sigma = 0.0;
    opt.per_class = 3;
    for (std::size_t k : {512, 513, 64, 3}) {
      opt.points = k;
      for (const Sample& s : generate_synthetic_corpus(opt, 42, Split::Train).samples)
        for (const Vec3& p : s.cloud) CHECK(std::abs(p.norm() - 1.0) <= 1e-6);
    }
  }
  SUBCASE("balanced, labeled and reproducible") {
    SyntheticOptions opt;
    opt.per_class = 40;
    opt.points = 128;
    const LabeledDataset a = generate_synthetic_corpus(opt, 7, Split::Train);
    CHECK(a.size() == 200);
    CHECK(a.num_classes() == 5);
    std::vector<int> counts(5, 0);
    for (const Sample& s : a.samples) {
      ++counts[s.label];
      CHECK(s.cloud.size() == 128);
      CHECK_FALSE(s.poisoned);
    }
    for (int c : counts) CHECK(c == 40);
    const LabeledDataset b = generate_synthetic_corpus(opt, 7, Split::Train);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.samples[i].cloud == b.samples[i].cloud);
    const LabeledDataset t = generate_synthetic_corpus(opt, 7, Split::Test);
    CHECK_FALSE(t.samples[0].cloud == a.samples[0].cloud);
  }
  SUBCASE("zero per class is rejected") {
    SyntheticOptions opt;
    opt.per_class = 0;
    CHECK_THROWS_AS(generate_synthetic_corpus(opt, 1, Split::Train), InvalidArgument);
  }
}

TEST_CASE("poisoning") {
  SyntheticOptions opt;
  opt.per_class = 40;
  opt.points = 128;
  const LabeledDataset clean = generate_synthetic_corpus(opt, 8, Split::Train);

  SUBCASE("rate zero leaves the set unchanged") {
    PoisonPlan plan;
    plan.rate = 0.0;
    const PoisonOutcome out = poison_dataset(clean, plan);
    CHECK(out.records.empty());
    for (std::size_t i = 0; i < clean.size(); ++i) {
      CHECK(out.dataset.samples[i].cloud == clean.samples[i].cloud);
      CHECK(out.dataset.samples[i].label == clean.samples[i].label);
    }
  }

  SUBCASE("ten percent of 200 gives 20 relabeled non-target samples") {
    PoisonPlan plan;
    plan.rate = 0.1;
    plan.target = 0;
    plan.seed = 3;
    const PoisonOutcome out = poison_dataset(clean, plan);
    REQUIRE(out.records.size() == 20);
    CHECK(out.dataset.poisoned_count() == 20);
    std::set<std::size_t> seen;
    for (const PoisonRecord& r : out.records) {
      CHECK(r.original_label != 0);
      CHECK(clean.samples[r.index].label == r.original_label);
      CHECK(out.dataset.samples[r.index].label == 0);
      CHECK(out.dataset.samples[r.index].poisoned);
      CHECK(r.fps_start.has_value());
      CHECK(seen.insert(r.index).second);
    }
    CHECK(std::is_sorted(out.records.begin(), out.records.end(),
                         [](const PoisonRecord& a, const PoisonRecord& b) { return a.index < b.index; }));
    const PoisonOutcome again = poison_dataset(clean, plan);
    for (std::size_t i = 0; i < clean.size(); ++i)
      CHECK(again.dataset.samples[i].cloud == out.dataset.samples[i].cloud);
  }

  SUBCASE("poison counts") {
    CHECK(poison_count(200, 0.1) == 20);
    CHECK(poison_count(200, 0.0) == 0);
    CHECK(poison_count(9, 0.5) == 4);
    CHECK(poison_count(100, 0.07) == 7);
  }

  SUBCASE("too few non-target samples or a bad target") {
    PoisonPlan plan;
    plan.rate = 0.9;
    CHECK_THROWS_AS(poison_dataset(clean, plan), InvalidArgument);
    plan.rate = 0.1;
    plan.target = 5;
    CHECK_THROWS_AS(poison_dataset(clean, plan), InvalidArgument);
  }
}
