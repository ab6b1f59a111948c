#include "pcbackdoor/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "pcbackdoor/error.hpp"

namespace pcbackdoor {

namespace fs = std::filesystem;

std::string split_name(Split split) { return split == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "test") return Split::Test;
  throw InvalidArgument("unknown split '" + name + "'");
}

std::vector<bool> LabeledDataset::poison_mask() const {
  std::vector<bool> mask;
  mask.reserve(samples.size());
  for (const Sample& s : samples) mask.push_back(s.poisoned);
  return mask;
}

std::size_t LabeledDataset::poisoned_count() const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [](const Sample& s) { return s.poisoned; }));
}

void LabeledDataset::validate() const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].label >= class_names.size()) {
      throw InvalidArgument("sample " + std::to_string(i) + " has label " +
                            std::to_string(samples[i].label) + " but only " +
                            std::to_string(class_names.size()) + " classes exist");
    }
  }
}

// ---------------------------------------------------------------------------
// Text helpers

namespace {

std::vector<std::string_view> tokenize(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t b = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > b) out.push_back(line.substr(b, i - b));
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Reads the next line that is neither blank nor a comment. Returns false at EOF.
bool next_content_line(std::istream& in, std::string& line, std::size_t& line_no) {
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (!tokenize(line).empty()) return true;
  }
  return false;
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

TriangleMesh parse_off(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  if (!next_content_line(in, line, line_no)) throw ParseError(source, line_no, "empty OFF file");

  const auto first = tokenize(line);
  if (first.front().substr(0, 3) != "OFF") {
    throw ParseError(source, line_no, "missing OFF header");
  }
  // Counts either follow the keyword on the same line (possibly fused, as in
  // "OFF490 518 0") or sit on the next content line.
  std::vector<std::string_view> counts;
  if (first.front().size() > 3) counts.push_back(first.front().substr(3));
  counts.insert(counts.end(), first.begin() + 1, first.end());
  std::string count_line;
  if (counts.empty()) {
    if (!next_content_line(in, count_line, line_no)) {
      throw ParseError(source, line_no, "missing vertex/face counts");
    }
    counts = tokenize(count_line);
  }
  std::size_t n_vertices = 0, n_faces = 0;
  if (counts.size() < 2 || !parse_number(counts[0], n_vertices) || !parse_number(counts[1], n_faces)) {
    throw ParseError(source, line_no, "malformed vertex/face counts");
  }

  TriangleMesh mesh;
  mesh.vertices.reserve(n_vertices);
  for (std::size_t v = 0; v < n_vertices; ++v) {
    if (!next_content_line(in, line, line_no)) {
      throw ParseError(source, line_no, "expected " + std::to_string(n_vertices) + " vertices, got " +
                                            std::to_string(v));
    }
    const auto tok = tokenize(line);
    Vec3 p;
    if (tok.size() < 3 || !parse_number(tok[0], p.x()) || !parse_number(tok[1], p.y()) ||
        !parse_number(tok[2], p.z())) {
      throw ParseError(source, line_no, "malformed vertex");
    }
    if (!p.allFinite()) throw ParseError(source, line_no, "non-finite vertex coordinate");
    mesh.vertices.push_back(p);
  }
  for (std::size_t f = 0; f < n_faces; ++f) {
    if (!next_content_line(in, line, line_no)) {
      throw ParseError(source, line_no, "expected " + std::to_string(n_faces) + " faces, got " +
                                            std::to_string(f));
    }
    const auto tok = tokenize(line);
    std::size_t n = 0;
    if (tok.empty() || !parse_number(tok[0], n) || n < 3 || tok.size() < n + 1) {
      throw ParseError(source, line_no, "malformed face");
    }
    std::vector<std::uint32_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (!parse_number(tok[i + 1], ids[i]) || ids[i] >= n_vertices) {
        throw ParseError(source, line_no, "face index out of range");
      }
    }
    for (std::size_t i = 1; i + 1 < n; ++i) mesh.faces.push_back({ids[0], ids[i], ids[i + 1]});
  }
  return mesh;
}

TriangleMesh load_off(const fs::path& path) {
  auto in = open_input(path);
  return parse_off(in, path.string());
}

PointCloud parse_xyz(std::istream& in, const std::string& source) {
  std::vector<Vec3> points;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tok = tokenize(line);
    if (tok.empty() || tok.front().front() == '#') continue;
    Vec3 p;
    if (tok.size() != 3) {
      throw ParseError(source, line_no, "expected 3 columns, found " + std::to_string(tok.size()));
    }
    if (!parse_number(tok[0], p.x()) || !parse_number(tok[1], p.y()) || !parse_number(tok[2], p.z())) {
      throw ParseError(source, line_no, "malformed coordinate");
    }
    if (!p.allFinite()) throw ParseError(source, line_no, "non-finite coordinate");
    points.push_back(p);
  }
  if (points.empty()) throw ParseError(source, line_no, "no points");
  return PointCloud(std::move(points));
}

PointCloud load_xyz(const fs::path& path) {
  auto in = open_input(path);
  return parse_xyz(in, path.string());
}

void write_xyz(const fs::path& path, const PointCloud& cloud) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const Vec3& p : cloud) {
    out << fmt_double(p.x()) << ' ' << fmt_double(p.y()) << ' ' << fmt_double(p.z()) << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Manifest

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(path.string(), 1, "empty manifest");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,label,split") throw ParseError(path.string(), line_no, "expected header 'path,label,split'");
  std::vector<ManifestEntry> entries;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (cols.size() != 3) throw ParseError(path.string(), line_no, "expected 3 columns");
    try {
      entries.push_back({cols[0], cols[1], parse_split(cols[2])});
    } catch (const InvalidArgument& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
  return entries;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "path,label,split\n";
  for (const auto& e : entries) {
    if (e.path.find(',') != std::string::npos || e.label.find(',') != std::string::npos) {
      throw InvalidArgument("manifest fields may not contain commas: " + e.path);
    }
    out << e.path << ',' << e.label << ',' << split_name(e.split) << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<ManifestEntry> index_directory(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("'" + root.string() + "' is not a directory");
  auto is_cloud_file = [](const fs::path& p) {
    const auto ext = p.extension().string();
    return ext == ".off" || ext == ".xyz";
  };
  std::vector<ManifestEntry> entries;
  auto add_files = [&](const fs::path& dir, const std::string& label, Split split) {
    for (const auto& f : fs::directory_iterator(dir)) {
      if (f.is_regular_file() && is_cloud_file(f.path())) {
        entries.push_back({fs::relative(f.path(), root).generic_string(), label, split});
      }
    }
  };
  for (const auto& cls : fs::directory_iterator(root)) {
    if (!cls.is_directory()) continue;
    const std::string label = cls.path().filename().string();
    add_files(cls.path(), label, Split::Train);
    for (Split s : {Split::Train, Split::Test}) {
      const fs::path sub = cls.path() / split_name(s);
      if (fs::is_directory(sub)) add_files(sub, label, s);
    }
  }
  std::sort(entries.begin(), entries.end(), [](const ManifestEntry& a, const ManifestEntry& b) {
    return std::tie(a.split, a.label, a.path) < std::tie(b.split, b.label, b.path);
  });
  return entries;
}

LabeledDataset load_manifest_dataset(const fs::path& manifest_path, Split split,
                                     const ManifestLoadOptions& options) {
  const auto entries = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();

  LabeledDataset ds;
  ds.split = split;
  ds.class_names = options.class_names;
  if (ds.class_names.empty()) {
    std::set<std::string> names;
    for (const auto& e : entries) names.insert(e.label);
    ds.class_names.assign(names.begin(), names.end());
  }
  std::map<std::string, std::size_t> class_id;
  for (std::size_t i = 0; i < ds.class_names.size(); ++i) class_id[ds.class_names[i]] = i;

  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.split != split) continue;
    const auto it = class_id.find(e.label);
    if (it == class_id.end()) throw InvalidArgument("manifest label '" + e.label + "' is not a known class");
    const fs::path file = fs::path(e.path).is_absolute() ? fs::path(e.path) : base / e.path;
    Rng rng = Rng::derive(options.seed, {static_cast<std::uint64_t>(split), i});
    const auto ext = file.extension().string();
    PointCloud cloud = ext == ".off" ? sample_mesh_surface(load_off(file), options.points, rng)
                                     : load_xyz(file);
    if (cloud.size() > options.points) {
      // Same draw rule as SRS, inlined to keep the dataset layer free of pre-processing.
      std::vector<std::size_t> ids(cloud.size());
      std::iota(ids.begin(), ids.end(), 0);
      for (std::size_t j = 0; j < options.points; ++j) {
        std::swap(ids[j], ids[j + static_cast<std::size_t>(rng.index(cloud.size() - j))]);
      }
      ids.resize(options.points);
      std::sort(ids.begin(), ids.end());
      std::vector<Vec3> kept;
      for (std::size_t id : ids) kept.push_back(cloud[id]);
      cloud = PointCloud(std::move(kept));
    }
    ds.samples.push_back({normalize_unit_ball(cloud), it->second, false});
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic shapes

std::string shape_name(ShapeClass shape) {
  switch (shape) {
    case ShapeClass::Sphere: return "sphere";
    case ShapeClass::Cube: return "cube";
    case ShapeClass::Cylinder: return "cylinder";
    case ShapeClass::Cone: return "cone";
    case ShapeClass::Torus: return "torus";
  }
  return "unknown";
}

ShapeClass parse_shape(const std::string& name) {
  for (ShapeClass s : default_shape_classes()) {
    if (shape_name(s) == name) return s;
  }
  throw InvalidArgument("unknown synthetic shape '" + name + "'");
}

std::vector<ShapeClass> default_shape_classes() {
  return {ShapeClass::Sphere, ShapeClass::Cube, ShapeClass::Cylinder, ShapeClass::Cone,
          ShapeClass::Torus};
}

namespace {

Vec3 unit_vector(Rng& rng) {
  Vec3 v(rng.normal(), rng.normal(), rng.normal());
  while (v.squaredNorm() == 0.0) v = Vec3(rng.normal(), rng.normal(), rng.normal());
  return v.normalized();
}

// Uniform point on a disk of radius r in the plane spanned by (u, v).
Vec3 disk_point(double r, const Vec3& center, const Vec3& u, const Vec3& v, Rng& rng) {
  const double rho = r * std::sqrt(rng.uniform());
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  return center + rho * (std::cos(phi) * u + std::sin(phi) * v);
}

// Canonical poses keep the symmetry axes of cylinder, cone and torus off the
// z axis, so that a rotation about z changes every non-sphere class.
// Antipodal pairs (plus one zero-sum triple on a great circle when n is odd)
// put the centroid exactly at the center, so normalization keeps every point
// on one radius. Each point is still marginally uniform on the sphere.
std::vector<Vec3> sample_sphere(std::size_t n, Rng& rng) {
  std::vector<Vec3> pts;
  if (n == 1) return {unit_vector(rng)};
  if (n % 2 == 1) {
    const Vec3 axis = unit_vector(rng);
    const Vec3 u = axis.unitOrthogonal();
    const Vec3 v = axis.cross(u);
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    for (int k = 0; k < 3; ++k) {
      const double a = phi + 2.0 * std::numbers::pi * k / 3.0;
      pts.push_back(std::cos(a) * u + std::sin(a) * v);
    }
  }
  while (pts.size() < n) {
    const Vec3 p = unit_vector(rng);
    pts.push_back(p);
    pts.push_back(-p);
  }
  return pts;
}

std::vector<Vec3> sample_cube(std::size_t n, Rng& rng) {
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i) {
    const auto face = rng.index(6);
    const int axis = static_cast<int>(face / 2);
    Vec3 p(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    p[axis] = face % 2 ? 1.0 : -1.0;
    pts.push_back(p);
  }
  return pts;
}

// Axis along x.
std::vector<Vec3> sample_cylinder(std::size_t n, Rng& rng) {
  const double radius = rng.uniform(0.4, 0.6);
  const double half = rng.uniform(0.9, 1.1);
  const double side = 2.0 * std::numbers::pi * radius * 2.0 * half;
  const double cap = std::numbers::pi * radius * radius;
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * (side + 2.0 * cap);
    if (u < side) {
      const double phi = 2.0 * std::numbers::pi * rng.uniform();
      pts.emplace_back(rng.uniform(-half, half), radius * std::cos(phi), radius * std::sin(phi));
    } else {
      const double x = u < side + cap ? -half : half;
      pts.push_back(disk_point(radius, Vec3(x, 0, 0), Vec3::UnitY(), Vec3::UnitZ(), rng));
    }
  }
  return pts;
}

// Axis along y, apex up.
std::vector<Vec3> sample_cone(std::size_t n, Rng& rng) {
  const double radius = rng.uniform(0.7, 0.9);
  const double height = rng.uniform(1.4, 1.8);
  const double slant = std::hypot(radius, height);
  const double side = std::numbers::pi * radius * slant;
  const double base = std::numbers::pi * radius * radius;
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.uniform() * (side + base) < side) {
      // Lateral area density grows linearly towards the base.
      const double t = std::sqrt(rng.uniform());
      const double phi = 2.0 * std::numbers::pi * rng.uniform();
      pts.emplace_back(t * radius * std::cos(phi), height * (1.0 - t), t * radius * std::sin(phi));
    } else {
      pts.push_back(disk_point(radius, Vec3::Zero(), Vec3::UnitX(), Vec3::UnitZ(), rng));
    }
  }
  return pts;
}

// Ring in the y-z plane, symmetry axis along x.
std::vector<Vec3> sample_torus(std::size_t n, Rng& rng) {
  const double major = 1.0;
  const double minor = rng.uniform(0.25, 0.4);
  std::vector<Vec3> pts;
  while (pts.size() < n) {
    const double theta = 2.0 * std::numbers::pi * rng.uniform();
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    // Area element is proportional to (R + r cos phi); accept accordingly.
    if (rng.uniform() * (major + minor) > major + minor * std::cos(phi)) continue;
    const double ring = major + minor * std::cos(phi);
    pts.emplace_back(minor * std::sin(phi), ring * std::cos(theta), ring * std::sin(theta));
  }
  return pts;
}

}  // namespace

PointCloud sample_shape(ShapeClass shape, std::size_t points, Rng& rng) {
  if (points == 0) throw InvalidArgument("sample_shape: point count must be positive");
  switch (shape) {
    case ShapeClass::Sphere: return PointCloud(sample_sphere(points, rng));
    case ShapeClass::Cube: return PointCloud(sample_cube(points, rng));
    case ShapeClass::Cylinder: return PointCloud(sample_cylinder(points, rng));
    case ShapeClass::Cone: return PointCloud(sample_cone(points, rng));
    case ShapeClass::Torus: return PointCloud(sample_torus(points, rng));
  }
  throw InvalidArgument("sample_shape: unknown shape");
}

LabeledDataset generate_synthetic_corpus(const SyntheticOptions& options, std::uint64_t seed,
                                         Split split) {
  if (options.per_class < 1) throw InvalidArgument("synthetic corpus: per_class must be at least 1");
  if (options.classes.empty()) throw InvalidArgument("synthetic corpus: no classes");
  if (options.points < 2) throw InvalidArgument("synthetic corpus: need at least 2 points");
  if (!(options.noise_sigma >= 0.0)) throw InvalidArgument("synthetic corpus: noise sigma must be >= 0");

  LabeledDataset ds;
  ds.split = split;
  for (ShapeClass c : options.classes) ds.class_names.push_back(shape_name(c));

  for (std::size_t label = 0; label < options.classes.size(); ++label) {
    const ShapeClass shape = options.classes[label];
    for (std::size_t i = 0; i < options.per_class; ++i) {
      Rng rng = Rng::derive(seed, {static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(shape), i});
      const PointCloud base = sample_shape(shape, options.points, rng);

      const double scale = rng.uniform(0.8, 1.2);
      const double jitter = deg_to_rad(options.pose_jitter_deg);
      const Mat3 pose = rotation_matrix_axis(Axis::X, rng.uniform(-jitter, jitter)) *
                        rotation_matrix_axis(Axis::Y, rng.uniform(-jitter, jitter)) *
                        rotation_matrix_axis(Axis::Z, rng.uniform(-jitter, jitter));
      const Vec3 offset(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));

      std::vector<Vec3> pts;
      pts.reserve(base.size());
      for (const Vec3& p : base) {
        Vec3 q = scale * (pose * p) + offset;
        if (options.noise_sigma > 0.0) {
          q += options.noise_sigma * Vec3(rng.normal(), rng.normal(), rng.normal());
        }
        pts.push_back(q);
      }
      ds.samples.push_back({normalize_unit_ball(PointCloud(std::move(pts))), label, false});
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Poisoning

void PoisonPlan::validate(std::size_t num_classes) const {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("poison rate must lie in [0, 1)");
  if (target >= num_classes) throw InvalidArgument("poison target class out of range");
  std::visit([](const auto& p) { p.validate(); }, trigger);
}

std::size_t poison_count(std::size_t n, double rate) {
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 1e-9));
}

PoisonOutcome poison_dataset(const LabeledDataset& train, const PoisonPlan& plan) {
  train.validate();
  plan.validate(train.num_classes());

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train.samples[i].label != plan.target && !train.samples[i].poisoned) candidates.push_back(i);
  }
  const std::size_t m = poison_count(train.size(), plan.rate);
  if (m > candidates.size()) {
    throw InvalidArgument("poisoning needs " + std::to_string(m) + " non-target samples but only " +
                          std::to_string(candidates.size()) + " exist");
  }

  Rng select(Rng::derive(plan.seed, {0}));
  for (std::size_t i = 0; i < m; ++i) {
    const auto j = i + static_cast<std::size_t>(select.index(candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(m);
  std::sort(candidates.begin(), candidates.end());

  PoisonOutcome outcome{train, {}};
  for (std::size_t idx : candidates) {
    Rng rng = Rng::derive(plan.seed, {1, idx});
    Sample& s = outcome.dataset.samples[idx];
    auto triggered = apply_trigger(plan.trigger, s.cloud, rng);
    outcome.records.push_back({idx, s.label, triggered.fps_start});
    s.cloud = std::move(triggered.cloud);
    s.label = plan.target;
    s.poisoned = true;
  }
  return outcome;
}

}  // namespace pcbackdoor
