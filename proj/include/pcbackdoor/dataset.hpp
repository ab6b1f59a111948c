#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "pcbackdoor/geometry.hpp"
#include "pcbackdoor/rng.hpp"
#include "pcbackdoor/trigger.hpp"

namespace pcbackdoor {

enum class Split { Train, Test };

std::string split_name(Split split);
Split parse_split(const std::string& name);

struct Sample {
  PointCloud cloud;
  std::size_t label;
  bool poisoned = false;
};

/// Labeled point clouds of one split. Poisoned samples carry the target label.
struct LabeledDataset {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;
  Split split = Split::Train;

  std::size_t size() const noexcept { return samples.size(); }
  std::size_t num_classes() const noexcept { return class_names.size(); }
  std::vector<bool> poison_mask() const;
  std::size_t poisoned_count() const;
  /// Throws InvalidArgument when a label is out of range.
  void validate() const;
};

// ---------------------------------------------------------------------------
// File formats

/// Parses an OFF mesh; polygons with more than three vertices are fan-triangulated.
/// Accepts both the split ("OFF" newline counts) and fused ("OFF v f e") headers.
/// Throws ParseError carrying the 1-based line number.
TriangleMesh parse_off(std::istream& in, const std::string& source = "<stream>");
TriangleMesh load_off(const std::filesystem::path& path);

/// Parses whitespace separated "x y z" lines; blank lines and '#' comments are skipped.
PointCloud parse_xyz(std::istream& in, const std::string& source = "<stream>");
PointCloud load_xyz(const std::filesystem::path& path);
/// Writes one point per line in shortest round-trip decimal form.
void write_xyz(const std::filesystem::path& path, const PointCloud& cloud);

struct ManifestEntry {
  std::string path;   // relative to the manifest directory, or absolute
  std::string label;  // class name
  Split split = Split::Train;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// CSV with header `path,label,split`.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Scans `root/<class>/<split>/*.{off,xyz}` (ModelNet layout) and
/// `root/<split>/<class>/*` into a sorted manifest.
std::vector<ManifestEntry> index_directory(const std::filesystem::path& root);

struct ManifestLoadOptions {
  std::size_t points = 1024;
  std::uint64_t seed = 0;
  // Class order; empty means sorted unique labels found in the manifest.
  std::vector<std::string> class_names;
};

/// Loads one split of a manifest. Meshes are surface sampled, point files
/// larger than `points` are randomly subsampled; every cloud is unit-ball normalized.
LabeledDataset load_manifest_dataset(const std::filesystem::path& manifest_path, Split split,
                                     const ManifestLoadOptions& options);

// ---------------------------------------------------------------------------
// Synthetic corpus

enum class ShapeClass { Sphere, Cube, Cylinder, Cone, Torus };

std::string shape_name(ShapeClass shape);
ShapeClass parse_shape(const std::string& name);
std::vector<ShapeClass> default_shape_classes();

struct SyntheticOptions {
  std::vector<ShapeClass> classes = default_shape_classes();
  std::size_t per_class = 40;
  std::size_t points = 512;
  double noise_sigma = 0.01;
  // Random rotation about each axis, uniform in +-pose_jitter_deg.
  double pose_jitter_deg = 0.0;
};

/// Surface samples of one shape in its canonical pose, before normalization.
PointCloud sample_shape(ShapeClass shape, std::size_t points, Rng& rng);

/// Class-balanced corpus. Sample i of class c is drawn from its own stream,
/// so the corpus is reproducible per seed and independent of class order.
LabeledDataset generate_synthetic_corpus(const SyntheticOptions& options, std::uint64_t seed,
                                         Split split);

// ---------------------------------------------------------------------------
// Poisoning

struct PoisonPlan {
  double rate = 0.1;
  std::size_t target = 0;
  Trigger trigger = WltParams{};
  std::uint64_t seed = 0;

  void validate(std::size_t num_classes) const;
};

struct PoisonRecord {
  std::size_t index;
  std::size_t original_label;
  std::optional<std::size_t> fps_start;
};

struct PoisonOutcome {
  LabeledDataset dataset;
  std::vector<PoisonRecord> records;  // ascending by index
};

/// floor(rate * N), with a small slack so exact products are not rounded down.
std::size_t poison_count(std::size_t n, double rate);

/// Replaces floor(rate * N) uniformly chosen non-target samples by triggered
/// copies labeled with the target class. Throws InvalidArgument when there are
/// too few non-target samples.
PoisonOutcome poison_dataset(const LabeledDataset& train, const PoisonPlan& plan);

}  // namespace pcbackdoor
