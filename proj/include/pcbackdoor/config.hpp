#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pcbackdoor/dataset.hpp"
#include "pcbackdoor/model.hpp"
#include "pcbackdoor/preprocess.hpp"
#include "pcbackdoor/trigger.hpp"

namespace pcbackdoor {

enum class DataSource { Synthetic, Manifest };

struct DatasetConfig {
  DataSource source = DataSource::Synthetic;
  std::string manifest;  // used when source is Manifest
  std::size_t points = 1024;
  std::vector<std::string> classes{"sphere", "cube", "cylinder", "cone", "torus"};
  // Synthetic corpus only.
  std::size_t train_per_class = 40;
  std::size_t test_per_class = 20;
  double noise_sigma = 0.01;
  double pose_jitter_deg = 0.0;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

enum class TriggerKind { Wlt, Ball, Rotation };

std::string trigger_kind_name(TriggerKind kind);
/// Throws ConfigError for anything but wlt, ball or rotation.
TriggerKind parse_trigger_kind(const std::string& name);

// File-side trigger settings keep angles in degrees so that text round-trips
// are exact; conversion to radians happens once, in params().
struct WltSettings {
  std::size_t anchors = 16;
  double alpha_deg = 5.0;
  double scale = 5.0;
  double bandwidth = 0.5;
  bool renormalize = true;

  WltParams params() const;
  friend bool operator==(const WltSettings&, const WltSettings&) = default;
};

struct RotationSettings {
  double angle_z_deg = 10.0;

  RotationTriggerParams params() const;
  friend bool operator==(const RotationSettings&, const RotationSettings&) = default;
};

struct PoisonConfig {
  TriggerKind trigger = TriggerKind::Wlt;
  double rate = 0.1;
  std::size_t target = 0;
  WltSettings wlt;
  BallTriggerParams ball;
  RotationSettings rotation;

  friend bool operator==(const PoisonConfig&, const PoisonConfig&) = default;
};

struct TrainSettings {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  PipelineSpec pipeline;

  friend bool operator==(const TrainSettings&, const TrainSettings&) = default;
};

/// Everything one experiment needs.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  DatasetConfig dataset;
  PoisonConfig poison;
  TrainSettings train;
  PipelineSpec inference_pipeline;

  /// Throws ConfigError naming the offending key.
  void validate() const;

  Trigger trigger() const;
  PoisonPlan poison_plan() const;
  TrainConfig train_config() const;
  SyntheticOptions synthetic_options(Split split) const;

  // Independent sub-seeds so that changing one stage leaves the others intact.
  std::uint64_t data_seed() const;
  std::uint64_t poison_seed() const;
  std::uint64_t train_seed() const;
  std::uint64_t eval_seed() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// YAML text with every key present. Doubles use shortest round-trip form.
std::string serialize_config(const ExperimentConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

/// 16 hex digits of FNV-1a over the serialized config without its output directory.
std::string config_hash(const ExperimentConfig& config);

}  // namespace pcbackdoor
