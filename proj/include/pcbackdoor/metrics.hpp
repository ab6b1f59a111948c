#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pcbackdoor/dataset.hpp"
#include "pcbackdoor/geometry.hpp"
#include "pcbackdoor/preprocess.hpp"
#include "pcbackdoor/trigger.hpp"

namespace pcbackdoor {

/// Anything that maps a cloud to a class id.
using Predictor = std::function<std::size_t(const PointCloud&)>;

/// Mean nearest-neighbor distance from a to b plus from b to a (non-squared).
double chamfer_distance(const PointCloud& a, const PointCloud& b);

struct EvalReport {
  double acc = 0.0;
  double asr = 0.0;
  std::vector<double> per_class_acc;
  std::size_t test_samples = 0;
  std::size_t correct = 0;
  std::size_t asr_samples = 0;  // non-target test samples carrying the trigger
  std::size_t asr_hits = 0;
  double cd_x100 = 0.0;  // mean Chamfer distance x 100 over triggered samples

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct AccuracyResult {
  double acc = 0.0;
  std::vector<double> per_class_acc;  // NaN for classes absent from the set
  std::size_t total = 0;
  std::size_t correct = 0;
};

AccuracyResult clean_accuracy(const Predictor& model, const LabeledDataset& testset);

struct AsrResult {
  double asr = 0.0;
  std::size_t total = 0;
  std::size_t hits = 0;
  double mean_cd_x100 = 0.0;
};

/// Triggers every non-target test sample (stream keyed by seed and sample
/// index), runs the optional inference pipeline and counts target predictions.
/// Throws InvalidArgument when the set has no non-target sample.
AsrResult attack_success_rate(const Predictor& model, const LabeledDataset& testset,
                              const Trigger& trigger, std::size_t target,
                              const PipelineSpec& inference_pipeline, std::uint64_t seed);

}  // namespace pcbackdoor
