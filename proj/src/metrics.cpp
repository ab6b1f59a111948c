#include "pcbackdoor/metrics.hpp"

#include <cmath>
#include <limits>

#include "pcbackdoor/error.hpp"

namespace pcbackdoor {

namespace {

double directed_mean(const PointCloud& from, const PointCloud& to) {
  const KdTree tree(to.points());
  double sum = 0.0;
  for (const Vec3& p : from) sum += tree.nearest_distance(p);
  return sum / static_cast<double>(from.size());
}

}  // namespace

double chamfer_distance(const PointCloud& a, const PointCloud& b) {
  return directed_mean(a, b) + directed_mean(b, a);
}

AccuracyResult clean_accuracy(const Predictor& model, const LabeledDataset& testset) {
  if (testset.size() == 0) throw InvalidArgument("clean_accuracy: empty test set");
  testset.validate();
  const std::size_t c = testset.num_classes();
  std::vector<std::size_t> per_total(c, 0), per_correct(c, 0);
  AccuracyResult r;
  for (const Sample& s : testset.samples) {
    const bool hit = model(s.cloud) == s.label;
    ++per_total[s.label];
    per_correct[s.label] += hit;
    r.correct += hit;
  }
  r.total = testset.size();
  r.acc = static_cast<double>(r.correct) / static_cast<double>(r.total);
  for (std::size_t k = 0; k < c; ++k) {
    r.per_class_acc.push_back(per_total[k] ? static_cast<double>(per_correct[k]) / static_cast<double>(per_total[k])
                                           : std::numeric_limits<double>::quiet_NaN());
  }
  return r;
}

AsrResult attack_success_rate(const Predictor& model, const LabeledDataset& testset,
                              const Trigger& trigger, std::size_t target,
                              const PipelineSpec& inference_pipeline, std::uint64_t seed) {
  AsrResult r;
  double cd_sum = 0.0;
  for (std::size_t i = 0; i < testset.size(); ++i) {
    const Sample& s = testset.samples[i];
    if (s.label == target) continue;
    Rng rng = Rng::derive(seed, {2, i});
    const PointCloud triggered = apply_trigger(trigger, s.cloud, rng).cloud;
    cd_sum += chamfer_distance(s.cloud, triggered);
    const PointCloud input = inference_pipeline.empty()
                                 ? triggered
                                 : run_pipeline(triggered, inference_pipeline, seed, i, 0);
    r.hits += model(input) == target;
    ++r.total;
  }
  if (r.total == 0) throw InvalidArgument("attack_success_rate: no non-target samples");
  r.asr = static_cast<double>(r.hits) / static_cast<double>(r.total);
  r.mean_cd_x100 = 100.0 * cd_sum / static_cast<double>(r.total);
  return r;
}

}  // namespace pcbackdoor
