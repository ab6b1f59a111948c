#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "pcbackdoor/config.hpp"
#include "pcbackdoor/dataset.hpp"
#include "pcbackdoor/metrics.hpp"
#include "pcbackdoor/model.hpp"

namespace pcbackdoor {

struct DatasetPair {
  LabeledDataset train;
  LabeledDataset test;
};

/// Synthetic corpus or manifest, per config.dataset.
DatasetPair build_datasets(const ExperimentConfig& config);

/// Clean training set with the configured poisoning applied (rate 0 leaves it clean).
PoisonOutcome build_poisoned_train(const ExperimentConfig& config, const LabeledDataset& train);

/// Writes `<out>/<class>/<split>/<class>_NNNN.xyz` and `<out>/manifest.csv`.
/// Returns the number of cloud files written.
std::size_t cmd_gen_synthetic(const ExperimentConfig& config, const std::filesystem::path& out);

struct PoisonSummary {
  std::vector<PoisonRecord> records;
  std::vector<double> cd_x100;  // per poisoned sample, same order as records
};

/// Writes every training cloud (poisoned ones replaced) and the clean test
/// clouds plus manifest.csv and poison_manifest.json.
PoisonSummary cmd_poison(const ExperimentConfig& config, const std::filesystem::path& out);

/// Trains on the poisoned training set; writes model.bin, loss.csv and config.yaml.
TrainResult cmd_train(const ExperimentConfig& config, const std::filesystem::path& out);

struct RunReport {
  std::string run_id;
  std::string trigger;
  std::string pipeline;  // training pipeline in compact form, "none" when empty
  std::string inference_pipeline;
  std::uint64_t seed = 0;
  EvalReport metrics;

  friend bool operator==(const RunReport&, const RunReport&) = default;
};

nlohmann::json report_to_json(const RunReport& report);
/// Throws ParseError on missing or mistyped fields.
RunReport report_from_json(const nlohmann::json& j);

/// Evaluates a model on the clean and triggered test set.
RunReport evaluate(const ExperimentConfig& config, const TinyModel& model, const LabeledDataset& test);

/// Writes report.json to `out` and upserts the row into `<out>/../results.csv`
/// unless `results_csv` names another file.
RunReport cmd_eval(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                   const std::filesystem::path& out, const std::filesystem::path& results_csv = {});

/// Results table keyed by run_id: an existing row with the same id is replaced,
/// other rows keep their order.
void upsert_results_row(const std::filesystem::path& csv, const RunReport& report);

/// One row per training sample (after poisoning): index,label,poisoned,f0..f255.
/// Returns the number of rows.
std::size_t cmd_export_features(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                                const std::filesystem::path& csv);

/// Train then evaluate into the same directory.
RunReport cmd_run(const ExperimentConfig& config, const std::filesystem::path& out,
                  const std::filesystem::path& results_csv = {});

}  // namespace pcbackdoor
