#include "pcbackdoor/experiment.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pcbackdoor/error.hpp"

namespace pcbackdoor {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string pipeline_text(const PipelineSpec& spec) { return spec.empty() ? "none" : format_pipeline(spec); }

std::string cloud_file_name(const std::string& cls, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04zu.xyz", i);
  return cls + buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// Writes the clouds of one split under <out>/<class>/<split>/ and appends manifest rows.
void write_split(const LabeledDataset& ds, const fs::path& out, std::vector<ManifestEntry>& manifest) {
  std::vector<std::size_t> per_class(ds.num_classes(), 0);
  const std::string split = split_name(ds.split);
  for (const Sample& s : ds.samples) {
    const std::string& cls = ds.class_names[s.label];
    const fs::path rel = fs::path(cls) / split / cloud_file_name(cls, per_class[s.label]++);
    write_xyz(out / rel, s.cloud);
    manifest.push_back({rel.generic_string(), cls, ds.split});
  }
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

// Splits one CSV line honoring double quotes.
std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> fields(1);
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_quotes) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        in_quotes = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

fs::path default_results_csv(const fs::path& out) {
  fs::path dir = fs::absolute(out).lexically_normal();
  if (dir.filename().empty()) dir = dir.parent_path();
  return dir.parent_path() / "results.csv";
}

TrainResult train_into(const ExperimentConfig& config, const LabeledDataset& train_set, const fs::path& out) {
  const PoisonOutcome poisoned = build_poisoned_train(config, train_set);
  TrainResult result = train(poisoned.dataset, config.train_config());
  fs::create_directories(out);
  save_checkpoint(out / "model.bin", result.model, &result.optimizer);
  write_loss_log(out / "loss.csv", result.log);
  save_config(out / "config.yaml", config);
  return result;
}

constexpr const char* kResultsHeader = "run_id,trigger,pipeline,acc,asr,cd_x100,seed";

}  // namespace

DatasetPair build_datasets(const ExperimentConfig& config) {
  config.validate();
  if (config.dataset.source == DataSource::Synthetic) {
    return {generate_synthetic_corpus(config.synthetic_options(Split::Train), config.data_seed(), Split::Train),
            generate_synthetic_corpus(config.synthetic_options(Split::Test), config.data_seed(), Split::Test)};
  }
  ManifestLoadOptions opts;
  opts.points = config.dataset.points;
  opts.seed = config.data_seed();
  opts.class_names = config.dataset.classes;
  DatasetPair pair{load_manifest_dataset(config.dataset.manifest, Split::Train, opts),
                   load_manifest_dataset(config.dataset.manifest, Split::Test, opts)};
  if (pair.train.size() == 0) throw InvalidArgument("manifest has no train entries");
  if (pair.test.size() == 0) throw InvalidArgument("manifest has no test entries");
  return pair;
}

PoisonOutcome build_poisoned_train(const ExperimentConfig& config, const LabeledDataset& train) {
  if (config.poison.rate == 0.0) return {train, {}};
  return poison_dataset(train, config.poison_plan());
}

std::size_t cmd_gen_synthetic(const ExperimentConfig& config, const fs::path& out) {
  if (config.dataset.source != DataSource::Synthetic) {
    throw ConfigError("gen-synthetic needs dataset.source: synthetic");
  }
  const DatasetPair data = build_datasets(config);
  std::vector<ManifestEntry> manifest;
  write_split(data.train, out, manifest);
  write_split(data.test, out, manifest);
  write_manifest(out / "manifest.csv", manifest);
  return manifest.size();
}

PoisonSummary cmd_poison(const ExperimentConfig& config, const fs::path& out) {
  const DatasetPair data = build_datasets(config);
  const PoisonOutcome poisoned = build_poisoned_train(config, data.train);

  PoisonSummary summary;
  summary.records = poisoned.records;
  json entries = json::array();
  for (const PoisonRecord& r : poisoned.records) {
    const double cd = 100.0 * chamfer_distance(data.train.samples[r.index].cloud,
                                               poisoned.dataset.samples[r.index].cloud);
    summary.cd_x100.push_back(cd);
    json e{{"index", r.index},
           {"original_label", data.train.class_names[r.original_label]},
           {"cd_x100", cd}};
    e["fps_start"] = r.fps_start ? json(*r.fps_start) : json(nullptr);
    entries.push_back(std::move(e));
  }

  std::vector<ManifestEntry> manifest;
  write_split(poisoned.dataset, out, manifest);
  // Attach the written path of each poisoned sample to its manifest record.
  for (std::size_t k = 0; k < poisoned.records.size(); ++k) {
    entries[k]["path"] = manifest[poisoned.records[k].index].path;
  }
  write_split(data.test, out, manifest);
  write_manifest(out / "manifest.csv", manifest);

  json trigger_params;
  switch (config.poison.trigger) {
    case TriggerKind::Wlt: {
      const auto& w = config.poison.wlt;
      trigger_params = {{"anchors", w.anchors},   {"alpha_deg", w.alpha_deg},
                        {"scale", w.scale},       {"bandwidth", w.bandwidth},
                        {"renormalize", w.renormalize}};
      break;
    }
    case TriggerKind::Ball: {
      const auto& b = config.poison.ball;
      trigger_params = {{"center", {b.center.x(), b.center.y(), b.center.z()}},
                        {"radius", b.radius},
                        {"ratio", b.ratio}};
      break;
    }
    case TriggerKind::Rotation:
      trigger_params = {{"angle_z_deg", config.poison.rotation.angle_z_deg}};
      break;
  }
  double mean_cd = 0.0;
  for (double v : summary.cd_x100) mean_cd += v;
  if (!summary.cd_x100.empty()) mean_cd /= static_cast<double>(summary.cd_x100.size());
  const json doc{{"trigger", trigger_kind_name(config.poison.trigger)},
                 {"trigger_params", trigger_params},
                 {"seed", config.seed},
                 {"poison_seed", config.poison_seed()},
                 {"rate", config.poison.rate},
                 {"target", config.dataset.classes[config.poison.target]},
                 {"train_samples", poisoned.dataset.size()},
                 {"poisoned_count", poisoned.records.size()},
                 {"mean_cd_x100", mean_cd},
                 {"poisoned", entries}};
  write_text(out / "poison_manifest.json", doc.dump(2) + "\n");
  return summary;
}

TrainResult cmd_train(const ExperimentConfig& config, const fs::path& out) {
  return train_into(config, build_datasets(config).train, out);
}

json report_to_json(const RunReport& r) {
  const EvalReport& m = r.metrics;
  json per_class = json::array();
  for (double v : m.per_class_acc) per_class.push_back(std::isnan(v) ? json(nullptr) : json(v));
  return json{{"run_id", r.run_id},
              {"trigger", r.trigger},
              {"pipeline", r.pipeline},
              {"inference_pipeline", r.inference_pipeline},
              {"seed", r.seed},
              {"acc", m.acc},
              {"asr", m.asr},
              {"cd_x100", m.cd_x100},
              {"per_class_acc", per_class},
              {"test_samples", m.test_samples},
              {"correct", m.correct},
              {"asr_samples", m.asr_samples},
              {"asr_hits", m.asr_hits}};
}

RunReport report_from_json(const json& j) {
  auto field = [&](const char* key) -> const json& {
    if (!j.is_object() || !j.contains(key)) throw ParseError("report", 0, std::string("missing field '") + key + "'");
    return j.at(key);
  };
  RunReport r;
  try {
    r.run_id = field("run_id").get<std::string>();
    r.trigger = field("trigger").get<std::string>();
    r.pipeline = field("pipeline").get<std::string>();
    r.inference_pipeline = field("inference_pipeline").get<std::string>();
    r.seed = field("seed").get<std::uint64_t>();
    r.metrics.acc = field("acc").get<double>();
    r.metrics.asr = field("asr").get<double>();
    r.metrics.cd_x100 = field("cd_x100").get<double>();
    for (const json& v : field("per_class_acc")) {
      r.metrics.per_class_acc.push_back(v.is_null() ? std::nan("") : v.get<double>());
    }
    r.metrics.test_samples = field("test_samples").get<std::size_t>();
    r.metrics.correct = field("correct").get<std::size_t>();
    r.metrics.asr_samples = field("asr_samples").get<std::size_t>();
    r.metrics.asr_hits = field("asr_hits").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ParseError("report", 0, e.what());
  }
  return r;
}

RunReport evaluate(const ExperimentConfig& config, const TinyModel& model, const LabeledDataset& test) {
  if (model.num_classes() != test.num_classes()) {
    throw InvalidArgument("model has " + std::to_string(model.num_classes()) + " classes, dataset has " +
                          std::to_string(test.num_classes()));
  }
  const Predictor predictor = as_predictor(model);
  const AccuracyResult acc = clean_accuracy(predictor, test);
  const AsrResult asr = attack_success_rate(predictor, test, config.trigger(), config.poison.target,
                                            config.inference_pipeline, config.eval_seed());
  RunReport r;
  r.run_id = config_hash(config);
  r.trigger = trigger_kind_name(config.poison.trigger);
  r.pipeline = pipeline_text(config.train.pipeline);
  r.inference_pipeline = pipeline_text(config.inference_pipeline);
  r.seed = config.seed;
  r.metrics.acc = acc.acc;
  r.metrics.per_class_acc = acc.per_class_acc;
  r.metrics.test_samples = acc.total;
  r.metrics.correct = acc.correct;
  r.metrics.asr = asr.asr;
  r.metrics.asr_samples = asr.total;
  r.metrics.asr_hits = asr.hits;
  r.metrics.cd_x100 = asr.mean_cd_x100;
  return r;
}

void upsert_results_row(const fs::path& csv, const RunReport& report) {
  std::vector<std::string> rows;
  if (fs::exists(csv)) {
    std::ifstream in(csv, std::ios::binary);
    if (!in) throw IoError("cannot read '" + csv.string() + "'");
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (first) {
        first = false;
        if (line != kResultsHeader) throw IoError(csv.string() + ": unexpected results header");
        continue;
      }
      if (line.empty()) continue;
      if (csv_split(line).front() == report.run_id) continue;
      rows.push_back(line);
    }
  }
  const EvalReport& m = report.metrics;
  rows.push_back(csv_field(report.run_id) + ',' + csv_field(report.trigger) + ',' + csv_field(report.pipeline) +
                 ',' + num(m.acc) + ',' + num(m.asr) + ',' + num(m.cd_x100) + ',' + std::to_string(report.seed));
  std::string text = std::string(kResultsHeader) + "\n";
  for (const auto& r : rows) text += r + "\n";
  write_text(csv, text);
}

RunReport cmd_eval(const ExperimentConfig& config, const fs::path& checkpoint, const fs::path& out,
                   const fs::path& results_csv) {
  const TinyModel model = load_checkpoint(checkpoint);
  const DatasetPair data = build_datasets(config);
  const RunReport report = evaluate(config, model, data.test);
  write_text(out / "report.json", report_to_json(report).dump(2) + "\n");
  const fs::path table = results_csv.empty() ? default_results_csv(out) : results_csv;
  upsert_results_row(table, report);
  return report;
}

std::size_t cmd_export_features(const ExperimentConfig& config, const fs::path& checkpoint, const fs::path& csv) {
  const TinyModel model = load_checkpoint(checkpoint);
  const DatasetPair data = build_datasets(config);
  const PoisonOutcome poisoned = build_poisoned_train(config, data.train);
  if (model.num_classes() != poisoned.dataset.num_classes()) {
    throw InvalidArgument("checkpoint does not match the configured classes");
  }
  std::ostringstream out;
  const std::size_t width = model.shape().point_widths[2];
  out << "index,label,poisoned";
  for (std::size_t f = 0; f < width; ++f) out << ",f" << f;
  out << '\n';
  for (std::size_t i = 0; i < poisoned.dataset.size(); ++i) {
    const Sample& s = poisoned.dataset.samples[i];
    const Eigen::VectorXd feat = pooled_features(model, s.cloud);
    out << i << ',' << csv_field(poisoned.dataset.class_names[s.label]) << ',' << (s.poisoned ? 1 : 0);
    for (Eigen::Index f = 0; f < feat.size(); ++f) out << ',' << num(feat[f]);
    out << '\n';
  }
  write_text(csv, out.str());
  return poisoned.dataset.size();
}

RunReport cmd_run(const ExperimentConfig& config, const fs::path& out, const fs::path& results_csv) {
  const DatasetPair data = build_datasets(config);
  const TrainResult result = train_into(config, data.train, out);
  const RunReport report = evaluate(config, result.model, data.test);
  write_text(out / "report.json", report_to_json(report).dump(2) + "\n");
  const fs::path table = results_csv.empty() ? default_results_csv(out) : results_csv;
  upsert_results_row(table, report);
  return report;
}

}  // namespace pcbackdoor
