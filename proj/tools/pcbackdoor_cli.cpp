// Command line front end: generate data, poison, train, evaluate, export.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pcbackdoor/config.hpp"
#include "pcbackdoor/error.hpp"
#include "pcbackdoor/experiment.hpp"

namespace fs = std::filesystem;
using namespace pcbackdoor;

namespace {

constexpr int kRuntimeError = 1;
constexpr int kConfigError = 2;

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string trigger;
  std::optional<std::string> pipeline;
  std::optional<std::string> eval_pipeline;
  std::optional<double> rate;
  std::optional<std::size_t> epochs;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "Experiment config (YAML); defaults apply when omitted");
  cmd->add_option("--seed", o.seed, "Override the global seed");
  cmd->add_option("--out", o.out, "Output directory (or file for export-features/index)");
  cmd->add_option("--trigger", o.trigger, "Override the trigger: wlt, ball or rotation");
  cmd->add_option("--pipeline", o.pipeline, "Training pipeline, e.g. \"sor(k=30,remove=50),rotz(max=20)\" or none");
  cmd->add_option("--eval-pipeline", o.eval_pipeline, "Inference pipeline applied to triggered test samples");
  cmd->add_option("--rate", o.rate, "Override the poison rate");
  cmd->add_option("--epochs", o.epochs, "Override the number of training epochs");
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.output_dir = o.out;
  if (!o.trigger.empty()) c.poison.trigger = parse_trigger_kind(o.trigger);
  if (o.pipeline) c.train.pipeline = parse_pipeline(*o.pipeline);
  if (o.eval_pipeline) c.inference_pipeline = parse_pipeline(*o.eval_pipeline);
  if (o.rate) c.poison.rate = *o.rate;
  if (o.epochs) c.train.epochs = *o.epochs;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point cloud backdoor experiments"};
  app.require_subcommand(1);
  Overrides o;
  std::string checkpoint;
  std::string data_dir;
  std::string results;

  auto* cmd_default = app.add_subcommand("default-config", "Print (or write with --out) the default config");
  cmd_default->add_option("--out", o.out, "Write to this file instead of stdout");
  auto* cmd_gen = app.add_subcommand("gen-synthetic", "Write the synthetic corpus and its manifest");
  auto* cmd_index = app.add_subcommand("index", "Build a manifest for a class-per-directory corpus");
  cmd_index->add_option("--data", data_dir, "Corpus root")->required();
  cmd_index->add_option("--out", o.out, "Manifest path (default <data>/manifest.csv)");
  auto* cmd_poison_ = app.add_subcommand("poison", "Write the poisoned training set and poison manifest");
  auto* cmd_train_ = app.add_subcommand("train", "Train on the poisoned set; writes model.bin and loss.csv");
  auto* cmd_eval_ = app.add_subcommand("eval", "Evaluate a checkpoint; writes report.json and a results row");
  cmd_eval_->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  cmd_eval_->add_option("--results", results, "Results CSV (default <out>/../results.csv)");
  auto* cmd_export = app.add_subcommand("export-features", "Write pooled features of the training set as CSV");
  cmd_export->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  auto* cmd_run_ = app.add_subcommand("run", "Train and evaluate into one directory");
  cmd_run_->add_option("--results", results, "Results CSV (default <out>/../results.csv)");
  for (auto* cmd : {cmd_gen, cmd_poison_, cmd_train_, cmd_eval_, cmd_export, cmd_run_}) add_common(cmd, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (cmd_default->parsed()) {
      const std::string text = serialize_config(ExperimentConfig{});
      if (o.out.empty()) {
        std::cout << text;
      } else {
        save_config(o.out, ExperimentConfig{});
      }
      return 0;
    }
    if (cmd_index->parsed()) {
      const fs::path out = o.out.empty() ? fs::path(data_dir) / "manifest.csv" : fs::path(o.out);
      const auto entries = index_directory(data_dir);
      write_manifest(out, entries);
      std::cout << "indexed " << entries.size() << " files into " << out.string() << '\n';
      return 0;
    }

    const ExperimentConfig config = resolve(o);
    const fs::path out = config.output_dir;
    if (cmd_gen->parsed()) {
      const std::size_t n = cmd_gen_synthetic(config, out);
      std::cout << "wrote " << n << " clouds to " << out.string() << '\n';
    } else if (cmd_poison_->parsed()) {
      const PoisonSummary s = cmd_poison(config, out);
      std::cout << "poisoned " << s.records.size() << " samples into " << out.string() << '\n';
    } else if (cmd_train_->parsed()) {
      const TrainResult r = cmd_train(config, out);
      std::cout << "trained " << r.log.size() << " epochs, final loss " << r.log.back().loss << '\n';
    } else if (cmd_eval_->parsed()) {
      const RunReport r = cmd_eval(config, checkpoint, out, results);
      std::cout << "acc " << r.metrics.acc << " asr " << r.metrics.asr << " cd_x100 " << r.metrics.cd_x100 << '\n';
    } else if (cmd_export->parsed()) {
      const fs::path csv = o.out.empty() ? fs::path(config.output_dir) / "features.csv" : fs::path(o.out);
      const std::size_t n = cmd_export_features(config, checkpoint, csv);
      std::cout << "exported " << n << " rows to " << csv.string() << '\n';
    } else if (cmd_run_->parsed()) {
      const RunReport r = cmd_run(config, out, results);
      std::cout << "run " << r.run_id << ": acc " << r.metrics.acc << " asr " << r.metrics.asr << " cd_x100 "
                << r.metrics.cd_x100 << '\n';
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}
