#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "pcbackdoor/error.hpp"
#include "pcbackdoor/experiment.hpp"

using namespace pcbackdoor;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pcbd_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.seed = 11;
  c.dataset.points = 64;
  c.dataset.train_per_class = 40;
  c.dataset.test_per_class = 4;
  c.train.epochs = 1;
  return c;
}

}  // namespace

TEST_CASE("gen-synthetic writes a reproducible corpus") {
  const fs::path a = temp_dir("gen_a");
  const fs::path b = temp_dir("gen_b");
  const ExperimentConfig c = small_config();
  CHECK(cmd_gen_synthetic(c, a) == 220);
  CHECK(cmd_gen_synthetic(c, b) == 220);

  const auto manifest = read_manifest(a / "manifest.csv");
  std::size_t train_files = 0;
  for (const ManifestEntry& e : manifest) {
    if (e.split == Split::Train) ++train_files;
    CHECK(fs::exists(a / e.path));
    CHECK(slurp(a / e.path) == slurp(b / e.path));
  }
  CHECK(train_files == 200);
  CHECK(slurp(a / "manifest.csv") == slurp(b / "manifest.csv"));

  // The written corpus loads back as a manifest dataset with the same clouds.
  ExperimentConfig m = c;
  m.dataset.source = DataSource::Manifest;
  m.dataset.manifest = (a / "manifest.csv").string();
  const DatasetPair from_files = build_datasets(m);
  const DatasetPair direct = build_datasets(c);
  REQUIRE(from_files.train.size() == direct.train.size());
  for (std::size_t i = 0; i < direct.train.size(); ++i) {
    CHECK(from_files.train.samples[i].label == direct.train.samples[i].label);
    // Loading re-normalizes, which may move the last bit.
    const PointCloud& x = from_files.train.samples[i].cloud;
    const PointCloud& y = direct.train.samples[i].cloud;
    REQUIRE(x.size() == y.size());
    double worst = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) worst = std::max(worst, (x[k] - y[k]).norm());
    CHECK(worst < 1e-12);
  }

  ExperimentConfig bad = c;
  bad.dataset.train_per_class = 0;
  CHECK_THROWS_AS(cmd_gen_synthetic(bad, a / "bad"), ConfigError);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("poison writes a manifest of the poisoned samples") {
  const fs::path dir = temp_dir("poison");
  const ExperimentConfig c = small_config();
  const PoisonSummary s = cmd_poison(c, dir);
  CHECK(s.records.size() == 20);
  REQUIRE(s.cd_x100.size() == 20);

  std::ifstream in(dir / "poison_manifest.json");
  const nlohmann::json j = nlohmann::json::parse(in);
  CHECK(j["trigger"] == "wlt");
  CHECK(j["poisoned_count"] == 20);
  CHECK(j["train_samples"] == 200);
  CHECK(j["target"] == "sphere");
  REQUIRE(j["poisoned"].size() == 20);
  for (std::size_t k = 0; k < 20; ++k) {
    const auto& e = j["poisoned"][k];
    CHECK(e["index"] == s.records[k].index);
    CHECK(e["original_label"] != "sphere");
    CHECK(e["cd_x100"].get<double>() == s.cd_x100[k]);
    CHECK(s.cd_x100[k] > 0.0);
    const fs::path p = dir / e["path"].get<std::string>();
    CHECK(fs::exists(p));
    CHECK(p.string().find("sphere") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("train, export and eval") {
  const fs::path dir = temp_dir("run");
  ExperimentConfig c = small_config();
  c.dataset.train_per_class = 4;
  c.train.batch_size = 8;
  c.poison.rate = 0.25;
  const TrainResult r = cmd_train(c, dir / "run");
  CHECK(r.log.size() == 1);
  CHECK(fs::exists(dir / "run" / "model.bin"));
  CHECK(lines_of(dir / "run" / "loss.csv").size() == 2);
  CHECK(load_config(dir / "run" / "config.yaml") == c);

  const std::size_t rows = cmd_export_features(c, dir / "run" / "model.bin", dir / "features.csv");
  CHECK(rows == 20);
  const auto lines = lines_of(dir / "features.csv");
  REQUIRE(lines.size() == 21);
  CHECK(lines[0].rfind("index,label,poisoned,f0,f1,", 0) == 0);
  std::size_t poisoned = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    CHECK(std::count(lines[i].begin(), lines[i].end(), ',') == 258);
    const auto first = lines[i].find(',');
    const auto second = lines[i].find(',', first + 1);
    if (lines[i].substr(second + 1, 1) == "1") {
      ++poisoned;
      CHECK(lines[i].substr(first + 1, second - first - 1) == "sphere");
    }
  }
  CHECK(poisoned == 5);

  const RunReport e1 = cmd_eval(c, dir / "run" / "model.bin", dir / "run");
  CHECK(e1.metrics.test_samples == 20);
  CHECK(e1.metrics.asr_samples == 16);
  CHECK(e1.run_id == config_hash(c));
  std::ifstream in(dir / "run" / "report.json");
  CHECK(report_from_json(nlohmann::json::parse(in)) == e1);
  CHECK(lines_of(dir / "results.csv").size() == 2);
  // Same run id replaces its row.
  cmd_eval(c, dir / "run" / "model.bin", dir / "run");
  CHECK(lines_of(dir / "results.csv").size() == 2);
  fs::remove_all(dir);
}

TEST_CASE("report json round trip and errors") {
  RunReport r;
  r.run_id = "abc";
  r.trigger = "ball";
  r.pipeline = "sor(k=30,remove=100)";
  r.inference_pipeline = "none";
  r.seed = 42;
  r.metrics.acc = 0.9;
  r.metrics.asr = 0.1 + 0.2;
  r.metrics.per_class_acc = {1.0, 0.8, 0.5};
  r.metrics.test_samples = 100;
  r.metrics.correct = 90;
  r.metrics.asr_samples = 80;
  r.metrics.asr_hits = 24;
  r.metrics.cd_x100 = 3.25;
  CHECK(report_from_json(nlohmann::json::parse(report_to_json(r).dump())) == r);

  r.metrics.per_class_acc = {1.0, std::nan("")};
  const RunReport back = report_from_json(nlohmann::json::parse(report_to_json(r).dump()));
  CHECK(std::isnan(back.metrics.per_class_acc[1]));

  nlohmann::json j = report_to_json(r);
  j.erase("asr");
  CHECK_THROWS_AS(report_from_json(j), ParseError);
  j = report_to_json(r);
  j["seed"] = "x";
  CHECK_THROWS_AS(report_from_json(j), ParseError);
}

TEST_CASE("results rows are upserted by run id") {
  const fs::path dir = temp_dir("results");
  const fs::path csv = dir / "results.csv";
  RunReport a;
  a.run_id = "a";
  a.trigger = "wlt";
  a.pipeline = "sor(k=30,remove=100),rotz(max=20)";
  RunReport b = a;
  b.run_id = "b";
  upsert_results_row(csv, a);
  upsert_results_row(csv, b);
  a.metrics.asr = 0.5;
  upsert_results_row(csv, a);
  const auto lines = lines_of(csv);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "run_id,trigger,pipeline,acc,asr,cd_x100,seed");
  CHECK(lines[1].rfind("b,", 0) == 0);
  CHECK(lines[2] == "a,wlt,\"sor(k=30,remove=100),rotz(max=20)\",0,0.5,0,0");
  fs::remove_all(dir);
}

TEST_CASE("a constant target predictor gives full attack success") {
  ExperimentConfig c = small_config();
  c.dataset.train_per_class = 1;
  const DatasetPair d = build_datasets(c);
  // Zero weights predict class 0, the target.
  const TinyModel zero = TinyModel::zeros(ModelShape{});
  const RunReport r = evaluate(c, zero, d.test);
  CHECK(r.metrics.asr == 1.0);
  CHECK(r.metrics.acc == doctest::Approx(0.2));
}
