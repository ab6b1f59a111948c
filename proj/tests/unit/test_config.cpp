#include <filesystem>

#include "doctest.h"
#include "pcbackdoor/config.hpp"
#include "pcbackdoor/error.hpp"

using namespace pcbackdoor;

TEST_CASE("default config round trips through text") {
  const ExperimentConfig c;
  CHECK(parse_config(serialize_config(c)) == c);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("non-default config round trips") {
  ExperimentConfig c;
  c.seed = 123456789012345ULL;
  c.output_dir = "runs/x y";
  c.dataset.points = 256;
  c.dataset.classes = {"cube", "sphere"};
  c.dataset.noise_sigma = 0.1 + 0.2;  // not exactly representable in short decimal
  c.poison.trigger = TriggerKind::Ball;
  c.poison.rate = 0.07;
  c.poison.target = 1;
  c.poison.wlt.alpha_deg = 7.3;
  c.poison.wlt.renormalize = false;
  c.poison.ball.center = Vec3(0.1, -0.2, 1.0 / 3.0);
  c.poison.rotation.angle_z_deg = 12.5;
  c.train.epochs = 3;
  c.train.pipeline = parse_pipeline("sor(k=30,remove=50),rotz(max=20,reseed=0)");
  c.inference_pipeline = parse_pipeline("sor(k=30,remove=50)");
  const ExperimentConfig back = parse_config(serialize_config(c));
  CHECK(back == c);
  CHECK(serialize_config(back) == serialize_config(c));
}

TEST_CASE("partial configs keep defaults") {
  const ExperimentConfig c = parse_config("seed: 5\ntrain:\n  epochs: 2\n  pipeline: \"rotz(max=10)\"\n");
  CHECK(c.seed == 5);
  CHECK(c.train.epochs == 2);
  CHECK(c.train.batch_size == 32);
  CHECK(c.train.pipeline.steps.size() == 1);
  CHECK(c.dataset == DatasetConfig{});
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_config("sed: 5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train:\n  epochz: 5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("poison:\n  trigger: laser\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train:\n  pipeline: \"warp\"\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed: [1, 2\n"), ConfigError);

  ExperimentConfig c;
  c.poison.rate = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.poison.target = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.train.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.dataset.train_per_class = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config hash ignores the output directory") {
  ExperimentConfig a;
  ExperimentConfig b;
  b.output_dir = "elsewhere";
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.seed = 1;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("sub-seeds are distinct and settings convert to radians") {
  const ExperimentConfig c;
  CHECK(c.data_seed() != c.poison_seed());
  CHECK(c.train_seed() != c.eval_seed());
  CHECK(c.poison.wlt.params().alpha == deg_to_rad(5.0));
  CHECK(c.poison.rotation.params().angle_z == deg_to_rad(10.0));
  CHECK(std::holds_alternative<WltParams>(c.trigger()));
}

TEST_CASE("shipped configs load and validate") {
  const std::filesystem::path dir = std::filesystem::path(PCBD_SOURCE_DIR) / "configs";
  const ExperimentConfig def = load_config(dir / "default.yaml");
  CHECK(def == ExperimentConfig{});
  const ExperimentConfig desk = load_config(dir / "desk.yaml");
  CHECK(desk.dataset.points == 512);
  const ExperimentConfig defended = load_config(dir / "defended.yaml");
  CHECK(format_pipeline(defended.train.pipeline) == "sor(k=30,remove=50),rotz(max=20)");
  CHECK(format_pipeline(defended.inference_pipeline) == "sor(k=30,remove=50)");
  CHECK_NOTHROW(defended.validate());
}
