#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "pcbackdoor/dataset.hpp"
#include "pcbackdoor/error.hpp"
#include "pcbackdoor/model.hpp"

using namespace pcbackdoor;

namespace {

ModelShape small_shape(std::size_t classes = 3) {
  ModelShape s;
  s.num_classes = classes;
  s.point_widths = {8, 12, 16};
  s.head_width = 10;
  return s;
}

PointCloud permuted(const PointCloud& c, Rng& rng) {
  std::vector<std::size_t> idx(c.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  std::vector<Vec3> pts;
  for (std::size_t i : idx) pts.push_back(c[i]);
  return PointCloud(pts);
}

}  // namespace

TEST_CASE("forward is invariant to point order") {
  Rng rng(60);
  const TinyModel m = TinyModel::initialize(ModelShape{}, rng);
  for (int t = 0; t < 5; ++t) {
    const PointCloud c = oracle::random_cloud(200, rng);
    const Eigen::VectorXd a = forward(m, c).logits;
    const Eigen::VectorXd b = forward(m, permuted(c, rng)).logits;
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("forward edge cases") {
  Rng rng(61);
  const PointCloud c = oracle::random_cloud(50, rng);
  const TinyModel z = TinyModel::zeros(small_shape());
  const ForwardResult r = forward(z, c);
  CHECK(r.logits.size() == 3);
  CHECK(r.logits.isZero());
  // All-equal pre-activations: the lowest index wins.
  for (Eigen::Index a : r.cache.argmax) CHECK(a == 0);
  CHECK(predict(z, c) == 0);

  const TinyModel m = TinyModel::initialize(small_shape(), rng);
  std::vector<Vec3> doubled(c.begin(), c.end());
  doubled.insert(doubled.end(), c.begin(), c.end());
  CHECK((forward(m, PointCloud(doubled)).logits - forward(m, c).logits).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("softmax and cross entropy") {
  Eigen::VectorXd logits(3);
  logits << 1.0, 2.0, 3.0;
  const Eigen::VectorXd p = softmax(logits);
  CHECK(p.sum() == doctest::Approx(1.0));
  CHECK(cross_entropy(logits, 2) == doctest::Approx(-std::log(p(2))));
  Eigen::VectorXd big(2);
  big << 1000.0, 0.0;
  CHECK(std::isfinite(cross_entropy(big, 1)));
  CHECK(cross_entropy(big, 1) == doctest::Approx(1000.0));
}

TEST_CASE("backward matches finite differences") {
  Rng rng(62);
  TinyModel m = TinyModel::initialize(small_shape(), rng);
  // Nonzero biases so every bias gradient is exercised.
  for (Dense& d : m.mutable_params().layers)
    for (Eigen::Index i = 0; i < d.bias.size(); ++i) d.bias(i) = rng.uniform(-0.1, 0.1);
  const PointCloud c = oracle::random_cloud(20, rng);
  const std::size_t label = 1;

  const ForwardResult f = forward(m, c);
  const BackwardResult g = backward(m, f.cache, label);
  CHECK(g.loss == doctest::Approx(cross_entropy(f.logits, label)));
  Eigen::VectorXd onehot = Eigen::VectorXd::Zero(3);
  onehot(label) = 1.0;
  CHECK((g.dlogits - (softmax(f.logits) - onehot)).cwiseAbs().maxCoeff() < 1e-15);

  const double h = 1e-6;
  auto loss_at = [&](std::size_t layer, bool bias, Eigen::Index i, Eigen::Index j, double delta) {
    TinyModel p = m;
    Dense& d = p.mutable_params().layers[layer];
    (bias ? d.bias(i) : d.weight(i, j)) += delta;
    return cross_entropy(forward(p, c).logits, label);
  };
  int checked = 0;
  for (std::size_t layer = 0; layer < Parameters::kLayers; ++layer) {
    const Dense& d = m.params().layers[layer];
    const Dense& gd = g.grads.layers[layer];
    for (int t = 0; t < 12; ++t) {
      const Eigen::Index i = Eigen::Index(rng.index(std::size_t(d.weight.rows())));
      const Eigen::Index j = Eigen::Index(rng.index(std::size_t(d.weight.cols())));
      const double num = (loss_at(layer, false, i, j, h) - loss_at(layer, false, i, j, -h)) / (2 * h);
      CHECK(gd.weight(i, j) == doctest::Approx(num).epsilon(1e-5).scale(1e-8));
      const double numb = (loss_at(layer, true, j, 0, h) - loss_at(layer, true, j, 0, -h)) / (2 * h);
      CHECK(gd.bias(j) == doctest::Approx(numb).epsilon(1e-5).scale(1e-8));
      ++checked;
    }
  }
  CHECK(checked == 60);
}

TEST_CASE("stale caches are rejected") {
  Rng rng(63);
  TinyModel m = TinyModel::initialize(small_shape(), rng);
  const ForwardResult f = forward(m, oracle::random_cloud(10, rng));
  m.mutable_params().layers[0].bias(0) += 1.0;
  CHECK_THROWS_AS(backward(m, f.cache, 0), InvalidState);
  const TinyModel other = TinyModel::initialize(small_shape(), rng);
  CHECK_THROWS_AS(backward(other, f.cache, 0), InvalidState);
}

TEST_CASE("adam") {
  Rng rng(64);
  TinyModel m = TinyModel::initialize(small_shape(), rng);
  const TinyModel before = m;

  AdamState zero_state = AdamState::for_model(m, 1e-3);
  adam_step(m, Parameters::zeros(m.shape()), zero_state);
  CHECK(m.params() == before.params());

  // The first bias-corrected step moves every parameter by about lr * sign(g).
  Parameters g = Parameters::zeros(m.shape());
  for (Dense& d : g.layers) {
    d.weight.setConstant(0.3);
    d.bias.setConstant(-2.0);
  }
  AdamState state = AdamState::for_model(m, 1e-3);
  adam_step(m, g, state);
  CHECK(state.step == 1);
  for (std::size_t l = 0; l < Parameters::kLayers; ++l) {
    const Eigen::MatrixXd dw = m.params().layers[l].weight - before.params().layers[l].weight;
    const Eigen::VectorXd db = m.params().layers[l].bias - before.params().layers[l].bias;
    CHECK((dw.array() + 1e-3).abs().maxCoeff() < 1e-8);
    CHECK((db.array() - 1e-3).abs().maxCoeff() < 1e-8);
  }
  CHECK_THROWS_AS(adam_step(m, Parameters::zeros(small_shape(4)), state), InvalidArgument);
}

namespace {

LabeledDataset toy_two_class(std::uint64_t seed) {
  SyntheticOptions opt;
  opt.classes = {ShapeClass::Sphere, ShapeClass::Cube};
  opt.per_class = 10;
  opt.points = 64;
  return generate_synthetic_corpus(opt, seed, Split::Train);
}

}  // namespace

TEST_CASE("training fits a separable toy problem") {
  const LabeledDataset d = toy_two_class(65);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 8;
  cfg.lr = 3e-3;
  cfg.seed = 4;
  const TrainResult r = train(d, cfg, small_shape(2));
  REQUIRE(r.log.size() == 50);
  CHECK(r.log.back().loss < 0.1);
  CHECK(r.log.back().loss < r.log.front().loss);
  CHECK(r.log.back().train_acc == 1.0);

  const TrainResult again = train(d, cfg, small_shape(2));
  CHECK(again.model.params() == r.model.params());
  CHECK(again.log == r.log);

  cfg.epochs = 0;
  CHECK_THROWS_AS(train(d, cfg), InvalidArgument);
  cfg.epochs = 1;
  cfg.lr = 0.0;
  CHECK_THROWS_AS(train(d, cfg), InvalidArgument);
}

TEST_CASE("training with a pipeline is reproducible") {
  const LabeledDataset d = toy_two_class(66);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 5;
  cfg.seed = 9;
  cfg.pipeline = parse_pipeline("sor(k=5,remove=4),rotz(max=20),jitter");
  const TrainResult a = train(d, cfg, small_shape(2));
  const TrainResult b = train(d, cfg, small_shape(2));
  CHECK(a.model.params() == b.model.params());
  cfg.seed = 10;
  CHECK_FALSE(train(d, cfg, small_shape(2)).model.params() == a.model.params());
}

TEST_CASE("checkpoint round trip") {
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "pcbd_test_ckpt";
  std::filesystem::create_directories(dir);
  Rng rng(67);
  const TinyModel m = TinyModel::initialize(ModelShape{}, rng);
  AdamState st = AdamState::for_model(m, 2e-3);
  st.step = 7;
  st.m.layers[2].weight(3, 4) = 0.25;
  save_checkpoint(dir / "a.bin", m, &st);
  std::optional<AdamState> loaded_state;
  const TinyModel loaded = load_checkpoint(dir / "a.bin", &loaded_state);
  CHECK(loaded.params() == m.params());
  CHECK(loaded.shape() == m.shape());
  REQUIRE(loaded_state.has_value());
  CHECK(*loaded_state == st);

  const PointCloud c = oracle::random_cloud(100, rng);
  CHECK(forward(loaded, c).logits == forward(m, c).logits);

  save_checkpoint(dir / "b.bin", m);
  std::optional<AdamState> none;
  load_checkpoint(dir / "b.bin", &none);
  CHECK_FALSE(none.has_value());

  {
    std::ofstream bad(dir / "c.bin", std::ios::binary);
    bad << "NOTACKPT";
  }
  CHECK_THROWS(load_checkpoint(dir / "c.bin"));
  CHECK_THROWS(load_checkpoint(dir / "missing.bin"));
  std::filesystem::remove_all(dir);
}
