#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "pcbackdoor/dataset.hpp"
#include "pcbackdoor/geometry.hpp"
#include "pcbackdoor/metrics.hpp"
#include "pcbackdoor/preprocess.hpp"
#include "pcbackdoor/rng.hpp"

namespace pcbackdoor {

/// Fully connected layer: y = W^T x + b with W stored in_dim x out_dim.
struct Dense {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;

  friend bool operator==(const Dense& a, const Dense& b) {
    return a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols() &&
           a.weight == b.weight && a.bias.size() == b.bias.size() && a.bias == b.bias;
  }
};

/// Shared per-point MLP (3 -> 64 -> 128 -> 256, ReLU), max-pool over points,
/// head MLP (256 -> 128 -> C, ReLU then linear).
struct ModelShape {
  std::size_t num_classes = 5;
  std::array<std::size_t, 3> point_widths{64, 128, 256};
  std::size_t head_width = 128;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Layers 0..2 are the per-point MLP, 3..4 the head.
struct Parameters {
  static constexpr std::size_t kLayers = 5;
  std::array<Dense, kLayers> layers;

  static Parameters zeros(const ModelShape& shape);
  static Parameters zeros_like(const Parameters& other);
  std::size_t count() const;
  bool same_shape(const Parameters& other) const;
  Parameters& operator+=(const Parameters& other);
  Parameters& operator*=(double factor);

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

class TinyModel {
 public:
  /// Glorot-uniform weights, zero biases.
  static TinyModel initialize(const ModelShape& shape, Rng& rng);
  static TinyModel zeros(const ModelShape& shape);
  /// Takes ownership of explicit parameters; throws InvalidArgument on inconsistent shapes.
  static TinyModel from_parameters(Parameters params);

  const ModelShape& shape() const noexcept { return shape_; }
  std::size_t num_classes() const noexcept { return shape_.num_classes; }
  const Parameters& params() const noexcept { return params_; }
  /// Mutable access; invalidates forward caches taken before the call.
  Parameters& mutable_params() noexcept {
    ++generation_;
    return params_;
  }
  std::uint64_t generation() const noexcept { return generation_; }

 private:
  TinyModel(ModelShape shape, Parameters params) : shape_(shape), params_(std::move(params)) {}

  ModelShape shape_;
  Parameters params_;
  std::uint64_t generation_ = 0;
};

/// Activations kept by forward() for backward().
struct ForwardCache {
  const TinyModel* model = nullptr;
  std::uint64_t generation = 0;
  Eigen::MatrixXd input;  // K x 3
  Eigen::MatrixXd z1, z2;  // pre-activations of per-point layers 1 and 2
  Eigen::MatrixXd h1, h2;
  Eigen::VectorXd z3_max;                 // per-channel max of layer-3 pre-activation
  std::vector<Eigen::Index> argmax;       // point achieving it (lowest index on ties)
  Eigen::VectorXd pooled;                 // relu(z3_max)
  Eigen::VectorXd z4, h4;
  Eigen::VectorXd logits;
};

struct ForwardResult {
  Eigen::VectorXd logits;
  ForwardCache cache;
};

/// Throws InvalidState when the model's layer shapes are inconsistent.
ForwardResult forward(const TinyModel& model, const PointCloud& cloud);
Eigen::VectorXd pooled_features(const TinyModel& model, const PointCloud& cloud);
std::size_t predict(const TinyModel& model, const PointCloud& cloud);
Predictor as_predictor(const TinyModel& model);

/// Numerically stable softmax cross-entropy of one sample.
double cross_entropy(const Eigen::VectorXd& logits, std::size_t label);
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

struct BackwardResult {
  double loss = 0.0;
  Eigen::VectorXd dlogits;
  Parameters grads;
};

/// Exact gradient of the cross-entropy loss. Throws InvalidState when `cache`
/// was produced by another model or before the parameters last changed.
BackwardResult backward(const TinyModel& model, const ForwardCache& cache, std::size_t label);

struct AdamState {
  Parameters m;
  Parameters v;
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_model(const TinyModel& model, double lr = 1e-3);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Bias-corrected Adam update. Throws InvalidArgument on shape mismatch.
void adam_step(TinyModel& model, const Parameters& grads, AdamState& state);

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  PipelineSpec pipeline;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch;
  double loss;
  double train_acc;
  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct TrainResult {
  TinyModel model;
  AdamState optimizer;
  std::vector<EpochLog> log;
};

/// Mini-batch Adam on mean cross-entropy. Each epoch reshuffles and re-runs
/// the pipeline on every sample with streams keyed by (seed, sample, epoch).
TrainResult train(const LabeledDataset& dataset, const TrainConfig& config,
                  const ModelShape& shape = {});

// Checkpoint: "PCBDCKPT", u32 version, u32 layer count, per layer u32 rows,
// u32 cols, rows*cols f64 row-major weights, cols f64 bias; u32 optimizer flag
// then optional Adam state. All little-endian.
void save_checkpoint(const std::filesystem::path& path, const TinyModel& model,
                     const AdamState* optimizer = nullptr);
TinyModel load_checkpoint(const std::filesystem::path& path, std::optional<AdamState>* optimizer = nullptr);

/// CSV `epoch,loss,train_acc`.
void write_loss_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

}  // namespace pcbackdoor
