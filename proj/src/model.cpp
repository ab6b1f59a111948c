#include "pcbackdoor/model.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "pcbackdoor/error.hpp"

namespace pcbackdoor {

namespace {

std::array<std::pair<std::size_t, std::size_t>, Parameters::kLayers> layer_dims(const ModelShape& s) {
  return {{{3, s.point_widths[0]},
           {s.point_widths[0], s.point_widths[1]},
           {s.point_widths[1], s.point_widths[2]},
           {s.point_widths[2], s.head_width},
           {s.head_width, s.num_classes}}};
}

Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

}  // namespace

// ---------------------------------------------------------------------------
// Parameters

Parameters Parameters::zeros(const ModelShape& shape) {
  Parameters p;
  const auto dims = layer_dims(shape);
  for (std::size_t l = 0; l < kLayers; ++l) {
    p.layers[l].weight = Eigen::MatrixXd::Zero(idx(dims[l].first), idx(dims[l].second));
    p.layers[l].bias = Eigen::VectorXd::Zero(idx(dims[l].second));
  }
  return p;
}

Parameters Parameters::zeros_like(const Parameters& other) {
  Parameters p;
  for (std::size_t l = 0; l < kLayers; ++l) {
    p.layers[l].weight = Eigen::MatrixXd::Zero(other.layers[l].weight.rows(), other.layers[l].weight.cols());
    p.layers[l].bias = Eigen::VectorXd::Zero(other.layers[l].bias.size());
  }
  return p;
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for (const Dense& d : layers) n += static_cast<std::size_t>(d.weight.size() + d.bias.size());
  return n;
}

bool Parameters::same_shape(const Parameters& other) const {
  for (std::size_t l = 0; l < kLayers; ++l) {
    if (layers[l].weight.rows() != other.layers[l].weight.rows() ||
        layers[l].weight.cols() != other.layers[l].weight.cols() ||
        layers[l].bias.size() != other.layers[l].bias.size()) {
      return false;
    }
  }
  return true;
}

Parameters& Parameters::operator+=(const Parameters& other) {
  for (std::size_t l = 0; l < kLayers; ++l) {
    layers[l].weight += other.layers[l].weight;
    layers[l].bias += other.layers[l].bias;
  }
  return *this;
}

Parameters& Parameters::operator*=(double factor) {
  for (Dense& d : layers) {
    d.weight *= factor;
    d.bias *= factor;
  }
  return *this;
}

// ---------------------------------------------------------------------------
// Model

TinyModel TinyModel::initialize(const ModelShape& shape, Rng& rng) {
  Parameters p = Parameters::zeros(shape);
  for (Dense& d : p.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(d.weight.rows() + d.weight.cols()));
    // Column-major fill order is part of the reproducibility contract.
    for (Eigen::Index c = 0; c < d.weight.cols(); ++c) {
      for (Eigen::Index r = 0; r < d.weight.rows(); ++r) d.weight(r, c) = rng.uniform(-limit, limit);
    }
  }
  return TinyModel(shape, std::move(p));
}

TinyModel TinyModel::zeros(const ModelShape& shape) { return TinyModel(shape, Parameters::zeros(shape)); }

TinyModel TinyModel::from_parameters(Parameters params) {
  ModelShape shape;
  shape.point_widths = {static_cast<std::size_t>(params.layers[0].weight.cols()),
                        static_cast<std::size_t>(params.layers[1].weight.cols()),
                        static_cast<std::size_t>(params.layers[2].weight.cols())};
  shape.head_width = static_cast<std::size_t>(params.layers[3].weight.cols());
  shape.num_classes = static_cast<std::size_t>(params.layers[4].weight.cols());
  if (!params.same_shape(Parameters::zeros(shape)) || shape.num_classes == 0) {
    throw InvalidArgument("inconsistent layer shapes");
  }
  for (const Dense& d : params.layers) {
    if (!d.weight.allFinite() || !d.bias.allFinite()) throw InvalidArgument("non-finite model weight");
  }
  return TinyModel(shape, std::move(params));
}

ForwardResult forward(const TinyModel& model, const PointCloud& cloud) {
  const auto& L = model.params().layers;
  if (!model.params().same_shape(Parameters::zeros(model.shape()))) {
    throw InvalidState("model layer shapes do not match its declared shape");
  }
  ForwardCache c;
  c.model = &model;
  c.generation = model.generation();
  c.input = cloud.to_matrix();

  c.z1 = (c.input * L[0].weight).rowwise() + L[0].bias.transpose();
  c.h1 = c.z1.cwiseMax(0.0);
  c.z2 = (c.h1 * L[1].weight).rowwise() + L[1].bias.transpose();
  c.h2 = c.z2.cwiseMax(0.0);
  const Eigen::MatrixXd z3 = (c.h2 * L[2].weight).rowwise() + L[2].bias.transpose();

  // max(relu(z)) == relu(max(z)); route through the first maximal point.
  const Eigen::Index channels = z3.cols();
  c.z3_max.resize(channels);
  c.argmax.resize(static_cast<std::size_t>(channels));
  for (Eigen::Index ch = 0; ch < channels; ++ch) {
    Eigen::Index best = 0;
    double best_v = z3(0, ch);
    for (Eigen::Index p = 1; p < z3.rows(); ++p) {
      if (z3(p, ch) > best_v) {
        best_v = z3(p, ch);
        best = p;
      }
    }
    c.z3_max[ch] = best_v;
    c.argmax[static_cast<std::size_t>(ch)] = best;
  }
  c.pooled = c.z3_max.cwiseMax(0.0);
  c.z4 = L[3].weight.transpose() * c.pooled + L[3].bias;
  c.h4 = c.z4.cwiseMax(0.0);
  c.logits = L[4].weight.transpose() * c.h4 + L[4].bias;
  Eigen::VectorXd logits = c.logits;
  return {std::move(logits), std::move(c)};
}

Eigen::VectorXd pooled_features(const TinyModel& model, const PointCloud& cloud) {
  return forward(model, cloud).cache.pooled;
}

std::size_t predict(const TinyModel& model, const PointCloud& cloud) {
  const Eigen::VectorXd logits = forward(model, cloud).logits;
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<std::size_t>(best);
}

Predictor as_predictor(const TinyModel& model) {
  return [&model](const PointCloud& cloud) { return predict(model, cloud); };
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

double cross_entropy(const Eigen::VectorXd& logits, std::size_t label) {
  if (label >= static_cast<std::size_t>(logits.size())) throw InvalidArgument("label out of range");
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return lse - logits[idx(label)];
}

BackwardResult backward(const TinyModel& model, const ForwardCache& c, std::size_t label) {
  if (c.model != &model || c.generation != model.generation()) {
    throw InvalidState("forward cache is stale or belongs to another model");
  }
  if (label >= model.num_classes()) throw InvalidArgument("label out of range");
  const auto& L = model.params().layers;

  BackwardResult r;
  r.grads = Parameters::zeros_like(model.params());
  auto& G = r.grads.layers;
  r.loss = cross_entropy(c.logits, label);
  r.dlogits = softmax(c.logits);
  r.dlogits[idx(label)] -= 1.0;

  // Head.
  G[4].weight = c.h4 * r.dlogits.transpose();
  G[4].bias = r.dlogits;
  const Eigen::VectorXd dz4 = (L[4].weight * r.dlogits).cwiseProduct((c.z4.array() > 0.0).cast<double>().matrix());
  G[3].weight = c.pooled * dz4.transpose();
  G[3].bias = dz4;
  const Eigen::VectorXd dpooled = L[3].weight * dz4;

  // Max-pool: only the argmax point of each active channel receives gradient,
  // so the per-point backward pass runs on that compact set of rows.
  std::vector<Eigen::Index> rows;
  for (Eigen::Index ch = 0; ch < dpooled.size(); ++ch) {
    if (c.z3_max[ch] > 0.0) rows.push_back(c.argmax[static_cast<std::size_t>(ch)]);
  }
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  if (rows.empty()) return r;

  const auto n = idx(rows.size());
  auto pos = [&](Eigen::Index row) {
    return static_cast<Eigen::Index>(std::lower_bound(rows.begin(), rows.end(), row) - rows.begin());
  };
  Eigen::MatrixXd dh2 = Eigen::MatrixXd::Zero(n, L[2].weight.rows());
  for (Eigen::Index ch = 0; ch < dpooled.size(); ++ch) {
    if (!(c.z3_max[ch] > 0.0)) continue;
    const double d = dpooled[ch];
    const Eigen::Index p = c.argmax[static_cast<std::size_t>(ch)];
    G[2].weight.col(ch) = d * c.h2.row(p).transpose();
    G[2].bias[ch] = d;
    dh2.row(pos(p)) += d * L[2].weight.col(ch).transpose();
  }

  Eigen::MatrixXd z2(n, c.z2.cols()), h1(n, c.h1.cols()), z1(n, c.z1.cols()), x(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index p = rows[static_cast<std::size_t>(i)];
    z2.row(i) = c.z2.row(p);
    h1.row(i) = c.h1.row(p);
    z1.row(i) = c.z1.row(p);
    x.row(i) = c.input.row(p);
  }
  const Eigen::MatrixXd dz2 = dh2.cwiseProduct((z2.array() > 0.0).cast<double>().matrix());
  G[1].weight = h1.transpose() * dz2;
  G[1].bias = dz2.colwise().sum().transpose();
  const Eigen::MatrixXd dz1 =
      (dz2 * L[1].weight.transpose()).cwiseProduct((z1.array() > 0.0).cast<double>().matrix());
  G[0].weight = x.transpose() * dz1;
  G[0].bias = dz1.colwise().sum().transpose();
  return r;
}

// ---------------------------------------------------------------------------
// Adam

AdamState AdamState::for_model(const TinyModel& model, double lr) {
  AdamState s;
  s.m = Parameters::zeros_like(model.params());
  s.v = Parameters::zeros_like(model.params());
  s.lr = lr;
  return s;
}

void adam_step(TinyModel& model, const Parameters& grads, AdamState& state) {
  if (!grads.same_shape(model.params()) || !state.m.same_shape(model.params()) ||
      !state.v.same_shape(model.params())) {
    throw InvalidArgument("adam_step: gradient or moment shapes do not match the model");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto& params = model.mutable_params();
  auto update = [&](auto& w, const auto& g, auto& m, auto& v) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    w.array() -= state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  };
  for (std::size_t l = 0; l < Parameters::kLayers; ++l) {
    update(params.layers[l].weight, grads.layers[l].weight, state.m.layers[l].weight, state.v.layers[l].weight);
    update(params.layers[l].bias, grads.layers[l].bias, state.m.layers[l].bias, state.v.layers[l].bias);
  }
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("train: epochs must be at least 1");
  if (batch_size < 1) throw InvalidArgument("train: batch size must be at least 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidArgument("train: learning rate must be positive");
  pipeline.validate();
}

TrainResult train(const LabeledDataset& dataset, const TrainConfig& config, const ModelShape& shape_in) {
  config.validate();
  if (dataset.size() == 0) throw InvalidArgument("train: empty dataset");
  dataset.validate();
  ModelShape shape = shape_in;
  shape.num_classes = dataset.num_classes();

  Rng init_rng = Rng::derive(config.seed, {10});
  TrainResult result{TinyModel::initialize(shape, init_rng), {}, {}};
  TinyModel& model = result.model;
  result.optimizer = AdamState::for_model(model, config.lr);
  const std::uint64_t pipeline_seed = mix64(config.seed ^ 0x5bd1e995ULL);

  // Leading deterministic steps (SOR) give the same output every epoch.
  std::size_t fixed_prefix = 0;
  while (fixed_prefix < config.pipeline.steps.size() &&
         step_is_deterministic(config.pipeline.steps[fixed_prefix].kind)) {
    ++fixed_prefix;
  }
  std::vector<PointCloud> base;
  base.reserve(dataset.size());
  for (const Sample& s : dataset.samples) {
    PointCloud cloud = s.cloud;
    for (std::size_t i = 0; i < fixed_prefix; ++i) {
      Rng unused(0);
      cloud = apply_step(cloud, config.pipeline.steps[i].kind, unused);
    }
    base.push_back(std::move(cloud));
  }

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle = Rng::derive(config.seed, {11, epoch});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.index(i))]);
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Parameters grads = Parameters::zeros_like(model.params());
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t id = order[b];
        PointCloud cloud = base[id];
        for (std::size_t i = fixed_prefix; i < config.pipeline.steps.size(); ++i) {
          const StepSpec& step = config.pipeline.steps[i];
          Rng step_rng = Rng::derive(pipeline_seed, {id, step.reseed_per_epoch ? epoch + 1 : 0, i});
          cloud = apply_step(cloud, step.kind, step_rng);
        }
        const auto fwd = forward(model, cloud);
        auto bwd = backward(model, fwd.cache, dataset.samples[id].label);
        loss_sum += bwd.loss;
        Eigen::Index arg = 0;
        fwd.logits.maxCoeff(&arg);
        correct += static_cast<std::size_t>(arg) == dataset.samples[id].label;
        grads += bwd.grads;
      }
      grads *= 1.0 / static_cast<double>(end - start);
      adam_step(model, grads, result.optimizer);
    }
    result.log.push_back({epoch + 1, loss_sum / static_cast<double>(dataset.size()),
                          static_cast<double>(correct) / static_cast<double>(dataset.size())});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'P', 'C', 'B', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class LeWriter {
 public:
  explicit LeWriter(std::ostream& out) : out_(out) {}
  void u32(std::uint32_t v) { bytes(v, 4); }
  void u64(std::uint64_t v) { bytes(v, 8); }
  void f64(double v) { bytes(std::bit_cast<std::uint64_t>(v), 8); }

 private:
  void bytes(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::ostream& out_;
};

class LeReader {
 public:
  LeReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  double f64() { return std::bit_cast<double>(bytes(8)); }

 private:
  std::uint64_t bytes(int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      const int c = in_.get();
      if (c == std::char_traits<char>::eof()) throw IoError(source_ + ": truncated checkpoint");
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
  }
  std::istream& in_;
  std::string source_;
};

void write_values(LeWriter& w, const Dense& d) {
  for (Eigen::Index r = 0; r < d.weight.rows(); ++r)
    for (Eigen::Index c = 0; c < d.weight.cols(); ++c) w.f64(d.weight(r, c));
  for (Eigen::Index c = 0; c < d.bias.size(); ++c) w.f64(d.bias[c]);
}

void read_values(LeReader& rd, Dense& d) {
  for (Eigen::Index r = 0; r < d.weight.rows(); ++r)
    for (Eigen::Index c = 0; c < d.weight.cols(); ++c) d.weight(r, c) = rd.f64();
  for (Eigen::Index c = 0; c < d.bias.size(); ++c) d.bias[c] = rd.f64();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TinyModel& model, const AdamState* optimizer) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic, sizeof kMagic);
  LeWriter w(out);
  w.u32(kVersion);
  w.u32(Parameters::kLayers);
  for (const Dense& d : model.params().layers) {
    w.u32(static_cast<std::uint32_t>(d.weight.rows()));
    w.u32(static_cast<std::uint32_t>(d.weight.cols()));
    write_values(w, d);
  }
  w.u32(optimizer ? 1 : 0);
  if (optimizer) {
    w.u64(optimizer->step);
    w.f64(optimizer->lr);
    w.f64(optimizer->beta1);
    w.f64(optimizer->beta2);
    w.f64(optimizer->eps);
    for (const Dense& d : optimizer->m.layers) write_values(w, d);
    for (const Dense& d : optimizer->v.layers) write_values(w, d);
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

TinyModel load_checkpoint(const std::filesystem::path& path, std::optional<AdamState>* optimizer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw IoError(path.string() + ": not a checkpoint file");
  }
  LeReader rd(in, path.string());
  const std::uint32_t version = rd.u32();
  if (version != kVersion) throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  if (rd.u32() != Parameters::kLayers) throw IoError(path.string() + ": unexpected layer count");
  Parameters params;
  for (Dense& d : params.layers) {
    const auto rows = rd.u32();
    const auto cols = rd.u32();
    if (rows == 0 || cols == 0 || rows > (1u << 16) || cols > (1u << 16)) {
      throw IoError(path.string() + ": implausible layer shape");
    }
    d.weight.resize(rows, cols);
    d.bias.resize(cols);
    read_values(rd, d);
  }
  TinyModel model = [&] {
    try {
      return TinyModel::from_parameters(std::move(params));
    } catch (const InvalidArgument& e) {
      throw IoError(path.string() + ": " + e.what());
    }
  }();
  const bool has_opt = rd.u32() != 0;
  if (optimizer) {
    optimizer->reset();
    if (has_opt) {
      AdamState s = AdamState::for_model(model);
      s.step = rd.u64();
      s.lr = rd.f64();
      s.beta1 = rd.f64();
      s.beta2 = rd.f64();
      s.eps = rd.f64();
      for (Dense& d : s.m.layers) read_values(rd, d);
      for (Dense& d : s.v.layers) read_values(rd, d);
      *optimizer = std::move(s);
    }
  }
  return model;
}

void write_loss_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "epoch,loss,train_acc\n";
  char buf[64];
  for (const EpochLog& e : log) {
    auto fmt = [&](double v) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
      return std::string(buf, end);
    };
    out << e.epoch << ',' << fmt(e.loss) << ',' << fmt(e.train_acc) << '\n';
  }
}

}  // namespace pcbackdoor
