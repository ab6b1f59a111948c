#include "pcbackdoor/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "pcbackdoor/error.hpp"

namespace pcbackdoor {

namespace {

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, end);
  // Keep floats recognizable as floats for human readers.
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + '"';
}

std::string source_name(DataSource s) { return s == DataSource::Synthetic ? "synthetic" : "manifest"; }

void emit_pipeline(std::ostream& out, const std::string& key, const PipelineSpec& spec, int indent) {
  const std::string pad(static_cast<std::size_t>(indent), ' ');
  if (spec.empty()) {
    out << pad << key << ": []\n";
    return;
  }
  out << pad << key << ":\n";
  for (const StepSpec& step : spec.steps) {
    out << pad << "  - " << quoted(format_pipeline(PipelineSpec{{step}})) << '\n';
  }
}

// Reads a YAML mapping while tracking which keys were consumed, so typos
// surface as errors instead of silently keeping defaults.
class Section {
 public:
  Section(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError(where() + " must be a mapping");
  }

  template <class T>
  void read(const std::string& key, T& value) {
    seen_.insert(key);
    if (!node_ || node_.IsNull()) return;
    const YAML::Node child = node_[key];
    if (!child) return;
    try {
      value = child.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(key) + ": invalid value");
    }
  }

  void read_pipeline(const std::string& key, PipelineSpec& spec) {
    seen_.insert(key);
    if (!has(key)) return;
    const YAML::Node child = node_[key];
    try {
      if (child.IsNull()) {
        spec = {};
      } else if (child.IsScalar()) {
        spec = parse_pipeline(child.as<std::string>());
      } else if (child.IsSequence()) {
        PipelineSpec out;
        for (const YAML::Node& item : child) {
          const PipelineSpec one = parse_pipeline(item.as<std::string>());
          out.steps.insert(out.steps.end(), one.steps.begin(), one.steps.end());
        }
        spec = std::move(out);
      } else {
        throw ConfigError("expected a list of steps");
      }
    } catch (const ConfigError& e) {
      throw ConfigError(where(key) + ": " + e.what());
    } catch (const YAML::Exception&) {
      throw ConfigError(where(key) + ": invalid value");
    }
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(node_ && !node_.IsNull() ? node_[key] : YAML::Node(), path_.empty() ? key : path_ + "." + key);
  }

  bool has(const std::string& key) const { return node_ && node_.IsMap() && node_[key]; }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ConfigError("unknown key '" + where(key) + "'");
    }
  }

  std::string where(const std::string& key = {}) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

std::string trigger_kind_name(TriggerKind kind) {
  switch (kind) {
    case TriggerKind::Wlt: return "wlt";
    case TriggerKind::Ball: return "ball";
    case TriggerKind::Rotation: return "rotation";
  }
  return "?";
}

TriggerKind parse_trigger_kind(const std::string& name) {
  if (name == "wlt") return TriggerKind::Wlt;
  if (name == "ball") return TriggerKind::Ball;
  if (name == "rotation") return TriggerKind::Rotation;
  throw ConfigError("unknown trigger '" + name + "' (expected wlt, ball or rotation)");
}

WltParams WltSettings::params() const {
  WltParams p;
  p.anchors = anchors;
  p.alpha = deg_to_rad(alpha_deg);
  p.scale = scale;
  p.bandwidth = bandwidth;
  p.renormalize = renormalize;
  return p;
}

RotationTriggerParams RotationSettings::params() const { return {deg_to_rad(angle_z_deg)}; }

void ExperimentConfig::validate() const {
  const auto& d = dataset;
  require(d.points >= 2, "dataset.points must be at least 2");
  require(!d.classes.empty(), "dataset.classes must not be empty");
  {
    std::set<std::string> unique(d.classes.begin(), d.classes.end());
    require(unique.size() == d.classes.size(), "dataset.classes contains duplicates");
  }
  if (d.source == DataSource::Synthetic) {
    for (const auto& c : d.classes) {
      try {
        parse_shape(c);
      } catch (const Error&) {
        throw ConfigError("dataset.classes: '" + c + "' is not a synthetic shape");
      }
    }
    require(d.train_per_class >= 1, "dataset.train_per_class must be positive");
    require(d.test_per_class >= 1, "dataset.test_per_class must be positive");
    require(std::isfinite(d.noise_sigma) && d.noise_sigma >= 0.0, "dataset.noise_sigma must be non-negative");
    require(std::isfinite(d.pose_jitter_deg) && d.pose_jitter_deg >= 0.0,
            "dataset.pose_jitter_deg must be non-negative");
  } else {
    require(!d.manifest.empty(), "dataset.manifest is required for manifest sources");
  }
  require(poison.target < d.classes.size(), "poison.target must index dataset.classes");
  require(std::isfinite(poison.rate) && poison.rate >= 0.0 && poison.rate < 1.0, "poison.rate must be in [0, 1)");
  try {
    poison.wlt.params().validate();
    poison.ball.validate();
    poison.rotation.params().validate();
    train_config().validate();
    inference_pipeline.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

Trigger ExperimentConfig::trigger() const {
  switch (poison.trigger) {
    case TriggerKind::Wlt: return poison.wlt.params();
    case TriggerKind::Ball: return poison.ball;
    case TriggerKind::Rotation: return poison.rotation.params();
  }
  return poison.wlt.params();
}

PoisonPlan ExperimentConfig::poison_plan() const {
  PoisonPlan plan;
  plan.rate = poison.rate;
  plan.target = poison.target;
  plan.trigger = trigger();
  plan.seed = poison_seed();
  return plan;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig c;
  c.epochs = train.epochs;
  c.batch_size = train.batch_size;
  c.lr = train.lr;
  c.seed = train_seed();
  c.pipeline = train.pipeline;
  return c;
}

SyntheticOptions ExperimentConfig::synthetic_options(Split split) const {
  SyntheticOptions o;
  o.classes.clear();
  for (const auto& c : dataset.classes) o.classes.push_back(parse_shape(c));
  o.per_class = split == Split::Train ? dataset.train_per_class : dataset.test_per_class;
  o.points = dataset.points;
  o.noise_sigma = dataset.noise_sigma;
  o.pose_jitter_deg = dataset.pose_jitter_deg;
  return o;
}

std::uint64_t ExperimentConfig::data_seed() const { return Rng::derive(seed, {1}).next_u64(); }
std::uint64_t ExperimentConfig::poison_seed() const { return Rng::derive(seed, {2}).next_u64(); }
std::uint64_t ExperimentConfig::train_seed() const { return Rng::derive(seed, {3}).next_u64(); }
std::uint64_t ExperimentConfig::eval_seed() const { return Rng::derive(seed, {4}).next_u64(); }

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "# pcbackdoor experiment. Angles in degrees.\n";
  out << "seed: " << c.seed << '\n';
  out << "output_dir: " << quoted(c.output_dir) << '\n';
  out << "dataset:\n";
  out << "  source: " << source_name(c.dataset.source) << "  # synthetic | manifest\n";
  out << "  manifest: " << quoted(c.dataset.manifest) << '\n';
  out << "  points: " << c.dataset.points << '\n';
  out << "  classes: [";
  for (std::size_t i = 0; i < c.dataset.classes.size(); ++i) {
    out << (i ? ", " : "") << quoted(c.dataset.classes[i]);
  }
  out << "]\n";
  out << "  train_per_class: " << c.dataset.train_per_class << '\n';
  out << "  test_per_class: " << c.dataset.test_per_class << '\n';
  out << "  noise_sigma: " << num(c.dataset.noise_sigma) << '\n';
  out << "  pose_jitter_deg: " << num(c.dataset.pose_jitter_deg) << '\n';
  out << "poison:\n";
  out << "  trigger: " << trigger_kind_name(c.poison.trigger) << "  # wlt | ball | rotation\n";
  out << "  rate: " << num(c.poison.rate) << '\n';
  out << "  target: " << c.poison.target << '\n';
  out << "  wlt:\n";
  out << "    anchors: " << c.poison.wlt.anchors << '\n';
  out << "    alpha_deg: " << num(c.poison.wlt.alpha_deg) << '\n';
  out << "    scale: " << num(c.poison.wlt.scale) << '\n';
  out << "    bandwidth: " << num(c.poison.wlt.bandwidth) << '\n';
  out << "    renormalize: " << (c.poison.wlt.renormalize ? "true" : "false") << '\n';
  out << "  ball:\n";
  out << "    center: [" << num(c.poison.ball.center.x()) << ", " << num(c.poison.ball.center.y()) << ", "
      << num(c.poison.ball.center.z()) << "]\n";
  out << "    radius: " << num(c.poison.ball.radius) << '\n';
  out << "    ratio: " << num(c.poison.ball.ratio) << '\n';
  out << "  rotation:\n";
  out << "    angle_z_deg: " << num(c.poison.rotation.angle_z_deg) << '\n';
  out << "train:\n";
  out << "  epochs: " << c.train.epochs << '\n';
  out << "  batch_size: " << c.train.batch_size << '\n';
  out << "  lr: " << num(c.train.lr) << '\n';
  emit_pipeline(out, "pipeline", c.train.pipeline, 2);
  out << "eval:\n";
  emit_pipeline(out, "pipeline", c.inference_pipeline, 2);
  return out.str();
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  ExperimentConfig c;
  try {
    Section top(root, "");
    top.read("seed", c.seed);
    top.read("output_dir", c.output_dir);

    Section ds = top.child("dataset");
    std::string src = source_name(c.dataset.source);
    ds.read("source", src);
    if (src == "synthetic") {
      c.dataset.source = DataSource::Synthetic;
    } else if (src == "manifest") {
      c.dataset.source = DataSource::Manifest;
    } else {
      throw ConfigError("dataset.source must be synthetic or manifest");
    }
    ds.read("manifest", c.dataset.manifest);
    ds.read("points", c.dataset.points);
    ds.read("classes", c.dataset.classes);
    ds.read("train_per_class", c.dataset.train_per_class);
    ds.read("test_per_class", c.dataset.test_per_class);
    ds.read("noise_sigma", c.dataset.noise_sigma);
    ds.read("pose_jitter_deg", c.dataset.pose_jitter_deg);
    ds.finish();

    Section po = top.child("poison");
    std::string trig = trigger_kind_name(c.poison.trigger);
    po.read("trigger", trig);
    c.poison.trigger = parse_trigger_kind(trig);
    po.read("rate", c.poison.rate);
    po.read("target", c.poison.target);
    Section wlt = po.child("wlt");
    wlt.read("anchors", c.poison.wlt.anchors);
    wlt.read("alpha_deg", c.poison.wlt.alpha_deg);
    wlt.read("scale", c.poison.wlt.scale);
    wlt.read("bandwidth", c.poison.wlt.bandwidth);
    wlt.read("renormalize", c.poison.wlt.renormalize);
    wlt.finish();
    Section ball = po.child("ball");
    std::vector<double> center{c.poison.ball.center.x(), c.poison.ball.center.y(), c.poison.ball.center.z()};
    ball.read("center", center);
    if (center.size() != 3) throw ConfigError("poison.ball.center needs three coordinates");
    c.poison.ball.center = Vec3(center[0], center[1], center[2]);
    ball.read("radius", c.poison.ball.radius);
    ball.read("ratio", c.poison.ball.ratio);
    ball.finish();
    Section rot = po.child("rotation");
    rot.read("angle_z_deg", c.poison.rotation.angle_z_deg);
    rot.finish();
    po.finish();

    Section tr = top.child("train");
    tr.read("epochs", c.train.epochs);
    tr.read("batch_size", c.train.batch_size);
    tr.read("lr", c.train.lr);
    tr.read_pipeline("pipeline", c.train.pipeline);
    tr.finish();

    Section ev = top.child("eval");
    ev.read_pipeline("pipeline", c.inference_pipeline);
    ev.finish();
    top.finish();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  } catch (const YAML::Exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << serialize_config(config);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string config_hash(const ExperimentConfig& config) {
  ExperimentConfig copy = config;
  copy.output_dir.clear();
  const std::string text = serialize_config(copy);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
  return out;
}

}  // namespace pcbackdoor
