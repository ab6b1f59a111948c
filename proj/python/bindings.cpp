// Python bindings. Point clouds cross the boundary as float64 arrays of shape (K, 3).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcbackdoor/config.hpp"
#include "pcbackdoor/error.hpp"
#include "pcbackdoor/experiment.hpp"
#include "pcbackdoor/geometry.hpp"
#include "pcbackdoor/metrics.hpp"
#include "pcbackdoor/model.hpp"
#include "pcbackdoor/preprocess.hpp"
#include "pcbackdoor/trigger.hpp"

namespace py = pybind11;
using namespace pcbackdoor;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

PointCloud to_cloud(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw InvalidArgument("expected an array of shape (K, 3)");
  const auto r = a.unchecked<2>();
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(r.shape(0)));
  for (py::ssize_t i = 0; i < r.shape(0); ++i) pts.emplace_back(r(i, 0), r(i, 1), r(i, 2));
  return PointCloud(std::move(pts));
}

Array to_array(const PointCloud& c) {
  Array out({static_cast<py::ssize_t>(c.size()), py::ssize_t{3}});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < c.size(); ++i)
    for (int j = 0; j < 3; ++j) w(static_cast<py::ssize_t>(i), j) = c[i](j);
  return out;
}

template <typename V>
py::array_t<double> to_vector(const V& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  auto w = out.mutable_unchecked<1>();
  for (py::ssize_t i = 0; i < static_cast<py::ssize_t>(v.size()); ++i) w(i) = v[static_cast<std::size_t>(i)];
  return out;
}

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(pcbackdoor, m) {
  m.doc() = "Point cloud backdoor triggers, defenses and a small reference classifier";

  // Translators run in reverse registration order: the most specific goes last.
  const auto base_error = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base_error);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const InvalidArgument& e) {
      py::set_error(PyExc_ValueError, e.what());
    }
  });

  // Geometry and metrics.
  m.def("normalize_unit_ball", [](const Array& a) { return to_array(normalize_unit_ball(to_cloud(a))); },
        py::arg("cloud"), "Center at the centroid and scale the farthest point to norm 1.");
  m.def(
      "farthest_point_sampling",
      [](const Array& a, std::size_t count, std::size_t start) {
        return farthest_point_sampling(to_cloud(a), count, start);
      },
      py::arg("cloud"), py::arg("count"), py::arg("start") = 0);
  m.def(
      "k_nearest_distances", [](const Array& a, std::size_t k) { return to_vector(k_nearest_distances(to_cloud(a), k)); },
      py::arg("cloud"), py::arg("k"), "Mean distance of each point to its k nearest neighbors.");
  m.def(
      "chamfer_distance", [](const Array& a, const Array& b) { return chamfer_distance(to_cloud(a), to_cloud(b)); },
      py::arg("a"), py::arg("b"), "Sum of both directed mean nearest-neighbor distances (not squared).");

  // Triggers.
  m.def(
      "wlt_trigger",
      [](const Array& a, std::size_t anchors, double alpha_deg, double scale, double bandwidth, bool renormalize,
         std::optional<std::size_t> fps_start, std::uint64_t seed) {
        WltParams p;
        p.anchors = anchors;
        p.alpha = deg_to_rad(alpha_deg);
        p.scale = scale;
        p.bandwidth = bandwidth;
        p.renormalize = renormalize;
        p.seed = seed;
        return to_array(wlt_apply(to_cloud(a), p, fps_start));
      },
      py::arg("cloud"), py::arg("anchors") = 16, py::arg("alpha_deg") = 5.0, py::arg("scale") = 5.0,
      py::arg("bandwidth") = 0.5, py::arg("renormalize") = true, py::arg("fps_start") = py::none(),
      py::arg("seed") = 0);
  m.def(
      "ball_trigger",
      [](const Array& a, std::array<double, 3> center, double radius, double ratio, std::uint64_t seed) {
        BallTriggerParams p;
        p.center = Vec3(center[0], center[1], center[2]);
        p.radius = radius;
        p.ratio = ratio;
        Rng rng(seed);
        return to_array(ball_trigger_apply(to_cloud(a), p, rng));
      },
      py::arg("cloud"), py::arg("center") = std::array<double, 3>{0.05, 0.05, 0.05}, py::arg("radius") = 0.05,
      py::arg("ratio") = 0.01, py::arg("seed") = 0);
  m.def(
      "rotation_trigger",
      [](const Array& a, double angle_deg) {
        return to_array(rotation_trigger_apply(to_cloud(a), RotationTriggerParams{deg_to_rad(angle_deg)}));
      },
      py::arg("cloud"), py::arg("angle_deg") = 10.0);

  // Pre-processing.
  m.def(
      "sor", [](const Array& a, std::size_t k, std::size_t remove) { return to_array(sor(to_cloud(a), {k, remove})); },
      py::arg("cloud"), py::arg("k") = 30, py::arg("remove") = 100);
  m.def(
      "sor_removed_indices",
      [](const Array& a, std::size_t k, std::size_t remove) { return sor_removed_indices(to_cloud(a), {k, remove}); },
      py::arg("cloud"), py::arg("k") = 30, py::arg("remove") = 100);
  m.def(
      "run_pipeline",
      [](const Array& a, const std::string& spec, std::uint64_t seed, std::uint64_t sample, std::uint64_t epoch) {
        return to_array(run_pipeline(to_cloud(a), parse_pipeline(spec), seed, sample, epoch));
      },
      py::arg("cloud"), py::arg("pipeline"), py::arg("seed") = 0, py::arg("sample") = 0, py::arg("epoch") = 0,
      "Run a pipeline such as \"sor(k=30,remove=50),rotz(max=20)\".");
  m.def(
      "normalize_pipeline", [](const std::string& spec) { return format_pipeline(parse_pipeline(spec)); },
      py::arg("pipeline"), "Canonical text form with every parameter spelled out.");

  // Data.
  m.def(
      "synthetic_corpus",
      [](std::size_t per_class, std::size_t points, std::uint64_t seed, const std::string& split,
         double noise_sigma) {
        SyntheticOptions opt;
        opt.per_class = per_class;
        opt.points = points;
        opt.noise_sigma = noise_sigma;
        const LabeledDataset ds = generate_synthetic_corpus(opt, seed, parse_split(split));
        py::array_t<double> clouds({static_cast<py::ssize_t>(ds.size()), static_cast<py::ssize_t>(points),
                                    py::ssize_t{3}});
        py::array_t<std::int64_t> labels(static_cast<py::ssize_t>(ds.size()));
        auto c = clouds.mutable_unchecked<3>();
        auto l = labels.mutable_unchecked<1>();
        for (std::size_t i = 0; i < ds.size(); ++i) {
          const auto n = static_cast<py::ssize_t>(i);
          l(n) = static_cast<std::int64_t>(ds.samples[i].label);
          for (std::size_t k = 0; k < points; ++k)
            for (int j = 0; j < 3; ++j) c(n, static_cast<py::ssize_t>(k), j) = ds.samples[i].cloud[k](j);
        }
        return py::make_tuple(clouds, labels, ds.class_names);
      },
      py::arg("per_class") = 40, py::arg("points") = 1024, py::arg("seed") = 0, py::arg("split") = "train",
      py::arg("noise_sigma") = 0.01, "Returns (clouds[N, K, 3], labels[N], class_names).");

  // Model.
  py::class_<TinyModel>(m, "Model")
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"))
      .def_static(
          "initialize",
          [](std::size_t classes, std::uint64_t seed) {
            ModelShape s;
            s.num_classes = classes;
            Rng rng(seed);
            return TinyModel::initialize(s, rng);
          },
          py::arg("num_classes"), py::arg("seed") = 0)
      .def_property_readonly("num_classes", &TinyModel::num_classes)
      .def("logits", [](const TinyModel& model, const Array& a) { return to_vector(forward(model, to_cloud(a)).logits); })
      .def("features",
           [](const TinyModel& model, const Array& a) { return to_vector(pooled_features(model, to_cloud(a))); })
      .def("predict", [](const TinyModel& model, const Array& a) { return predict(model, to_cloud(a)); })
      .def("save", [](const TinyModel& model, const std::filesystem::path& p) { save_checkpoint(p, model); });

  // Experiments.
  m.def("default_config", [] { return serialize_config(ExperimentConfig{}); }, "Default config as YAML text.");
  m.def(
      "config_hash", [](const std::string& yaml) { return config_hash(parse_config(yaml)); }, py::arg("config"));
  m.def(
      "run_experiment",
      [](const std::string& yaml, const std::filesystem::path& out) {
        ExperimentConfig c = parse_config(yaml);
        c.validate();
        RunReport r;
        {
          py::gil_scoped_release release;
          r = cmd_run(c, out, out / "results.csv");
        }
        return json_to_py(report_to_json(r));
      },
      py::arg("config"), py::arg("out"),
      "Train and evaluate one config; writes model.bin, loss.csv, report.json and results.csv under `out`.");
}
