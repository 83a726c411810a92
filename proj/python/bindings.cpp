#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "boxhunt/config.hpp"
#include "boxhunt/env.hpp"
#include "boxhunt/eval.hpp"
#include "boxhunt/features.hpp"
#include "boxhunt/geometry.hpp"
#include "boxhunt/learner.hpp"
#include "boxhunt/mlp.hpp"
#include "boxhunt/scene.hpp"

namespace py = pybind11;
using namespace boxhunt;
using nlohmann::json;

namespace {

RunConfig parse_config(const std::string& config_json) {
  return RunConfig::from_json(config_json.empty() ? json::object() : json::parse(config_json));
}

/// An episode that owns its scene and feature extractor.
class PyEnv {
 public:
  PyEnv(Scene scene, const std::string& config_json)
      : cfg_(parse_config(config_json)), scene_(std::move(scene)), extractor_(make_extractor(cfg_.features)) {
    reset();
  }

  py::array_t<double> reset() {
    episode_ = std::make_unique<Episode>(cfg_.env, scene_, *extractor_);
    return state();
  }

  py::array_t<double> state() const {
    const auto x = episode_->state().input();
    return py::array_t<double>(static_cast<py::ssize_t>(x.size()), x.data());
  }

  py::tuple step(int action) {
    const StepResult r = episode_->step(action);
    return py::make_tuple(r.reward, r.done, r.box, r.iou_now);
  }

  const Box& box() const { return episode_->box(); }
  bool done() const { return episode_->done(); }
  int steps() const { return episode_->steps(); }
  int num_actions() const { return boxhunt::num_actions(cfg_.env); }
  std::size_t state_size() const { return state_dim(cfg_.env, extractor_->dim()); }

 private:
  RunConfig cfg_;
  Scene scene_;
  std::unique_ptr<FeatureExtractor> extractor_;
  std::unique_ptr<Episode> episode_;
};

struct PyTrainResult {
  std::vector<Mlp> checkpoints;
  std::string log_jsonl;
  std::string variant;
};

PyTrainResult py_train(const Dataset& data, const std::string& config_json,
                       std::optional<std::filesystem::path> checkpoint_dir) {
  const RunConfig cfg = parse_config(config_json);
  auto extractor = make_extractor(cfg.features);
  TrainOptions opts;
  opts.checkpoint_dir = std::move(checkpoint_dir);
  TrainResult r;
  {
    py::gil_scoped_release release;
    r = train(filter_by_class(data, cfg.data.class_name), cfg.env, cfg.train, *extractor, opts);
  }
  return {std::move(r.checkpoints), r.log.to_jsonl(), to_string(cfg.env.variant)};
}

/// Report JSON followed by one trace per line.
std::pair<std::string, std::string> py_evaluate(const Policy& policy, const Dataset& data,
                                                const std::string& config_json) {
  const RunConfig cfg = parse_config(config_json);
  auto extractor = make_extractor(cfg.features);
  EvalReport report;
  {
    py::gil_scoped_release release;
    report = evaluate(policy, cfg.env, data, *extractor);
  }
  return {report.to_json().dump(), traces_to_jsonl(report.traces)};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Active object localization with deep Q-learning";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DatasetError>(m, "DatasetError", PyExc_RuntimeError);
  py::register_exception<FeatureServerError>(m, "FeatureServerError", PyExc_RuntimeError);

  py::class_<Box>(m, "Box")
      .def(py::init<double, double, double, double>(), py::arg("x1"), py::arg("y1"), py::arg("x2"),
           py::arg("y2"))
      .def_readwrite("x1", &Box::x1)
      .def_readwrite("y1", &Box::y1)
      .def_readwrite("x2", &Box::x2)
      .def_readwrite("y2", &Box::y2)
      .def_property_readonly("width", &Box::width)
      .def_property_readonly("height", &Box::height)
      .def_property_readonly("area", &Box::area)
      .def("as_tuple", [](const Box& b) { return py::make_tuple(b.x1, b.y1, b.x2, b.y2); })
      .def(py::self == py::self)
      .def("__repr__", [](const Box& b) { return "Box" + to_string(b); });

  m.def("iou", &iou, py::arg("box"), py::arg("gt"));
  m.def("recall", &recall, py::arg("box"), py::arg("gt"));
  m.def(
      "subregion",
      [](const Box& a, int move, double scale_subregion, double scale_mask) {
        if (move < 0 || move > 4) throw py::value_error("zoom move must be in 0..4");
        return subregion(a, static_cast<ZoomMove>(move), {scale_subregion, scale_mask});
      },
      py::arg("ancestor"), py::arg("move"), py::arg("scale_subregion") = 0.75,
      py::arg("scale_mask") = 1.0 / 3.0);
  m.def(
      "transform",
      [](const Box& b, int move, double alpha, double width, double height) {
        if (move < 0 || move > 7) throw py::value_error("deformation must be in 0..7");
        return transform(b, static_cast<DeformMove>(move), Alpha{alpha}, ImageSize{width, height});
      },
      py::arg("box"), py::arg("move"), py::arg("alpha"), py::arg("width"), py::arg("height"));
  m.def(
      "clamp",
      [](const Box& b, double width, double height, double min_side) {
        return clamp(b, ImageSize{width, height}, min_side);
      },
      py::arg("box"), py::arg("width"), py::arg("height"), py::arg("min_side") = kMinSide);
  m.def("movement_reward", &movement_reward, py::arg("before"), py::arg("after"));
  m.def("trigger_reward", &trigger_reward, py::arg("value"), py::arg("tau"), py::arg("eta"));

  py::class_<Scene>(m, "Scene")
      .def_readonly("id", &Scene::id)
      .def_readonly("width", &Scene::width)
      .def_readonly("height", &Scene::height)
      .def_property_readonly("boxes", &Scene::boxes)
      .def_property_readonly("classes",
                             [](const Scene& s) {
                               std::vector<std::string> out;
                               for (const auto& a : s.annotations) out.push_back(a.class_name);
                               return out;
                             })
      .def_property_readonly("pixels", [](const Scene& s) {
        return py::array_t<double>({s.height, s.width}, s.pixels.data());
      });

  py::class_<Dataset>(m, "Dataset")
      .def("__len__", &Dataset::size)
      .def(
          "__getitem__",
          [](const Dataset& d, py::ssize_t i) {
            const auto n = static_cast<py::ssize_t>(d.size());
            if (i < 0) i += n;
            if (i < 0 || i >= n) throw py::index_error();
            return d.scenes[static_cast<std::size_t>(i)];
          })
      .def(
          "find",
          [](const Dataset& d, const std::string& id) -> std::optional<Scene> {
            const Scene* s = d.find(id);
            return s ? std::optional<Scene>(*s) : std::nullopt;
          },
          py::arg("scene_id"))
      .def("write", &write_dataset, py::arg("directory"));

  m.def(
      "synth",
      [](int count, int width, int height, std::uint64_t seed, const std::string& class_name) {
        SynthSpec spec;
        spec.count = count;
        spec.width = width;
        spec.height = height;
        spec.seed = seed;
        spec.class_name = class_name;
        return generate_synthetic(spec);
      },
      py::arg("count"), py::arg("width") = 64, py::arg("height") = 64, py::arg("seed") = 7,
      py::arg("class_name") = "target");
  m.def("load_dataset", &load_dataset, py::arg("manifest"));
  m.def("split", &split_train_test, py::arg("dataset"), py::arg("test_fraction"), py::arg("seed"));

  py::class_<Mlp>(m, "Net")
      .def_property_readonly("dims", &Mlp::dims)
      .def_property_readonly("parameter_count", &Mlp::parameter_count)
      .def(
          "forward",
          [](const Mlp& net, const std::vector<double>& x) { return net.forward(x); }, py::arg("x"))
      .def(
          "save",
          [](const Mlp& net, const std::filesystem::path& path, const std::string& variant) {
            save_checkpoint(net, parse_variant(variant), path);
          },
          py::arg("path"), py::arg("variant"))
      .def(py::self == py::self);

  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& path) {
        Checkpoint c = load_checkpoint(path);
        return py::make_tuple(std::move(c.net), to_string(c.variant));
      },
      py::arg("path"));

  py::class_<PyEnv>(m, "Env")
      .def(py::init<Scene, const std::string&>(), py::arg("scene"), py::arg("config_json") = "")
      .def("reset", &PyEnv::reset)
      .def("step", &PyEnv::step, py::arg("action"))
      .def_property_readonly("state", &PyEnv::state)
      .def_property_readonly("box", &PyEnv::box)
      .def_property_readonly("done", &PyEnv::done)
      .def_property_readonly("steps", &PyEnv::steps)
      .def_property_readonly("num_actions", &PyEnv::num_actions)
      .def_property_readonly("state_size", &PyEnv::state_size);

  py::class_<PyTrainResult>(m, "TrainResult")
      .def_readonly("checkpoints", &PyTrainResult::checkpoints)
      .def_readonly("log_jsonl", &PyTrainResult::log_jsonl)
      .def_readonly("variant", &PyTrainResult::variant);

  m.def("train", &py_train, py::arg("dataset"), py::arg("config_json") = "",
        py::arg("checkpoint_dir") = std::nullopt);
  m.def(
      "evaluate",
      [](const Mlp& net, const Dataset& data, const std::string& config_json) {
        return py_evaluate(greedy_policy(net), data, config_json);
      },
      py::arg("net"), py::arg("dataset"), py::arg("config_json") = "");
  m.def(
      "evaluate_random",
      [](const Dataset& data, const std::string& config_json, std::uint64_t seed) {
        return py_evaluate(random_policy(parse_config(config_json).env.variant, seed), data,
                           config_json);
      },
      py::arg("dataset"), py::arg("config_json") = "", py::arg("seed") = 0);
  m.def(
      "render_svg",
      [](const std::string& trace_json, const Scene& scene) {
        return render_svg(trace_from_json(json::parse(trace_json)), scene);
      },
      py::arg("trace_json"), py::arg("scene"));
}
