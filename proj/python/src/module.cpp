#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "slicemap/error.hpp"
#include "slicemap/evaluate.hpp"
#include "slicemap/generate.hpp"
#include "slicemap/metrics.hpp"
#include "slicemap/phantom.hpp"
#include "slicemap/run_config.hpp"
#include "slicemap/train.hpp"

namespace py = pybind11;
using namespace slicemap;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Volume to_volume(const FloatArray& a, std::string subject = {}) {
  if (a.ndim() != 3) throw ShapeError("expected a 3D array (Z, Y, X)");
  Volume v({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
            static_cast<std::size_t>(a.shape(2))});
  std::copy(a.data(), a.data() + a.size(), v.data.begin());
  v.subject = std::move(subject);
  return v;
}

Image to_image(const FloatArray& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2D array (Y, X)");
  Image img(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

FloatArray from_volume(const Volume& v) {
  FloatArray out({v.shape[0], v.shape[1], v.shape[2]});
  std::copy(v.data.begin(), v.data.end(), out.mutable_data());
  return out;
}

std::vector<Volume> to_volumes(const std::vector<FloatArray>& arrays) {
  std::vector<Volume> out;
  for (std::size_t i = 0; i < arrays.size(); ++i) out.push_back(to_volume(arrays[i], "volume_" + std::to_string(i)));
  return out;
}

ModelConfig parse_model_config(const std::string& text) {
  ModelConfig c;
  try {
    from_json(nlohmann::json::parse(text), c);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// A trained model owned on the Python side.
struct PyModel {
  std::shared_ptr<Model<float>> model;

  std::string config_json() const {
    nlohmann::json j;
    to_json(j, model->config());
    return j.dump();
  }

  FloatArray generate(const std::optional<FloatArray>& subject, const std::vector<std::size_t>& contexts,
                      std::size_t samples, const std::string& mode, std::uint64_t seed) const {
    std::vector<SlicePose> ctx;
    if (!contexts.empty()) {
      if (!subject) throw ConfigError("contexts need a subject volume");
      const Volume vol = to_volume(*subject);
      const SubjectSlices s = prepare_subjects(std::span(&vol, 1), model->config()).front();
      for (std::size_t k : contexts) {
        if (k >= s.num_poses()) throw ConfigError("context index " + std::to_string(k) + " out of range");
        ctx.push_back(s.slices[k]);
      }
    }
    Volume out;
    {
      py::gil_scoped_release release;
      const auto cm = condition(*model, std::span<const SlicePose>(ctx));
      out = dense_sweep(cm, samples, parse_generation_mode(mode), seed);
    }
    return from_volume(out);
  }
};

}  // namespace

PYBIND11_MODULE(_slicemap, m) {
  m.doc() = "Dense volumes from sparse slices: phantoms, training, generation and metrics.";

  py::register_exception<Error>(m, "SlicemapError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  m.def(
      "generate_phantom",
      [](std::uint64_t seed, std::array<std::size_t, 3> shape) {
        PhantomSpec spec;
        spec.seed = seed;
        spec.shape = shape;
        return from_volume(generate_phantom(spec));
      },
      py::arg("seed") = 0, py::arg("shape") = std::array<std::size_t, 3>{32, 32, 32});

  m.def("load_volume", [](const std::filesystem::path& p) { return from_volume(load_volume(p)); });
  m.def(
      "save_volume",
      [](const FloatArray& a, const std::filesystem::path& p, const std::string& subject) {
        save_volume(to_volume(a, subject), p);
      },
      py::arg("volume"), py::arg("path"), py::arg("subject") = "");

  m.def("ssim", [](const FloatArray& a, const FloatArray& b) {
    if (a.ndim() == 2) return ssim(to_image(a), to_image(b));
    return ssim(to_volume(a), to_volume(b));
  });
  m.def("cross_correlation", [](const FloatArray& a, const FloatArray& b) {
    if (a.size() != b.size()) throw ShapeError("cross_correlation: inputs differ in size");
    return cross_correlation(std::span<const float>(a.data(), a.size()), std::span<const float>(b.data(), b.size()));
  });
  m.def("select_context_schedule", &select_context_schedule, py::arg("num_contexts"), py::arg("num_poses"));

  m.def("default_config", [] { return dump_run_config(RunConfig{}); }, "Default run configuration as JSON text.");

  py::class_<PyModel>(m, "Model")
      .def_static(
          "load",
          [](const std::filesystem::path& p) {
            TrainingState st = load_checkpoint(p);
            return PyModel{std::shared_ptr<Model<float>>(std::move(st.model))};
          },
          py::arg("path"))
      .def_property_readonly("config_json", &PyModel::config_json)
      .def_property_readonly("num_poses", [](const PyModel& pm) { return pm.model->config().num_poses(); })
      .def("generate", &PyModel::generate, py::arg("subject") = py::none(), py::arg("contexts") = std::vector<std::size_t>{},
           py::arg("samples") = 32, py::arg("mode") = "average", py::arg("seed") = 0,
           "Dense sweep conditioned on the given slice indices of `subject`; returns (K, H, W).")
      .def(
          "evaluate",
          [](const PyModel& pm, const std::vector<FloatArray>& volumes, std::vector<std::size_t> counts,
             std::size_t samples, const std::string& mode, std::uint64_t seed, std::size_t jobs) {
            const auto subjects = prepare_subjects(to_volumes(volumes), pm.model->config());
            EvalOptions opt;
            opt.context_counts = std::move(counts);
            opt.n_samples = samples;
            opt.mode = parse_generation_mode(mode);
            opt.seed = seed;
            opt.jobs = jobs;
            MetricsReport r;
            {
              py::gil_scoped_release release;
              r = evaluate_dataset(*pm.model, subjects, opt);
            }
            py::list out;
            for (const auto& s : r.summary) {
              py::dict d;
              d["n_contexts"] = s.n_contexts;
              d["ssim"] = s.ssim;
              d["cc"] = s.cc;
              d["contexts"] = s.contexts;
              d["slice_ssim"] = s.slice_ssim;
              out.append(d);
            }
            return out;
          },
          py::arg("volumes"), py::arg("context_counts") = std::vector<std::size_t>{0, 1, 2, 4}, py::arg("samples") = 32,
          py::arg("mode") = "average", py::arg("seed") = 0, py::arg("jobs") = 1);

  m.def(
      "train",
      [](const std::string& config_json, const std::vector<FloatArray>& training,
         const std::vector<FloatArray>& validation, const std::filesystem::path& checkpoint) {
        const ModelConfig config = parse_model_config(config_json);
        const auto tr = prepare_subjects(to_volumes(training), config);
        const auto va = prepare_subjects(to_volumes(validation), config);
        TrainingState state = init_training(config);
        TrainOptions opt;
        opt.checkpoint_path = checkpoint;
        {
          py::gil_scoped_release release;
          train(state, tr, va, opt);
        }
        py::list history;
        for (const auto& r : state.history) history.append(py::make_tuple(r.epoch, r.train_nll, r.val_nll));
        return history;
      },
      py::arg("config_json"), py::arg("training"), py::arg("validation") = std::vector<FloatArray>{},
      py::arg("checkpoint") = std::filesystem::path{},
      "Trains from scratch; returns [(epoch, train_nll, val_nll)] and writes the checkpoint when a path is given.");
}
