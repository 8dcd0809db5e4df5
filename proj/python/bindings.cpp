#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <sstream>

#include "g2sd/analysis.hpp"
#include "g2sd/checkpoint.hpp"
#include "g2sd/config.hpp"
#include "g2sd/dataset.hpp"
#include "g2sd/distill_specific.hpp"
#include "g2sd/errors.hpp"
#include "g2sd/mae.hpp"
#include "g2sd/model_io.hpp"
#include "g2sd/runtime.hpp"
#include "g2sd/stages.hpp"

namespace py = pybind11;
using namespace g2sd;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from_data(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_numpy(const Shape& shape, std::span<const float> data) {
  std::vector<py::ssize_t> dims(shape.begin(), shape.end());
  py::array_t<float> out(dims);
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

py::dict dataset_dict(const Dataset& d) {
  py::dict out;
  out["images"] = to_numpy({d.size, d.height, d.width, d.channels}, d.pixels);
  py::array_t<std::int64_t> labels(static_cast<py::ssize_t>(d.labels.size()));
  std::copy(d.labels.begin(), d.labels.end(), labels.mutable_data());
  out["labels"] = labels;
  out["num_classes"] = d.num_classes;
  out["split"] = d.split;
  out["recipe"] = d.recipe;
  out["seed"] = d.seed;
  return out;
}

Dataset from_arrays(const FloatArray& images, const py::array_t<std::int64_t>& labels, int num_classes) {
  if (images.ndim() != 4) throw ShapeError("images must be [n, H, W, C]");
  Dataset d;
  d.size = images.shape(0);
  d.height = static_cast<int>(images.shape(1));
  d.width = static_cast<int>(images.shape(2));
  d.channels = static_cast<int>(images.shape(3));
  d.num_classes = num_classes;
  d.pixels.assign(images.data(), images.data() + images.size());
  d.labels.assign(labels.data(), labels.data() + labels.size());
  if (static_cast<std::int64_t>(d.labels.size()) != d.size) throw ShapeError("one label per image expected");
  return d;
}

py::dict config_dict(const Config& c) {
  py::dict out;
  for (const auto& [k, v] : c.entries()) out[py::str(k)] = v;
  return out;
}

Config config_from(const py::dict& overrides) {
  Config c = default_config();
  for (const auto& [k, v] : overrides) c.apply_override(py::str(k).cast<std::string>() + "=" + py::str(v).cast<std::string>());
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Generic-to-specific distillation core";
  configure_allocator();

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<IndexError>(m, "IndexError", PyExc_IndexError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);

  m.def("known_recipes", &known_recipes);
  m.def(
      "synth_dataset",
      [](const std::string& recipe, std::uint64_t seed, std::int64_t n, const std::string& split, int image_size) {
        return dataset_dict(synth_dataset(recipe, seed, n, split, image_size));
      },
      py::arg("recipe"), py::arg("seed"), py::arg("n"), py::arg("split") = "train", py::arg("image_size") = 32);

  m.def("linear_cka", &linear_cka, py::arg("x"), py::arg("y"));
  m.def(
      "hard_label", [](const FloatArray& logits) { return hard_label(to_tensor(logits)); }, py::arg("logits"));
  m.def("masked_count", &masked_count, py::arg("n"), py::arg("ratio"));
  m.def(
      "sample_masks",
      [](std::int64_t batch, std::int64_t n, double ratio, std::uint64_t seed, std::uint64_t step) {
        py::list out;
        for (const auto& p : sample_masks(batch, n, ratio, seed, step)) out.append(py::make_tuple(p.visible, p.masked));
        return out;
      },
      py::arg("batch"), py::arg("n"), py::arg("ratio"), py::arg("seed"), py::arg("step") = 0);

  m.def("default_config", [] { return config_dict(default_config()); });
  m.def(
      "resolve_config", [](const py::dict& overrides) { return config_dict(config_from(overrides)); },
      py::arg("overrides") = py::dict());

  m.def(
      "load_checkpoint",
      [](const std::string& path) {
        const Checkpoint c = load_checkpoint(path);
        py::dict tensors;
        for (const auto& t : c.tensors) tensors[py::str(t.name)] = to_numpy(t.shape, t.data);
        return py::make_tuple(c.spec, tensors);
      },
      py::arg("path"));
  m.def(
      "save_checkpoint",
      [](const std::string& path, const std::string& spec, const py::dict& tensors) {
        Checkpoint c;
        c.spec = spec;
        for (const auto& [k, v] : tensors) {
          const Tensor t = to_tensor(v.cast<FloatArray>());
          c.tensors.push_back({py::str(k).cast<std::string>(), t.shape(), {t.data().begin(), t.data().end()}});
        }
        save_checkpoint(path, c);
      },
      py::arg("path"), py::arg("spec"), py::arg("tensors"));

  py::class_<VitClassifier>(m, "Classifier")
      .def_static(
          "load", [](const std::string& path) { return classifier_from_checkpoint(load_checkpoint(path)); },
          py::arg("path"))
      .def_property_readonly("num_classes", &VitClassifier::num_classes)
      .def(
          "predict",
          [](const VitClassifier& model, const FloatArray& images) {
            const Tensor x = to_tensor(images);
            NoGradGuard guard;
            return model.predict(patchify(x, model.encoder().spec().patch).tokens);
          },
          py::arg("images"))
      .def(
          "accuracy",
          [](const VitClassifier& model, const FloatArray& images, const py::array_t<std::int64_t>& labels) {
            return evaluate_accuracy(model, from_arrays(images, labels, model.num_classes()));
          },
          py::arg("images"), py::arg("labels"))
      .def(
          "features",
          [](const VitClassifier& model, const FloatArray& images) {
            const Tensor x = to_tensor(images);
            NoGradGuard guard;
            return pooled_features(model.encoder(), patchify(x, model.encoder().spec().patch).tokens);
          },
          py::arg("images"))
      .def(
          "occlusion_curve",
          [](const VitClassifier& model, const FloatArray& images, const py::array_t<std::int64_t>& labels,
             std::vector<double> ratios, std::uint64_t seed, bool pixel_zero) {
            OcclusionOptions opts;
            opts.ratios = std::move(ratios);
            opts.seed = seed;
            opts.pixel_zero = pixel_zero;
            py::list out;
            for (const auto& p : occlusion_curve(model, from_arrays(images, labels, model.num_classes()), opts)) {
              py::dict row;
              row["ratio"] = p.ratio;
              row["dropped"] = p.dropped;
              row["accuracy"] = p.accuracy;
              row["cka"] = p.cka;
              out.append(row);
            }
            return out;
          },
          py::arg("images"), py::arg("labels"), py::arg("ratios") = std::vector<double>{0.0, 0.25, 0.5, 0.75},
          py::arg("seed") = 0, py::arg("pixel_zero") = false);

  m.def(
      "run_pipeline",
      [](const std::string& out, const py::dict& overrides) {
        StageContext ctx;
        ctx.cfg = config_from(overrides);
        ctx.out = out;
        std::filesystem::create_directories(ctx.out);
        ctx.cfg.save(ctx.out / "resolved.cfg");
        PipelineReport report;
        {
          py::gil_scoped_release release;
          report = run_pipeline(ctx);
        }
        py::list rows;
        for (const auto& r : report.rows) {
          py::dict row;
          row["arm"] = r.arm;
          row["seed"] = r.seed;
          row["accuracy"] = r.accuracy;
          row["occlusion_drop"] = r.occlusion_drop;
          row["cka_to_teacher"] = r.cka_to_teacher;
          rows.append(row);
        }
        py::dict result;
        result["teacher_accuracy"] = report.teacher_accuracy;
        result["rows"] = rows;
        result["seconds"] = report.seconds;
        return result;
      },
      py::arg("out"), py::arg("overrides") = py::dict());
}
