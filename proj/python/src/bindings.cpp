#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "fdft/train.hpp"

namespace py = pybind11;
using namespace fdft;

namespace {

using Model = FDFtNetModel<float>;

py::list rows_of(const ParamBreakdown& b) {
  py::list out;
  for (const auto& r : b.rows) out.append(py::make_tuple(r.input, r.operation, r.count, r.out_dim, r.stride));
  return out;
}

Tensor<float> batch_from(py::array_t<float, py::array::c_style | py::array::forcecast> a) {
  if (a.ndim() != 4) throw DimensionError("expected an (n, h, w, c) array");
  const Shape s{std::size_t(a.shape(0)), std::size_t(a.shape(1)), std::size_t(a.shape(2)), std::size_t(a.shape(3))};
  Tensor<float> t(s);
  std::memcpy(t.data().data(), a.data(), t.size() * sizeof(float));
  return t;
}

py::array_t<std::uint8_t> image_array(const ImageU8& img) {
  py::array_t<std::uint8_t> a({img.h, img.w, img.c});
  std::memcpy(a.mutable_data(), img.data.data(), img.data.size());
  return a;
}

ImageU8 image_from(py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw DimensionError("expected an (h, w, 3) uint8 array");
  ImageU8 img(a.shape(0), a.shape(1));
  std::memcpy(img.data.data(), a.data(), img.data.size());
  return img;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the fdft C++ core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<StateError>(m, "StateError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<DatasetError>(m, "DatasetError", base.ptr());
  py::register_exception<MetricError>(m, "MetricError", base.ptr());

  m.def("ftt_param_rows", [](std::size_t stages) { return rows_of(ftt_param_count(FTTConfig::with_stages(stages))); },
        py::arg("m") = 3, "Rows (input, operation, params, out, stride) of the FTT stack.");
  m.def(
      "mbblock_param_rows",
      [](std::size_t c_in) {
        MBBlockConfig c;
        c.c_in = c_in;
        return rows_of(mbblock_param_count(c));
      },
      py::arg("c_in") = 128);

  m.def("cosine_lr", &cosine_lr, py::arg("epoch"), py::arg("max_epochs"), py::arg("lr0"));
  m.def(
      "auroc", [](const std::vector<double>& s, const std::vector<int>& y) { return auroc(s, y); },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "accuracy",
      [](const std::vector<double>& s, const std::vector<int>& y, double t) { return accuracy(s, y, t); },
      py::arg("scores"), py::arg("labels"), py::arg("threshold") = 0.5);

  m.def("load_ppm", [](const std::filesystem::path& p) { return image_array(load_ppm(p)); });
  m.def("save_ppm", [](py::array_t<std::uint8_t> a, const std::filesystem::path& p) { save_ppm(image_from(a), p); });

  m.def(
      "generate_synthetic",
      [](std::size_t n_per_class, std::uint64_t seed, double amplitude, std::optional<std::filesystem::path> out) {
        SyntheticTaskConfig cfg;
        cfg.n_per_class = n_per_class;
        cfg.seed = seed;
        cfg.artifact_amplitude = amplitude;
        const auto data = generate_synthetic(cfg, out);
        const std::size_t n = data.size(), s = cfg.image_size;
        py::array_t<std::uint8_t> images({n, s, s, std::size_t(3)});
        py::array_t<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
          std::memcpy(images.mutable_data() + i * s * s * 3, data.items[i].image.data.data(), s * s * 3);
          labels.mutable_at(i) = data.items[i].label;
        }
        return py::make_tuple(images, labels);
      },
      py::arg("n_per_class") = 100, py::arg("seed") = 42, py::arg("artifact_amplitude") = 0.25,
      py::arg("out_dir") = std::nullopt, "Returns (uint8 images (n, 64, 64, 3), labels).");

  py::class_<Model>(m, "Model")
      .def_static(
          "assemble",
          [](std::size_t stages, std::size_t n_blocks, bool use_ftt, std::uint64_t seed) {
            ModelConfig c;
            c.ftt = FTTConfig::with_stages(stages);
            c.n_blocks = n_blocks;
            c.use_ftt = use_ftt;
            c.seed = seed;
            return Model::assemble(c);
          },
          py::arg("m") = 3, py::arg("n") = 4, py::arg("use_ftt") = true, py::arg("seed") = 0)
      .def_static("load", &Model::load, py::arg("path"))
      .def("save", &Model::save, py::arg("path"))
      .def("predict_proba", [](const Model& mdl, py::array_t<float> batch) { return mdl.predict_proba(batch_from(batch)); })
      .def_property_readonly("trainable_param_count", &Model::trainable_param_count)
      .def_property_readonly("backbone_param_count", &Model::backbone_param_count)
      .def_property_readonly("backbone_checksum", &Model::backbone_checksum)
      .def_property_readonly("backbone_frozen", &Model::backbone_frozen)
      .def_property_readonly("config_json", [](const Model& mdl) { return mdl.config().to_json(); })
      .def("freeze_backbone", &Model::freeze_backbone, py::arg("frozen") = true);
}
