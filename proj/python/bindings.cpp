#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <string>
#include <vector>

#include "clp/analysis.hpp"
#include "clp/backdoor.hpp"
#include "clp/clp.hpp"
#include "clp/errors.hpp"
#include "clp/eval.hpp"
#include "clp/model_graph.hpp"
#include "clp/model_io.hpp"
#include "clp/models.hpp"
#include "clp/tensor.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

clp::Tensor to_tensor(const Array& a) {
  clp::Shape shape(a.shape(), a.shape() + a.ndim());
  std::vector<float> data(a.data(), a.data() + a.size());
  return clp::Tensor(std::move(shape), std::move(data));
}

Array to_array(const clp::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::memcpy(out.mutable_data(), t.data().data(), t.size() * sizeof(float));
  return out;
}

clp::Dataset make_dataset(const Array& images, const std::vector<int>& labels,
                          std::size_t classes) {
  clp::Dataset d{to_tensor(images), labels, classes, clp::Split::Test};
  d.validate();
  return d;
}

clp::PoisonSpec make_spec(const clp::Shape& image_shape, const std::string& trigger,
                          const std::string& rule, int target, float alpha,
                          std::size_t patch_size) {
  clp::PoisonSpec spec;
  if (trigger == "patch") {
    spec = clp::make_patch_spec(image_shape, patch_size);
  } else if (trigger == "blended") {
    spec = clp::make_blended_spec(image_shape, alpha);
  } else {
    throw clp::ConfigError("unknown trigger '" + trigger + "'");
  }
  if (rule == "all-to-one") {
    spec.rule = clp::TargetRule::AllToOne;
  } else if (rule == "all-to-all") {
    spec.rule = clp::TargetRule::AllToAll;
  } else {
    throw clp::ConfigError("unknown rule '" + rule + "'");
  }
  spec.target = target;
  spec.validate(image_shape);
  return spec;
}

py::list stats_to_list(const std::vector<clp::ChannelStat>& stats) {
  py::list out;
  for (const auto& s : stats) {
    py::dict row;
    row["layer"] = s.layer;
    row["channel"] = s.channel;
    row["sigma"] = s.sigma;
    row["uclc"] = s.uclc;
    out.append(row);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Prune backdoor channels of a CNN by per-channel spectral norm";

  auto error = py::register_exception<clp::Error>(m, "ClpError", PyExc_RuntimeError);
  py::register_exception<clp::DimensionError>(m, "DimensionError", error);
  py::register_exception<clp::IndexError>(m, "IndexError", error);
  py::register_exception<clp::StructureError>(m, "StructureError", error);
  py::register_exception<clp::ConfigError>(m, "ConfigError", error);
  py::register_exception<clp::NumericalError>(m, "NumericalError", error);
  py::register_exception<clp::IoError>(m, "IoError", error);
  py::register_exception<clp::FormatError>(m, "FormatError", error);

  py::class_<clp::ModelGraph>(m, "Model")
      .def_property_readonly("input_shape", &clp::ModelGraph::input_shape)
      .def_property_readonly("class_count", &clp::ModelGraph::class_count)
      .def_property_readonly("parameter_count", &clp::ModelGraph::parameter_count)
      .def("__len__", &clp::ModelGraph::size)
      .def("layer_kinds", [](const clp::ModelGraph& g) {
        std::vector<std::string> kinds;
        for (const auto& l : g.layers()) kinds.push_back(clp::layer_kind_name(l));
        return kinds;
      })
      .def("conv_layers", &clp::ModelGraph::conv_layers)
      .def("conv_weight", [](const clp::ModelGraph& g, std::size_t i) {
        const auto& l = g.layer(i);
        if (!l.is<clp::Conv>()) throw clp::IndexError("layer " + std::to_string(i) + " is not a conv");
        return to_array(l.as<clp::Conv>().weight);
      })
      .def("conv_bias", [](const clp::ModelGraph& g, std::size_t i) {
        const auto& l = g.layer(i);
        if (!l.is<clp::Conv>()) throw clp::IndexError("layer " + std::to_string(i) + " is not a conv");
        return to_array(l.as<clp::Conv>().bias);
      })
      .def("forward", [](const clp::ModelGraph& g, const Array& batch) {
        clp::Tensor x = to_tensor(batch);
        clp::Tensor y;
        {
          py::gil_scoped_release release;
          y = clp::forward(g, x);
        }
        return to_array(y);
      }, py::arg("batch"))
      .def("fused", [](const clp::ModelGraph& g) { return clp::fuse_conv_bn(g); })
      .def("has_batchnorm", [](const clp::ModelGraph& g) { return clp::has_batchnorm(g); })
      .def("save", [](const clp::ModelGraph& g, const std::filesystem::path& p) { clp::save_model(g, p); })
      .def("to_bytes", [](const clp::ModelGraph& g) {
        auto bytes = clp::serialize_model(g);
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      })
      .def("manifest", [](const clp::ModelGraph& g) { return clp::model_manifest(g); })
      .def("__eq__", [](const clp::ModelGraph& a, const clp::ModelGraph& b) { return a == b; });

  m.def("load_model", [](const std::filesystem::path& p) { return clp::load_model(p); }, py::arg("path"));
  m.def("model_from_bytes", [](const py::bytes& b) {
    std::string s = b;
    return clp::deserialize_model(std::vector<std::uint8_t>(s.begin(), s.end()));
  });
  m.def("make_tinynet", &clp::make_tinynet, py::arg("input_shape"), py::arg("classes"),
        py::arg("seed") = 0);
  m.def("make_resnet18", &clp::make_resnet18, py::arg("input_shape"), py::arg("classes"),
        py::arg("seed") = 0);

  m.def("spectral_norm", [](const Array& a) {
    if (a.ndim() != 2) throw clp::DimensionError("spectral_norm expects a 2-D array");
    clp::Matrix mat(a.shape(0), a.shape(1), std::vector<float>(a.data(), a.data() + a.size()));
    return clp::spectral_norm(mat);
  });

  m.def("channel_sigma", [](const clp::ModelGraph& fused) {
    return stats_to_list(clp::channel_sigma(fused));
  }, py::arg("fused"));
  m.def("uclc", [](const clp::ModelGraph& fused) { return stats_to_list(clp::uclc(fused)); },
        py::arg("fused"));

  m.def("defend", [](const clp::ModelGraph& model, float u) {
    std::pair<clp::ModelGraph, clp::PruneIndexSet> r;
    {
      py::gil_scoped_release release;
      r = clp::clp_defend(model, u);
    }
    std::vector<clp::Probe> pruned(r.second.entries.begin(), r.second.entries.end());
    return py::make_tuple(std::move(r.first), pruned);
  }, py::arg("model"), py::arg("u") = 3.0f,
     "Returns (pruned fused model, [(layer, channel), ...]).");

  m.def("synthetic_dataset", [](std::size_t classes, std::size_t per_class, std::size_t size,
                                std::uint64_t seed) {
    clp::Dataset d = clp::make_synthetic_dataset(classes, per_class, size, seed);
    return py::make_tuple(to_array(d.images), d.labels);
  }, py::arg("classes"), py::arg("per_class"), py::arg("size") = 16, py::arg("seed") = 1,
     "Returns (images (N,3,size,size) float32, labels list).");

  m.def("apply_trigger", [](const Array& images, const std::string& trigger, float alpha,
                            std::size_t patch_size) {
    clp::Tensor x = to_tensor(images);
    if (x.rank() != 4) throw clp::DimensionError("apply_trigger expects (N,C,H,W)");
    clp::Shape image_shape(x.shape().begin() + 1, x.shape().end());
    auto spec = make_spec(image_shape, trigger, "all-to-one", 0, alpha, patch_size);
    return to_array(clp::apply_trigger_batch(x, spec));
  }, py::arg("images"), py::arg("trigger") = "patch", py::arg("alpha") = 0.1f,
     py::arg("patch_size") = 3);

  m.def("evaluate", [](const clp::ModelGraph& model, const Array& images,
                       const std::vector<int>& labels, const std::string& trigger,
                       const std::string& rule, int target, float alpha) {
    auto data = make_dataset(images, labels, model.class_count());
    auto spec = make_spec(data.image_shape(), trigger, rule, target, alpha, 3);
    clp::EvalReport r;
    {
      py::gil_scoped_release release;
      r = clp::evaluate(model, data, spec);
    }
    py::dict out;
    out["acc"] = r.acc;
    out["asr"] = r.asr;
    out["n_clean"] = r.n_clean;
    out["n_attack"] = r.n_attack;
    return out;
  }, py::arg("model"), py::arg("images"), py::arg("labels"), py::arg("trigger") = "patch",
     py::arg("rule") = "all-to-one", py::arg("target") = 0, py::arg("alpha") = 0.1f);

  m.def("pearson", &clp::pearson, py::arg("x"), py::arg("y"));
}
