// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <iostream>
#include <sstream>

#include "attreval/attribution.hpp"
#include "attreval/data.hpp"
#include "attreval/error.hpp"
#include "attreval/models.hpp"
#include "attreval/pipeline.hpp"
#include "attreval/stats.hpp"
#include "attreval/xai_metrics.hpp"

namespace py = pybind11;
using namespace attreval;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape.begin(), t.shape.end()));
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

Mask to_mask(const MaskArray& m) {
  if (m.ndim() != 2) throw ShapeError("mask must be 2-D");
  Mask out(static_cast<std::size_t>(m.shape(0)), static_cast<std::size_t>(m.shape(1)));
  for (py::ssize_t i = 0; i < m.size(); ++i) out.bits[static_cast<std::size_t>(i)] = m.data()[i] ? 1 : 0;
  return out;
}

std::span<const double> values_of(const Array& a) {
  return {a.data(), static_cast<std::size_t>(a.size())};
}

void check_same_size(const Array& v, const MaskArray& m) {
  if (v.size() != m.size()) throw ShapeError("relevance and mask sizes differ");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Attribution evaluation for residual image classifiers";
  m.attr("__version__") = "0.1.0";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<StateError>(m, "StateError", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("mini_family", &mini_family);
  m.def("count_parameters", [](const std::string& name) { return count_parameters(spec_by_name(name)); },
        py::arg("name"));

  m.def(
      "generate_synthetic",
      [](std::size_t diseased, std::size_t healthy, std::size_t side, std::uint64_t seed) {
        SyntheticConfig cfg;
        cfg.diseased = diseased;
        cfg.healthy = healthy;
        cfg.side = side;
        cfg.seed = seed;
        Preprocess pre;
        pre.height = pre.width = side;
        py::list out;
        for (const Sample& s : generate_synthetic(cfg, pre)) {
          py::dict d;
          d["id"] = s.id;
          d["label"] = s.label;
          d["image"] = to_array(s.image);
          MaskArray mask({static_cast<py::ssize_t>(s.mask.height), static_cast<py::ssize_t>(s.mask.width)});
          std::copy(s.mask.bits.begin(), s.mask.bits.end(), mask.mutable_data());
          d["mask"] = mask;
          out.append(d);
        }
        return out;
      },
      py::arg("diseased") = 400, py::arg("healthy") = 200, py::arg("side") = 32, py::arg("seed") = 42);

  m.def(
      "rra",
      [](const Array& v, const MaskArray& mask, bool magnitude) {
        check_same_size(v, mask);
        return relevance_rank_accuracy(values_of(v), to_mask(mask), magnitude);
      },
      py::arg("relevance"), py::arg("mask"), py::arg("magnitude") = false);
  m.def(
      "par",
      [](const Array& v, const MaskArray& mask) {
        check_same_size(v, mask);
        const RatioScore s = positive_attribution_ratio(values_of(v), to_mask(mask));
        return py::make_tuple(s.value, s.degenerate);
      },
      py::arg("relevance"), py::arg("mask"));
  m.def(
      "rma",
      [](const Array& v, const MaskArray& mask) {
        check_same_size(v, mask);
        const RatioScore s = relevance_mass_accuracy(values_of(v), to_mask(mask));
        return py::make_tuple(s.value, s.degenerate);
      },
      py::arg("relevance"), py::arg("mask"));

  m.def(
      "kruskal_wallis",
      [](const std::vector<std::vector<double>>& groups) {
        const stats::KruskalWallisResult r = stats::kruskal_wallis(groups);
        return py::make_tuple(r.h, r.df, r.p);
      },
      py::arg("groups"));
  m.def(
      "mann_whitney_u",
      [](const std::vector<double>& a, const std::vector<double>& b, bool exact) {
        const stats::MannWhitneyResult r =
            stats::mann_whitney_u(a, b, exact ? stats::MwuMode::kExact : stats::MwuMode::kNormal);
        py::dict d;
        d["u"] = r.u;
        d["z"] = r.z;
        d["p"] = r.p;
        d["exact"] = r.mode == stats::MwuMode::kExact;
        d["notice"] = r.notice;
        return d;
      },
      py::arg("a"), py::arg("b"), py::arg("exact") = false);
  m.def("bonferroni", [](const std::vector<double>& p, std::size_t n) { return stats::bonferroni(p, n); },
        py::arg("pvalues"), py::arg("m"));

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& name, std::uint64_t seed) { return Model(spec_by_name(name), seed); }),
           py::arg("name"), py::arg("seed") = 42)
      .def_static(
          "load", [](const std::string& path) { return Model(std::move(*load_checkpoint(path).model)); },
          py::arg("path"))
      .def_property_readonly("name", [](const Model& self) { return std::string(self.name()); })
      .def("num_parameters", [](const Model& self) { return count_parameters(self); })
      .def("logits", [](const Model& self, const Array& x) { return to_array(self.logits(to_tensor(x))); },
           py::arg("x"))
      .def(
          "saliency", [](const Model& self, const Array& x, int c) { return to_array(saliency(self, to_tensor(x), c)); },
          py::arg("x"), py::arg("target"))
      .def(
          "integrated_gradients",
          [](const Model& self, const Array& x, int c, std::size_t steps) {
            IGConfig cfg;
            cfg.steps = steps;
            const IGResult r = integrated_gradients(self, to_tensor(x), c, cfg);
            return py::make_tuple(to_array(r.values), r.score_delta, r.gap);
          },
          py::arg("x"), py::arg("target"), py::arg("steps") = 64)
      .def(
          "gradient_shap",
          [](const Model& self, const Array& x, int c, std::size_t samples, double sigma, std::uint64_t seed) {
            const Tensor xt = to_tensor(x);
            GSConfig cfg;
            cfg.samples = samples;
            cfg.sigma = sigma;
            cfg.seed = seed;
            cfg.baselines = {black_image(xt.shape, 0.5, 0.5)};
            return to_array(gradient_shap(self, xt, c, cfg));
          },
          py::arg("x"), py::arg("target"), py::arg("samples") = 64, py::arg("sigma") = 0.1, py::arg("seed") = 0);

  // Runs one pipeline stage and returns its log output.
  m.def(
      "run_stage",
      [](const std::string& config_path, const std::string& stage) {
        const ExperimentConfig cfg = load_config(config_path);
        std::ostringstream log;
        if (stage == "gen-data") cmd_gen_data(cfg, log);
        else if (stage == "train") cmd_train(cfg, std::nullopt, log);
        else if (stage == "explain") cmd_explain(cfg, std::nullopt, std::nullopt, false, log);
        else if (stage == "evaluate") cmd_evaluate(cfg, log);
        else if (stage == "compare") cmd_compare(cfg, log);
        else if (stage == "report") cmd_report(cfg, log);
        else throw ConfigError("unknown stage '" + stage + "'");
        return log.str();
      },
      py::arg("config"), py::arg("stage"));
  m.def("config_hash", [](const std::string& path) { return config_hash(load_config(path)); }, py::arg("config"));
}
