/*
 * Copyright 2026 The mvcot Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "json.hpp"
#include "mvcot/dataset.hpp"
#include "mvcot/eval.hpp"
#include "mvcot/losses.hpp"
#include "mvcot/metrics.hpp"
#include "mvcot/prototypes.hpp"
#include "mvcot/training.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace mvcot {
namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

SeriesTensor to_tensor(const FloatArray& x) {
  if (x.ndim() == 2) {
    SeriesTensor t(x.shape(0), x.shape(1), 1);
    std::memcpy(t.values.data(), x.data(), t.values.size() * sizeof(float));
    return t;
  }
  if (x.ndim() != 3) throw std::invalid_argument("series must have shape [n, length] or [n, length, channels]");
  SeriesTensor t(x.shape(0), x.shape(1), x.shape(2));
  std::memcpy(t.values.data(), x.data(), t.values.size() * sizeof(float));
  return t;
}

FloatArray from_tensor(const SeriesTensor& t) {
  FloatArray out({t.n, t.length, t.channels});
  std::memcpy(out.mutable_data(), t.values.data(), t.values.size() * sizeof(float));
  return out;
}

std::vector<int> to_labels(const IntArray& y) { return {y.data(), y.data() + y.size()}; }

TimeSeriesDataset to_dataset(const FloatArray& x, const std::optional<IntArray>& y) {
  TimeSeriesDataset ds;
  ds.samples = to_tensor(x);
  if (y) {
    ds.labels = to_labels(*y);
    ds.class_count = ds.labels->empty() ? 0 : *std::max_element(ds.labels->begin(), ds.labels->end()) + 1;
  }
  ds.validate();
  return ds;
}

py::tuple dataset_tuple(const TimeSeriesDataset& ds) {
  py::object labels = py::none();
  if (ds.labels) labels = py::array_t<int>(ds.labels->size(), ds.labels->data());
  return py::make_tuple(from_tensor(ds.samples), labels);
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig c;
  if (!text.empty()) c = json::parse(text).get<TrainConfig>();
  return c;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["accuracy"] = r.accuracy;
  d["auroc"] = r.auroc;
  d["nmi"] = r.nmi;
  d["regularization"] = r.regularization;
  py::list per_class;
  for (const auto& c : r.per_class) {
    py::dict e;
    e["label"] = c.label;
    e["support"] = c.support;
    e["recall"] = c.recall;
    e["auroc"] = c.auroc;
    per_class.append(e);
  }
  d["per_class"] = per_class;
  return d;
}

// Trained encoders plus the per-batch and per-epoch training log.
struct Model {
  TrainState state;
  std::vector<BatchRecord> batches;
  std::vector<EpochRecord> epochs;
  std::optional<double> initial_nmi;

  Matrix embed(const FloatArray& x, const std::string& variant) const {
    TimeSeriesDataset ds;
    ds.samples = to_tensor(x);
    return extract_embeddings(state, build_views(ds, state.normalization), variant_from_string(variant));
  }
};

Model fit(const FloatArray& x, const std::optional<IntArray>& y, const std::string& config_json,
          const std::optional<double>& labeled_fraction) {
  const auto ds = to_dataset(x, y);
  TrainConfig cfg = parse_config(config_json);
  if (cfg.class_count == 0) cfg.class_count = ds.class_count.value_or(0);
  const auto norm = fit_view_normalization(ds, cfg.log_magnitude);
  const auto views = build_views(ds, norm);
  TrainResult r;
  {
    py::gil_scoped_release release;
    if (labeled_fraction) {
      cfg.mode = TrainMode::semi_supervised;
      cfg.labeled_fraction = *labeled_fraction;
      r = train_semi_supervised(views, label_subset(ds, *labeled_fraction, derive_seed(cfg.seed, {0x21})), cfg, norm);
    } else {
      r = train(views, cfg, norm);
    }
  }
  return {std::move(r.state), std::move(r.batches), std::move(r.epochs), r.initial_nmi};
}

void register_errors(py::module_& m) {
  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  static py::exception<DataError> data(m, "DataError", base.ptr());
  static py::exception<NumericError> numeric(m, "NumericError", base.ptr());
  static py::exception<IoError> io(m, "IoError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const DataError& e) {
      PyErr_SetString(data.ptr(), e.what());
    } catch (const NumericError& e) {
      PyErr_SetString(numeric.ptr(), e.what());
    } catch (const IoError& e) {
      PyErr_SetString(io.ptr(), e.what());
    } catch (const Error& e) {
      PyErr_SetString(base.ptr(), e.what());
    } catch (const json::exception& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });
}

}  // namespace
}  // namespace mvcot

PYBIND11_MODULE(_core, m) {
  using namespace mvcot;
  m.doc() = "Multi-view prototype co-training of time-series encoders";
  register_errors(m);

  m.def("generate_synthetic", [](int n_per_class, int length, int channels, int classes, std::uint64_t seed) {
    return dataset_tuple(generate_synthetic(n_per_class, length, channels, classes, seed));
  }, py::arg("n_per_class"), py::arg("length"), py::arg("channels"), py::arg("classes"), py::arg("seed") = 0);
  m.def("load_dataset", [](const std::filesystem::path& p) { return dataset_tuple(load_dataset(p)); }, py::arg("path"));
  m.def("write_dataset", [](const std::filesystem::path& p, const FloatArray& x, const std::optional<IntArray>& y) {
    write_dataset(to_dataset(x, y), p);
  }, py::arg("path"), py::arg("x"), py::arg("y") = py::none());
  m.def("magnitude_spectrum", [](const FloatArray& x, bool log_magnitude) {
    return from_tensor(magnitude_spectrum(to_tensor(x), log_magnitude));
  }, py::arg("x"), py::arg("log_magnitude") = false);

  m.def("instance_loss", [](const Matrix& z, const Matrix& zp, double tau, bool ntxent) {
    auto r = instance_loss(z, zp, tau, ntxent);
    return py::make_tuple(r.value, r.grad_clean, r.grad_augmented);
  }, py::arg("z"), py::arg("z_aug"), py::arg("tau") = 0.1, py::arg("ntxent") = false);
  m.def("cot_loss", [](const Matrix& e, const IntArray& sel, const Matrix& protos,
                       const std::vector<std::uint8_t>& valid, double tau) {
    auto r = cot_loss(e, to_labels(sel), protos, valid, tau);
    return py::make_tuple(r.value, r.grad);
  }, py::arg("emb"), py::arg("selected"), py::arg("prototypes"), py::arg("valid"), py::arg("tau_proto") = 1.0);

  m.def("kmeans", [](const Matrix& emb, int clusters, std::uint64_t seed) {
    auto r = kmeans(emb, clusters, seed);
    return py::make_tuple(r.centroids, r.assignments, r.inertia_history);
  }, py::arg("emb"), py::arg("clusters"), py::arg("seed") = 0);
  m.def("cross_view_prototypes", [](const Matrix& emb, const IntArray& other, const Matrix& fallback) {
    auto r = cross_view_prototypes(emb, to_labels(other), fallback);
    return py::make_tuple(r.prototypes, r.valid);
  }, py::arg("emb"), py::arg("other_assign"), py::arg("fallback"));
  m.def("moving_average_update", [](Matrix intra, const Matrix& batch, const IntArray& assign, double gamma) {
    moving_average_update(intra, batch, to_labels(assign), gamma);
    return intra;
  }, py::arg("prototypes"), py::arg("batch_emb"), py::arg("batch_assign"), py::arg("gamma"));

  m.def("auroc_macro", [](const Matrix& scores, const IntArray& y) { return auroc_macro(scores, to_labels(y)); },
        py::arg("scores"), py::arg("labels"));
  m.def("nmi", [](const IntArray& a, const IntArray& b) { return nmi(to_labels(a), to_labels(b)); },
        py::arg("pred"), py::arg("truth"));
  m.def("linear_probe", [](const Matrix& xtr, const IntArray& ytr, const Matrix& xte, const IntArray& yte,
                           std::uint64_t seed) {
    return report_dict(linear_probe(xtr, to_labels(ytr), xte, to_labels(yte), seed));
  }, py::arg("train_emb"), py::arg("train_labels"), py::arg("test_emb"), py::arg("test_labels"), py::arg("seed") = 0);

  py::class_<Model>(m, "Model")
      .def("embed", &Model::embed, py::arg("x"), py::arg("variant") = "full")
      .def("save", [](const Model& s, const std::filesystem::path& p) { checkpoint(s.state, p); }, py::arg("path"))
      .def_property_readonly("epoch", [](const Model& s) { return s.state.epoch; })
      .def_property_readonly("config", [](const Model& s) { return json(s.state.config).dump(); })
      .def_property_readonly("initial_nmi", [](const Model& s) { return s.initial_nmi; })
      .def_property_readonly("batch_losses", [](const Model& s) {
        py::list out;
        for (const auto& b : s.batches)
          out.append(py::make_tuple(b.epoch, b.batch, b.loss.inst_h, b.loss.inst_g, b.loss.cot_h, b.loss.cot_g,
                                    b.loss.total));
        return out;
      })
      .def_property_readonly("epoch_log", [](const Model& s) {
        py::list out;
        for (const auto& e : s.epochs) {
          py::dict d;
          d["epoch"] = e.epoch;
          d["phase"] = e.phase;
          d["total"] = e.mean.total;
          d["nmi"] = e.nmi ? py::cast(*e.nmi) : py::none();
          out.append(d);
        }
        return out;
      });

  m.def("_train", &fit, py::arg("x"), py::arg("y"), py::arg("config_json"), py::arg("labeled_fraction"));
  m.def("restore", [](const std::filesystem::path& p) { return Model{restore(p), {}, {}, std::nullopt}; },
        py::arg("path"));
}
