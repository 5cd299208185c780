// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <json.hpp>

#include "mlsgm/csac.hpp"
#include "mlsgm/dataio.hpp"
#include "mlsgm/error.hpp"
#include "mlsgm/harness.hpp"
#include "mlsgm/losses.hpp"
#include "mlsgm/metrics.hpp"

namespace py = pybind11;
using namespace mlsgm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  std::vector<std::size_t> shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }
std::vector<int> to_ints(const IntArray& a) { return {a.data(), a.data() + a.size()}; }

std::vector<losses::TriStateLabels> label_rows(const IntArray& a) {
  if (a.ndim() != 2) throw ShapeError("labels must be a 2-d array");
  const auto n = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  std::vector<losses::TriStateLabels> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i].assign(a.data() + i * c, a.data() + (i + 1) * c);
  return out;
}

IntArray label_array(const std::vector<dataio::Sample>& samples, std::size_t classes) {
  IntArray out({static_cast<py::ssize_t>(samples.size()), static_cast<py::ssize_t>(classes)});
  int* p = out.mutable_data();
  for (const auto& s : samples) p = std::copy(s.labels.begin(), s.labels.end(), p);
  return out;
}

py::object from_json(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json to_json(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-label recognition by instance-label graph matching";
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_OSError);

  m.def(
      "encode_tensor", [](const Array& a) {
        const auto bytes = dataio::encode_tensor(to_tensor(a));
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      "Serialize an array in the MLSG tensor format.");
  m.def(
      "decode_tensor", [](const py::bytes& b) {
        const std::string s = b;
        return to_array(dataio::decode_tensor({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}));
      },
      "Parse MLSG tensor bytes.");
  m.def("save_tensor", [](const Array& a, const std::filesystem::path& p) { dataio::save_tensor(to_tensor(a), p); });
  m.def("load_tensor", [](const std::filesystem::path& p) { return to_array(dataio::load_tensor(p)); });

  m.def(
      "localize", [](const Array& map) {
        const auto b = csac::localize(to_tensor(map));
        return py::make_tuple(b.x, b.y, b.w, b.h);
      },
      "Normalized (x, y, w, h) box of the largest segment above 20% of the peak.");

  m.def("max_pool", [](const Array& s) { return losses::max_pool(to_tensor(s)); });
  m.def(
      "weighted_bce",
      [](const Array& p, const IntArray& y, const Array& priors, double beta) {
        return losses::weighted_bce(to_vector(p), to_ints(y), to_vector(priors), beta);
      },
      py::arg("p"), py::arg("y"), py::arg("priors"), py::arg("beta") = 0.0);
  m.def(
      "partial_bce",
      [](const Array& p, const IntArray& y, double alpha, double theta, double mu) {
        return losses::partial_bce(to_vector(p), to_ints(y), {alpha, theta, mu});
      },
      py::arg("p"), py::arg("y"), py::arg("alpha") = -4.45, py::arg("theta") = 5.45, py::arg("mu") = 1.0);
  m.def(
      "asymmetric_focal",
      [](const Array& p, const IntArray& y, double gamma_pos, double gamma_neg, double margin) {
        return losses::asymmetric_focal(to_vector(p), to_ints(y), {gamma_pos, gamma_neg, margin});
      },
      py::arg("p"), py::arg("y"), py::arg("gamma_pos") = 0.0, py::arg("gamma_neg") = 4.0, py::arg("margin") = 0.05);

  m.def("average_precision", [](const Array& scores, const IntArray& truth) {
    try {
      return metrics::average_precision(to_vector(scores), to_ints(truth));
    } catch (const metrics::UndefinedClassError& e) {
      throw py::value_error(e.what());
    }
  });
  m.def(
      "evaluate",
      [](const Array& scores, const IntArray& truth, std::vector<std::string> names) {
        const auto t = to_tensor(scores);
        if (names.empty())
          for (std::size_t c = 0; c < t.cols(); ++c) names.push_back("class" + std::to_string(c));
        return from_json(harness::report_json(metrics::evaluate(t, label_rows(truth)), names));
      },
      py::arg("scores"), py::arg("truth"), py::arg("names") = std::vector<std::string>{},
      "mAP plus threshold and top-3 precision/recall/F1 as a dict.");

  m.def(
      "drop_labels",
      [](const IntArray& labels, double fraction, std::uint64_t seed) {
        auto rows = label_rows(labels);
        std::vector<dataio::Sample> samples(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) samples[i].labels = std::move(rows[i]);
        dataio::drop_labels(samples, fraction, seed);
        return label_array(samples, labels.shape(1));
      },
      py::arg("labels"), py::arg("known_fraction"), py::arg("seed"));

  m.def(
      "synth_dataset",
      [](std::size_t n, std::size_t classes, std::size_t channels, std::size_t height, std::size_t width,
         std::size_t embedding_dim, std::size_t n_test, std::uint64_t seed) {
        const auto d = dataio::synth_dataset({n, n_test, classes, channels, height, width, embedding_dim, seed});
        py::list train, test;
        for (const auto& s : d.train_samples) train.append(to_array(s.features));
        for (const auto& s : d.test_samples) test.append(to_array(s.features));
        py::dict out;
        out["categories"] = d.train.categories;
        out["features"] = train;
        out["labels"] = label_array(d.train_samples, classes);
        out["test_features"] = test;
        out["test_labels"] = label_array(d.test_samples, classes);
        out["embeddings"] = to_array(d.embeddings);
        return out;
      },
      py::arg("n") = 16, py::arg("classes") = 4, py::arg("channels") = 8, py::arg("height") = 8, py::arg("width") = 8,
      py::arg("embedding_dim") = 8, py::arg("n_test") = 0, py::arg("seed") = 0);

  m.def(
      "gradient_check",
      [](std::uint64_t seed) {
        dataio::SynthSpec spec;
        spec.n = 2;
        spec.classes = 4;
        spec.channels = 8;
        spec.height = 4;
        spec.width = 4;
        spec.seed = seed;
        py::gil_scoped_release release;
        const auto r = harness::gradient_check(spec, {16, 8}, seed);
        py::gil_scoped_acquire acquire;
        py::dict out;
        out["max_rel_error"] = r.max_rel_error;
        out["parameters"] = r.parameters;
        out["seconds"] = r.seconds;
        return out;
      },
      py::arg("seed") = 0, "Finite-difference check of the full pipeline (D=8, C=4, 4x4 maps, two images).");

  m.def(
      "run",
      [](const py::dict& config) {
        const auto cfg = harness::RunConfig::from_json(to_json(config));
        py::gil_scoped_release release;
        return harness::run(cfg);
      },
      py::arg("config"), "Run a configuration as the command-line tool would; returns the exit code.");
}
