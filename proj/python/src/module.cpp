#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cazsl/error.hpp"
#include "cazsl/eval.hpp"
#include "cazsl/gradcheck.hpp"
#include "cazsl/training.hpp"

namespace py = pybind11;
using namespace cazsl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  if (shape.empty()) shape = {1};
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict dataset_arrays(const Dataset& d) {
  py::dict out;
  out["x"] = to_array(d.inputs());
  out["y"] = to_array(d.targets());
  out["contexts"] = to_array(d.contexts());
  std::vector<std::string> ids;
  for (const Sample& s : d.samples()) ids.push_back(s.object_id);
  out["object_ids"] = ids;
  return out;
}

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json py_to_json(const py::object& o) {
  if (py::isinstance<py::str>(o)) return nlohmann::json::parse(o.cast<std::string>());
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

}  // namespace

PYBIND11_MODULE(_cazsl, m) {
  m.doc() = "Context-aware zero-shot learning: models, data and experiments";

  static py::exception<Error> error(m, "Error");
  static py::exception<ConfigError> config_error(m, "ConfigError", error.ptr());
  static py::exception<DataError> data_error(m, "DataError", error.ptr());
  static py::exception<NumericError> numeric_error(m, "NumericError", error.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      switch (e.category()) {
        case ErrorCategory::kConfig:
          config_error(e.what());
          return;
        case ErrorCategory::kData:
          data_error(e.what());
          return;
        case ErrorCategory::kNumeric:
          numeric_error(e.what());
          return;
      }
      error(e.what());
    }
  });

  m.attr("variants") = [] {
    std::vector<std::string> names;
    for (Variant v : kAllVariants) names.push_back(to_string(v));
    return names;
  }();

  m.def("rbf_kernel_matrix",
        [](const Array& points, double xi, double ell) {
          return to_array(rbf_kernel_matrix(to_tensor(points), xi, ell));
        },
        py::arg("points"), py::arg("xi"), py::arg("ell"),
        "Covariance xi^2 exp(-|a-b|^2 / (2 ell)) over a 1-d point set.");

  m.def("cholesky", [](const Array& a) { return to_array(cholesky(to_tensor(a))); },
        py::arg("a"), "Lower Cholesky factor with jitter fallback.");

  m.def("sample_gp_trajectory",
        [](std::uint64_t seed, double xi, double ell, std::size_t length) {
          Rng rng(seed);
          return to_array(sample_gp_trajectory(rng, xi, ell, length));
        },
        py::arg("seed"), py::arg("xi"), py::arg("ell"), py::arg("length"));

  m.def("simulate_gp_dataset",
        [](std::uint64_t seed, std::size_t tasks, std::size_t samples_per_task) {
          Rng rng(seed);
          return dataset_arrays(simulate_gp_dataset(rng, tasks, samples_per_task));
        },
        py::arg("seed"), py::arg("tasks"), py::arg("samples_per_task") = 20,
        "Windowed GP tasks as arrays x [N,3], y [N,1], contexts [N,2].");

  m.def("load_push_dataset",
        [](const std::string& path, const std::string& context) {
          std::optional<ContextKind> kind;
          if (!context.empty()) kind = parse_context_kind(context);
          return dataset_arrays(load_push_dataset(path, kind));
        },
        py::arg("path"), py::arg("context") = "",
        "Pushing records as arrays; context may be 'indicator' or 'visual'.");

  m.def("write_synthetic_push_dataset",
        [](const std::string& path, std::uint64_t seed, std::size_t objects,
           std::size_t pushes_per_object, bool visual) {
          write_synthetic_push_file(path, seed, objects, pushes_per_object, visual);
        },
        py::arg("path"), py::arg("seed"), py::arg("objects"), py::arg("pushes_per_object"),
        py::arg("visual") = false);

  m.def("rmse",
        [](const Array& pred, const Array& target) {
          return rmse(to_tensor(pred), to_tensor(target));
        },
        py::arg("pred"), py::arg("target"));

  m.def("rmse_to_mm", &rmse_to_mm, py::arg("rmse"),
        "Pushing RMSE in normalized units to millimetres.");

  m.def("run_experiment",
        [](const py::object& config) {
          const ExperimentConfig cfg = experiment_config_from_json(py_to_json(config));
          ExperimentResult r;
          {
            py::gil_scoped_release release;
            r = run_experiment(cfg);
          }
          py::dict out;
          out["table"] = r.table;
          out["csv"] = r.csv;
          out["report"] = json_to_py(r.json);
          return out;
        },
        py::arg("config"),
        "Runs an experiment from a config dict or JSON string; returns table, csv and report.");

  m.def("gradcheck",
        [](std::size_t seeds) {
          std::vector<std::uint64_t> s(seeds);
          for (std::size_t i = 0; i < seeds; ++i) s[i] = i;
          GradCheckReport r;
          {
            py::gil_scoped_release release;
            r = run_gradcheck_suite(s, {});
          }
          py::dict out;
          out["passed"] = r.passed();
          out["checks"] = r.entries.size();
          out["failures"] = r.failures();
          out["summary"] = format_report(r, false);
          return out;
        },
        py::arg("seeds") = 20);
}
