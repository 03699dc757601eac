#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fedzmg/analysis.hpp"
#include "fedzmg/commands.hpp"
#include "fedzmg/config.hpp"
#include "fedzmg/engine.hpp"
#include "fedzmg/fed_data.hpp"
#include "fedzmg/theory.hpp"
#include "fedzmg/zmg.hpp"

namespace py = pybind11;
using namespace fedzmg;

namespace {

py::dict round_dict(const RoundRecord& r) {
    py::dict d;
    d["round"] = r.round;
    d["val_accuracy"] = r.val_accuracy;
    d["val_loss"] = r.val_loss;
    d["train_loss"] = r.train_loss;
    d["cohort"] = r.cohort;
    d["values_down"] = r.values_down;
    d["values_up"] = r.values_up;
    return d;
}

}  // namespace

PYBIND11_MODULE(_fedzmg, m) {
    m.doc() = "Zero-mean gradient projection for federated learning simulations.";
    m.attr("__version__") = FEDZMG_VERSION;

    auto error = py::register_exception<Error>(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
    py::register_exception<DimensionError>(m, "DimensionError", error.ptr());
    py::register_exception<NumericError>(m, "NumericError", error.ptr());
    py::register_exception<SeriesError>(m, "SeriesError", error.ptr());
    py::register_exception<DegenerateVarianceError>(m, "DegenerateVarianceError", error.ptr());
    py::register_exception<DivergenceError>(m, "DivergenceError", error.ptr());

    m.def("project_vector", [](const std::vector<double>& g) { return project_vector(g).values; }, py::arg("g"),
          "Subtract the mean from every coordinate.");
    m.def("project_matrix_columns",
          [](const std::vector<double>& g, std::size_t in_dim, std::size_t out_dim) {
              return project_matrix_columns(g, in_dim, out_dim);
          },
          py::arg("g"), py::arg("in_dim"), py::arg("out_dim"),
          "Center each column of a row-major (in_dim, out_dim) matrix.");
    m.def("projected_variance", &projected_variance, py::arg("covariance"));
    m.def("verify_lemma2",
          [](const Eigen::MatrixXd& s, std::size_t trials, std::uint64_t seed, std::size_t workers) {
              const auto r = verify_lemma2(s, trials, seed, workers);
              return py::make_tuple(r.analytic, r.empirical);
          },
          py::arg("covariance"), py::arg("trials"), py::arg("seed") = 1, py::arg("workers") = 1,
          "Returns (analytic, empirical).");

    py::class_<TTestResult>(m, "TTestResult")
        .def_readonly("t_statistic", &TTestResult::t_statistic)
        .def_readonly("p_value", &TTestResult::p_value)
        .def_readonly("n", &TTestResult::n)
        .def_readonly("mean_diff", &TTestResult::mean_diff)
        .def_readonly("std_diff", &TTestResult::std_diff)
        .def_readonly("dof", &TTestResult::dof)
        .def("significant", &TTestResult::significant, py::arg("alpha") = 0.05);
    m.def("paired_t_test", &paired_t_test, py::arg("a"), py::arg("b"));
    m.def("student_t_cdf", &student_t_cdf, py::arg("t"), py::arg("dof"));

    m.def("normalized_entropy", &normalized_entropy, py::arg("counts"));
    m.def("gini_coefficient", &gini_coefficient, py::arg("counts"));

    m.def("config_hashes",
          [](const std::string& text) {
              std::vector<std::string> out;
              for (const auto& c : parse_run_config(text).cells()) out.push_back(config_hash(c));
              return out;
          },
          py::arg("text"));

    // Runs every (algorithm, seed) cell of a config and returns one list of
    // round dicts per cell, keyed by (algorithm, seed).
    m.def("run_config",
          [](const std::string& text, const std::filesystem::path& base_dir) {
              const auto rc = parse_run_config(text, base_dir);
              const auto fed = load_federation(rc.base);
              py::dict out;
              for (const auto& c : rc.cells()) {
                  ExperimentResult res;
                  {
                      py::gil_scoped_release release;
                      res = run_experiment(c, fed);
                  }
                  py::list rounds;
                  for (const auto& r : res.rounds) rounds.append(round_dict(r));
                  out[py::make_tuple(to_string(c.algorithm), c.seed)] = rounds;
              }
              return out;
          },
          py::arg("text"), py::arg("base_dir") = std::filesystem::path{});

    m.def("verify_convergence",
          [](std::size_t steps, std::size_t epochs, std::uint64_t seed) {
              TheoryConfig cfg;
              cfg.steps = steps;
              cfg.fit_to = steps;
              cfg.epochs = epochs;
              cfg.seed = seed;
              ConvergenceCheck r;
              {
                  py::gil_scoped_release release;
                  r = verify_convergence(cfg);
              }
              py::dict d;
              d["bound_satisfied"] = r.bound_satisfied;
              d["delta_series"] = r.delta_series;
              d["delta"] = r.constants.delta;
              d["gamma"] = r.constants.gamma;
              d["c_zmg"] = r.constants.c_zmg;
              d["c_fedavg_analog"] = r.constants.c_fedavg_analog;
              d["max_mean_direction_drift"] = r.max_mean_direction_drift;
              return d;
          },
          py::arg("steps") = 10000, py::arg("epochs") = 4, py::arg("seed") = 1);
}
