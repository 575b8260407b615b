#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>

#include "mcki/harness.hpp"
#include "mcki/pipeline.hpp"
#include "mcki/report.hpp"
#include "mcki/scoring.hpp"

namespace py = pybind11;
using namespace mcki;

namespace {

py::dict calibration_dict(const Calibration& c) {
  py::dict d;
  d["tau"] = c.tau;
  d["correct"] = c.correct;
  d["total"] = c.total;
  d["accuracy"] = c.accuracy();
  return d;
}

// Trains on a synthetic train split and evaluates single-insert MCKI on the
// matching test split. Returns the flat report.
KeyValues synthetic_run(int scenarios, int cases, Eigen::Index d_route, int epochs,
                        std::uint64_t seed) {
  const auto train = make_fixture_cases({scenarios, cases, "train"});
  const auto test = make_fixture_cases({scenarios, cases, "test"});
  SyntheticWorldConfig wc;
  wc.seed = seed;
  auto world = make_world(wc, {}, {&train, &test});
  auto backend =
      std::make_shared<SyntheticBackend>(world, std::vector<const CaseSet*>{&train, &test});
  RouterHyper hyper;
  hyper.d_route = d_route;
  hyper.epochs = epochs;
  hyper.seed = seed;
  MethodContext ctx;
  ctx.backend = backend;
  const auto trained = train_and_calibrate(train, *backend, ctx.prompts, hyper);
  MckiMethod method(ctx, std::make_shared<const RouterParams>(trained.checkpoint.params),
                    trained.calibration.tau);
  const auto single = derive_single_cases(test);
  py::gil_scoped_release release;
  return report_values(eval_single(single, method, Scorer{}), {});
}

}  // namespace

PYBIND11_MODULE(_mcki, m) {
  m.doc() = "Bindings for the mcki evaluation library";

  py::register_exception<CaseFileError>(m, "CaseFileError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("tokenize", &tokenize, py::arg("text"));
  m.def("rouge_l", &rouge_l, py::arg("candidate"), py::arg("reference"));
  m.def("lcs_length",
        [](const std::vector<std::string>& a, const std::vector<std::string>& b) {
          return lcs_length(a, b);
        },
        py::arg("a"), py::arg("b"));

  m.def("overall_single", &overall_single, py::arg("reliability"), py::arg("generality"),
        py::arg("cross_language"), py::arg("cross_scenario"));
  m.def("overall_sequential", &overall_sequential, py::arg("reliability"),
        py::arg("generality"), py::arg("locality"));

  m.def("contrastive_loss",
        [](const std::vector<double>& positives,
           const std::vector<std::pair<double, double>>& negatives, double gamma,
           double lambda_neg) {
          std::vector<WeightedSim> neg;
          for (const auto& [s, w] : negatives) neg.push_back({s, w});
          RouterHyper h;
          h.gamma = gamma;
          h.lambda_neg = lambda_neg;
          return contrastive_loss(positives, neg, h);
        },
        py::arg("positives"), py::arg("negatives") = std::vector<std::pair<double, double>>{},
        py::arg("gamma") = 20.0, py::arg("lambda_neg") = 1.0,
        "Negatives are (similarity, weight) pairs.");

  m.def("calibrate_threshold",
        [](std::vector<double> positives, std::vector<double> negatives) {
          return calibration_dict(calibrate_threshold({std::move(positives), std::move(negatives)}));
        },
        py::arg("positives"), py::arg("negatives"));

  m.def("load_case_ids",
        [](const std::filesystem::path& path) {
          std::vector<std::string> ids;
          for (const auto& c : load_cases(path)) ids.push_back(c.case_id);
          return ids;
        },
        py::arg("path"));

  m.def("write_fixtures",
        [](const std::filesystem::path& path, int scenarios, int cases, const std::string& split) {
          std::ofstream out(path);
          if (!out) throw std::runtime_error("cannot write " + path.string());
          write_cases(out, make_fixture_cases({scenarios, cases, split}));
        },
        py::arg("path"), py::arg("scenarios") = 20, py::arg("cases") = 10,
        py::arg("split") = "train");

  m.def("synthetic_run",
        [](int scenarios, int cases, Eigen::Index d_route, int epochs, std::uint64_t seed) {
          py::dict d;
          for (const auto& [k, v] : synthetic_run(scenarios, cases, d_route, epochs, seed)) d[py::str(k)] = v;
          return d;
        },
        py::arg("scenarios") = 4, py::arg("cases") = 3, py::arg("d_route") = 64,
        py::arg("epochs") = 2, py::arg("seed") = 0,
        "Train and evaluate MCKI on synthetic fixtures; returns the flat report.");

  m.def("render_report", [](const KeyValues& values) { return render_table(values); },
        py::arg("values"));
}
