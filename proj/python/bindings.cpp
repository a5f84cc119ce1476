#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "atm/experiments.hpp"

namespace py = pybind11;
using namespace atm;

namespace {

std::shared_ptr<const ScenarioSet> shared(const ScenarioSet& s) { return std::make_shared<ScenarioSet>(s); }

py::dict result_dict(const DecompositionResult& r) {
  py::list history;
  for (const auto& h : r.history)
    history.append(py::dict(py::arg("t") = h.t, py::arg("batch") = h.batch, py::arg("choice") = h.choice,
                            py::arg("batch_obj") = h.batch_obj, py::arg("lb") = h.lb, py::arg("ub") = h.ub));
  return py::dict(py::arg("choice") = r.incumbent, py::arg("lb") = r.lb, py::arg("ub") = r.ub,
                  py::arg("iterations") = r.iterations, py::arg("converged") = r.converged,
                  py::arg("history") = history, py::arg("error") = r.error);
}

DecompositionConfig make_config(int batches, double alpha, double epsilon, int tau, const std::string& backend,
                                int threads, bool fractional_tail) {
  DecompositionConfig c;
  c.batches = batches;
  c.alpha = alpha;
  c.epsilon = epsilon;
  c.max_iterations = tau;
  c.backend = backend_from_string(backend);
  c.threads = threads;
  c.batch_tail = fractional_tail ? TailPolicy::kFractional : TailPolicy::kInteger;
  return c;
}

}  // namespace

PYBIND11_MODULE(_atm, m) {
  m.doc() = "Risk-averse antibiotic treatment planning";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

  py::class_<Genotype>(m, "Genotype")
      .def(py::init<int, std::uint32_t>(), py::arg("alleles"), py::arg("index"))
      .def_static("from_string", &Genotype::from_string)
      .def_property_readonly("alleles", &Genotype::alleles)
      .def_property_readonly("index", &Genotype::index)
      .def("__str__", &Genotype::to_string)
      .def("__repr__", [](const Genotype& g) { return "Genotype('" + g.to_string() + "')"; })
      .def(py::self == py::self);

  py::class_<GrowthRateDataset>(m, "GrowthRateDataset")
      .def(py::init<int, std::vector<std::string>, int, std::vector<double>>(), py::arg("alleles"),
           py::arg("labels"), py::arg("replicates"), py::arg("rates"),
           "rates is flat, laid out [antibiotic][genotype][replicate]")
      .def_property_readonly("alleles", &GrowthRateDataset::alleles)
      .def_property_readonly("antibiotics", &GrowthRateDataset::antibiotics)
      .def_property_readonly("replicates", &GrowthRateDataset::replicates)
      .def_property_readonly("labels", &GrowthRateDataset::labels)
      .def("rate", &GrowthRateDataset::rate)
      .def("content_hash", &GrowthRateDataset::content_hash);
  m.def("load_growth_rates", &load_growth_rates, py::arg("path"));
  m.def(
      "synth_dataset",
      [](int alleles, int antibiotics, int replicates, std::uint64_t seed, double dispersion, bool heavy_tail) {
        return synth_dataset(SyntheticSpec{alleles, antibiotics, replicates, seed, dispersion, heavy_tail});
      },
      py::arg("alleles") = 3, py::arg("antibiotics") = 3, py::arg("replicates") = 4, py::arg("seed") = 1,
      py::arg("dispersion") = 0.5, py::arg("heavy_tail") = false);

  m.def(
      "transition_matrix",
      [](const std::vector<double>& rates) {
        const auto t = build_transition_matrix(rates);
        std::vector<std::vector<double>> rows;
        for (int i = 0; i < t.dimension(); ++i) rows.emplace_back(t.row(i).begin(), t.row(i).end());
        return rows;
      },
      py::arg("growth_rates"), "Row-stochastic matrix as a list of rows");

  py::class_<ScenarioSet>(m, "ScenarioSet")
      .def_readonly("alleles", &ScenarioSet::alleles)
      .def_readonly("labels", &ScenarioSet::labels)
      .def_readonly("identity", &ScenarioSet::identity)
      .def_readonly("seed", &ScenarioSet::seed)
      .def_readonly("draws", &ScenarioSet::draws)
      .def("__len__", &ScenarioSet::size);
  m.def("sample_scenarios", &sample_scenarios, py::arg("data"), py::arg("count"), py::arg("seed"),
        py::arg("include_identity") = true);

  m.def("cvar", [](const std::vector<double>& v, double alpha) { return cvar(v, alpha); }, py::arg("values"),
        py::arg("alpha"));
  m.def(
      "cvar_lp",
      [](const std::vector<double>& v, double alpha, bool fractional) {
        return cvar_lp(v, alpha, fractional ? TailPolicy::kFractional : TailPolicy::kInteger);
      },
      py::arg("values"), py::arg("alpha"), py::arg("fractional") = false);

  m.def(
      "static_values",
      [](const std::vector<int>& plan, const ScenarioSet& set, const std::string& initial) {
        ProblemInstance inst(shared(set), Genotype::from_string(initial), static_cast<int>(plan.size()));
        return static_values(StaticPlan{plan}, inst);
      },
      py::arg("plan"), py::arg("scenarios"), py::arg("initial"),
      "Probability of reaching the wild type in every scenario");
  m.def(
      "dynamic_values",
      [](const std::vector<int>& policy, const ScenarioSet& set, const std::string& initial, int horizon) {
        ProblemInstance inst(shared(set), Genotype::from_string(initial), horizon);
        return dynamic_values(DynamicPolicy{policy}, inst);
      },
      py::arg("policy"), py::arg("scenarios"), py::arg("initial"), py::arg("horizon"));

  auto solve = [](bool dynamic) {
    return [dynamic](const ScenarioSet& set, const std::string& initial, int horizon, int batches, double alpha,
                     double epsilon, int tau, const std::string& backend, int threads, bool fractional_tail) {
      const auto cfg = make_config(batches, alpha, epsilon, tau, backend, threads, fractional_tail);
      ProblemInstance inst(shared(set), Genotype::from_string(initial), horizon);
      DecompositionResult r;
      {
        py::gil_scoped_release release;
        r = dynamic ? solve_dynamic(inst, cfg) : solve_static(inst, cfg);
      }
      return result_dict(r);
    };
  };
  for (const char* name : {"solve_static", "solve_dynamic"})
    m.def(name, solve(std::string(name) == "solve_dynamic"), py::arg("scenarios"), py::arg("initial"),
          py::arg("horizon"), py::arg("batches") = 40, py::arg("alpha") = 0.1, py::arg("epsilon") = 0.01,
          py::arg("tau") = 5, py::arg("backend") = "auto", py::arg("threads") = 1, py::arg("fractional_tail") = false);

  m.def(
      "out_of_sample",
      [](const std::vector<int>& choice, bool dynamic, const ScenarioSet& fresh, const std::string& initial,
         int horizon, double alpha) {
        ProblemInstance inst(shared(fresh), Genotype::from_string(initial), horizon);
        const auto r = dynamic ? out_of_sample(DynamicPolicy{choice}, fresh, alpha, inst)
                               : out_of_sample(StaticPlan{choice}, fresh, alpha, inst);
        return py::dict(py::arg("cvar") = r.cvar, py::arg("mean") = r.mean,
                        py::arg("histogram") = std::vector<int>(r.histogram.begin(), r.histogram.end()));
      },
      py::arg("choice"), py::arg("dynamic"), py::arg("fresh"), py::arg("initial"), py::arg("horizon"),
      py::arg("alpha") = 0.1);

  m.def(
      "run_experiment",
      [](const std::string& config_json, const std::filesystem::path& out_dir) {
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(config_json);
        } catch (const nlohmann::json::exception& e) {
          throw ConfigError(e.what());
        }
        const auto cfg = ExperimentConfig::from_json(j);
        ExperimentOutcome o;
        {
          py::gil_scoped_release release;
          o = run_experiment(cfg, out_dir);
        }
        py::list comparison;
        for (const auto& c : o.comparison.records)
          comparison.append(py::dict(py::arg("genotype") = c.genotype, py::arg("horizon") = c.horizon,
                                     py::arg("ra_in_10") = c.ra_in_10, py::arg("ra_out_avg") = c.ra_out_avg,
                                     py::arg("ra_out_10") = c.ra_out_10, py::arg("rn_in_avg") = c.rn_in_avg,
                                     py::arg("rn_out_avg") = c.rn_out_avg, py::arg("rn_out_10") = c.rn_out_10,
                                     py::arg("classification") = c.classification));
        return py::dict(py::arg("runs") = o.runs.size(), py::arg("failures") = o.failures,
                        py::arg("comparison") = comparison, py::arg("warnings") = o.warnings);
      },
      py::arg("config_json"), py::arg("out_dir"), "Runs a sweep from a JSON config string");
}
