// atm: command-line front end. Exit codes: 0 success, 1 run failures,
// 2 configuration or input errors.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "atm/experiments.hpp"

using namespace atm;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string backend;
  std::string out;
};

ExperimentConfig load_config(const Globals& g, const std::string& data) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig() : ExperimentConfig::load(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.backend.empty()) {
    try {
      cfg.decomposition.backend = backend_from_string(g.backend);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  if (!data.empty()) cfg.dataset = fs::path(data);
  return cfg;
}

// Writes to `path`, or stdout when it is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::vector<int> parse_list(const std::string& s, const char* what) {
  std::vector<int> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, '-')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad ") + what + " '" + s + "' (expected 0-based indices joined by '-')");
    }
  }
  if (v.empty()) throw ConfigError(std::string("empty ") + what);
  return v;
}

Genotype parse_genotype(const std::string& s, int alleles) {
  Genotype g;
  try {
    g = Genotype::from_string(s);
  } catch (const std::exception&) {
    throw ConfigError("bad genotype '" + s + "'");
  }
  if (g.alleles() != alleles) throw ConfigError("genotype '" + s + "' does not have " + std::to_string(alleles) + " alleles");
  return g;
}

std::shared_ptr<const ScenarioSet> training_set(const ExperimentConfig& cfg, const GrowthRateDataset& data,
                                                const std::string& cache) {
  if (!cache.empty()) {
    try {
      return std::make_shared<ScenarioSet>(load_scenario_cache(data, cache));
    } catch (const std::exception& e) {
      throw ConfigError("scenario cache " + cache + ": " + e.what());
    }
  }
  return std::make_shared<ScenarioSet>(sample_scenarios(data, cfg.scenarios, cfg.seed, cfg.identity));
}

int cmd_matrices(const Globals& g, const std::string& data, int replicate) {
  const auto cfg = load_config(g, data);
  const auto ds = config_dataset(cfg);
  if (replicate < 0 || replicate >= ds.replicates())
    throw ConfigError("replicate must lie in 0.." + std::to_string(ds.replicates() - 1));
  std::ostringstream out;
  out << "antibiotic,replicate,from,to,probability\n";
  for (int k = 0; k < ds.antibiotics(); ++k) {
    std::vector<double> rates(ds.genotypes());
    for (int i = 0; i < ds.genotypes(); ++i) rates[i] = ds.rate(k, i, replicate);
    const auto m = build_transition_matrix(rates);
    for (int i = 0; i < m.dimension(); ++i)
      for (int j = 0; j < m.dimension(); ++j) {
        if (m(i, j) == 0.0) continue;
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
        out << ds.labels()[k] << ',' << replicate << ',' << Genotype(ds.alleles(), i).to_string() << ','
            << Genotype(ds.alleles(), j).to_string() << ',' << buf << '\n';
      }
  }
  emit(g.out, out.str());
  return 0;
}

int cmd_sample(const Globals& g, const std::string& data, int count) {
  auto cfg = load_config(g, data);
  if (count > 0) cfg.scenarios = count;
  const auto ds = config_dataset(cfg);
  const auto set = sample_scenarios(ds, cfg.scenarios, cfg.seed, cfg.identity);
  const fs::path path = g.out.empty() ? fs::path("scenarios.json") : fs::path(g.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_scenario_cache(set, path);
  std::cout << "wrote " << set.size() << " scenarios to " << path.string() << '\n';
  return 0;
}

struct SolveArgs {
  std::string data;
  std::string initial;
  int horizon = 0;
  std::string objective;
  std::string scenarios;
  std::string filter;
};

int cmd_solve(const Globals& g, const SolveArgs& a, Mode mode) {
  auto cfg = load_config(g, a.data);
  const auto ds = config_dataset(cfg);
  const Genotype initial = parse_genotype(a.initial, ds.alleles());
  const int horizon = a.horizon > 0 ? a.horizon : cfg.horizons.front();
  const Objective objective = a.objective.empty() ? cfg.objectives.front() : objective_from_string(a.objective);
  auto d = cfg.decomposition;
  if (objective == Objective::kRiskNeutral) d.alpha = 1.0;
  const auto set = training_set(cfg, ds, a.scenarios);
  try {
    equipartition(set->size(), d.batches, d.alpha, d.batch_tail);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  SlotDomains domains;
  std::string filter_path = a.filter.empty() && cfg.filter ? cfg.filter->string() : a.filter;
  if (!filter_path.empty()) {
    std::ifstream in(filter_path);
    if (!in) throw ConfigError("cannot open filter " + filter_path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      domains = FilterSpec::from_json(ss.str()).domains(static_cast<int>(initial.index()), horizon);
    } catch (const std::exception& e) {
      throw ConfigError("filter " + filter_path + ": " + e.what());
    }
  }
  ProblemInstance inst(set, initial, horizon);
  const auto res = mode == Mode::kStatic ? solve_static(inst, d, domains) : solve_dynamic(inst, d, domains);

  std::ostringstream hist;
  write_history(hist, res.history);
  nlohmann::json sol{{"mode", to_string(mode)},
                     {"objective", to_string(objective)},
                     {"initial", initial.to_string()},
                     {"horizon", horizon},
                     {"scenario_seed", set->seed},
                     {"scenarios", set->size()},
                     {"alpha", d.alpha},
                     {"choice", res.incumbent},
                     {"plan", res.incumbent.empty() ? "none" : format_choices(res.incumbent)},
                     {"lb", res.lb},
                     {"ub", res.ub},
                     {"iterations", res.iterations},
                     {"converged", res.converged},
                     {"error", res.error}};
  if (g.out.empty()) {
    std::cout << hist.str() << sol.dump(2) << '\n';
  } else {
    fs::create_directories(g.out);
    emit((fs::path(g.out) / "history.csv").string(), hist.str());
    emit((fs::path(g.out) / "solution.json").string(), sol.dump(2) + "\n");
    std::printf("%s LB=%.6f UB=%.6f iterations=%d%s\n", sol["plan"].get<std::string>().c_str(), res.lb, res.ub,
                res.iterations, res.converged ? "" : " (not converged)");
  }
  if (!res.error.empty()) {
    std::cerr << "error: " << res.error << '\n';
    return 1;
  }
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& data, const std::string& initial_s, const std::string& plan_s,
                 const std::string& policy_s, int count, int horizon_arg) {
  auto cfg = load_config(g, data);
  if (plan_s.empty() == policy_s.empty()) throw ConfigError("give exactly one of --plan and --policy");
  const auto ds = config_dataset(cfg);
  const Genotype initial = parse_genotype(initial_s, ds.alleles());
  const auto train = std::make_shared<ScenarioSet>(sample_scenarios(ds, 1, cfg.seed, cfg.identity));
  const auto fresh = sample_scenarios(ds, count > 0 ? count : cfg.out_of_sample, cfg.out_of_sample_seed, cfg.identity);
  const int k = fresh.antibiotics();
  auto check = [&](const std::vector<int>& v) {
    for (int x : v)
      if (x < 0 || x >= k) throw ConfigError("antibiotic index " + std::to_string(x) + " out of range 0.." + std::to_string(k - 1));
  };
  OutOfSampleReport rep;
  std::string label;
  if (!plan_s.empty()) {
    StaticPlan p{parse_list(plan_s, "plan")};
    check(p.choices);
    rep = out_of_sample(p, fresh, cfg.decomposition.alpha, ProblemInstance(train, initial, p.horizon()));
    label = "static-" + initial.to_string() + "-" + format_choices(p.choices);
  } else {
    DynamicPolicy p{parse_list(policy_s, "policy")};
    check(p.assignment);
    if (static_cast<int>(p.assignment.size()) != ds.genotypes())
      throw ConfigError("policy needs one antibiotic per genotype (" + std::to_string(ds.genotypes()) + ")");
    const int horizon = horizon_arg > 0 ? horizon_arg : cfg.horizons.front();
    rep = out_of_sample(p, fresh, cfg.decomposition.alpha, ProblemInstance(train, initial, horizon));
    label = "dynamic-" + initial.to_string() + "-N" + std::to_string(horizon);
  }
  std::ostringstream out;
  out << "label,metric,value\n";
  write_summary_rows(out, label, rep);
  out << "label,bin_lo,count\n";
  write_histogram_rows(out, label, rep.histogram);
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
  emit(g.out, out.str());
  return 0;
}

int cmd_experiment(const Globals& g, int jobs) {
  if (g.config.empty()) throw ConfigError("experiment needs --config");
  auto cfg = load_config(g, "");
  if (jobs > 0) cfg.jobs = jobs;
  const fs::path out = g.out.empty() ? fs::path("atm-results") : fs::path(g.out);
  const auto res = run_experiment(cfg, out);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  std::printf("%zu runs, %d failed; results in %s\n", res.runs.size(), res.failures, out.string().c_str());
  return res.failures > 0 ? 1 : 0;
}

int cmd_compare(const Globals& g, const std::string& results, const std::string& filter_mode,
                const std::string& filter_out, const std::vector<int>& filter_horizons) {
  std::ifstream in(results);
  if (!in) throw ConfigError("cannot open " + results);
  std::vector<RunRecord> runs;
  try {
    runs = read_results_csv(in);
  } catch (const std::exception& e) {
    throw ConfigError(results + ": " + e.what());
  }
  const auto s = compare_ra_rn(runs);
  for (const auto& w : s.warnings) std::cerr << "warning: " << w << '\n';
  std::ostringstream csv;
  write_comparison_csv(csv, s);
  if (g.out.empty()) {
    std::cout << csv.str() << comparison_json(s).dump(2) << '\n';
  } else {
    fs::create_directories(g.out);
    emit((fs::path(g.out) / "comparison.csv").string(), csv.str());
    emit((fs::path(g.out) / "comparison.json").string(), comparison_json(s).dump(2) + "\n");
  }
  if (!filter_mode.empty()) {
    if (filter_out.empty()) throw ConfigError("--build-filter needs --filter-out");
    const auto cfg = load_config(g, "");
    const auto ds = config_dataset(cfg);
    FilterMode mode;
    try {
      mode = filter_mode_from_string(filter_mode);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    std::vector<PriorSolution> priors;
    std::set<int> initials;
    for (const auto& r : runs) {
      if (!r.error.empty() || r.setting >= 0 || r.objective != Objective::kRiskAverse) continue;
      const auto gt = parse_genotype(r.genotype, ds.alleles());
      PriorSolution p;
      p.space = r.mode == Mode::kStatic ? SelectionSpace::kStatic : SelectionSpace::kDynamic;
      p.initial = static_cast<int>(gt.index());
      p.horizon = r.horizon;
      p.choice = r.choice;
      priors.push_back(p);
      initials.insert(p.initial);
    }
    const int antibiotics = ds.antibiotics() + (cfg.identity ? 1 : 0);
    FilterSpec f;
    try {
      f = build_filter(mode, priors, {initials.begin(), initials.end()}, antibiotics, antibiotics - 1, ds.alleles(),
                       filter_horizons);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 1;
    }
    emit(filter_out, f.to_json() + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Risk-averse antibiotic treatment planning on genotype hypercubes"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Scenario sample seed (overrides the config)");
  app.add_option("--backend", g.backend, "MILP backend: auto, enumeration or external");
  app.add_option("--out", g.out, "Output file or directory");

  std::string data;
  int replicate = 0, count = 0, jobs = 0;
  auto* matrices = app.add_subcommand("matrices", "Print the transition matrices of one replicate");
  matrices->add_option("--data", data, "Growth-rate CSV (default: config dataset or synthetic)");
  matrices->add_option("--replicate", replicate, "Replicate index (0-based)");

  auto* sample = app.add_subcommand("sample", "Draw a scenario sample and write the scenario cache");
  sample->add_option("--data", data, "Growth-rate CSV");
  sample->add_option("--count", count, "Number of scenarios (default: config)");

  SolveArgs sa;
  auto add_solve = [&](const char* name, const char* help) {
    auto* c = app.add_subcommand(name, help);
    c->add_option("--data", sa.data, "Growth-rate CSV");
    c->add_option("--initial", sa.initial, "Initial genotype bit string")->required();
    c->add_option("--horizon,-N", sa.horizon, "Treatment horizon (default: first config horizon)");
    c->add_option("--objective", sa.objective, "risk-averse or risk-neutral");
    c->add_option("--scenarios", sa.scenarios, "Scenario cache to use instead of sampling");
    c->add_option("--filter", sa.filter, "Antibiotic filter (JSON)");
    return c;
  };
  auto* solve_s = add_solve("solve-static", "Solve the static problem by scenario decomposition");
  auto* solve_d = add_solve("solve-dynamic", "Solve the dynamic problem by scenario decomposition");

  std::string initial, plan, policy;
  int eval_horizon = 0;
  auto* evaluate = app.add_subcommand("evaluate", "Out-of-sample CVaR, mean and histogram of a plan or policy");
  evaluate->add_option("--data", data, "Growth-rate CSV");
  evaluate->add_option("--initial", initial, "Initial genotype bit string")->required();
  evaluate->add_option("--plan", plan, "Static plan, e.g. 0-2-1");
  evaluate->add_option("--policy", policy, "Dynamic policy, one antibiotic per genotype index");
  evaluate->add_option("--horizon,-N", eval_horizon, "Horizon for --policy (default: first config horizon)");
  evaluate->add_option("--count", count, "Fresh sample size (default: config out_of_sample)");

  auto* experiment = app.add_subcommand("experiment", "Run the sweep described by --config");
  experiment->add_option("--jobs", jobs, "Parallel sweep cells (overrides the config)");

  std::string results, filter_mode, filter_out;
  std::vector<int> filter_horizons;
  auto* compare = app.add_subcommand("compare", "Compare risk-averse and risk-neutral results");
  compare->add_option("--results", results, "results.csv from an experiment")->required();
  compare->add_option("--build-filter", filter_mode, "static-filter-I, static-filter-II or dynamic-per-genotype");
  compare->add_option("--filter-out", filter_out, "Where to write the filter");
  compare->add_option("--filter-horizons", filter_horizons, "Horizons the filter draws on");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*matrices) return cmd_matrices(g, data, replicate);
    if (*sample) return cmd_sample(g, data, count);
    if (*solve_s) return cmd_solve(g, sa, Mode::kStatic);
    if (*solve_d) return cmd_solve(g, sa, Mode::kDynamic);
    if (*evaluate) return cmd_evaluate(g, data, initial, plan, policy, count, eval_horizon);
    if (*experiment) return cmd_experiment(g, jobs);
    if (*compare) return cmd_compare(g, results, filter_mode, filter_out, filter_horizons);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
