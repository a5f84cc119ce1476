#include "atm/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace atm {

using nlohmann::json;

GrowthRateDataset synth_dataset(const SyntheticSpec& spec) {
  if (spec.alleles < 1 || spec.alleles > 8) throw ConfigError("synthetic alleles must be in 1..8");
  if (spec.antibiotics < 1) throw ConfigError("synthetic antibiotics must be >= 1");
  if (spec.replicates < 1) throw ConfigError("synthetic replicates must be >= 1");
  if (!(spec.dispersion >= 0.0)) throw ConfigError("synthetic dispersion must be >= 0");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> base(0.1, 2.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::student_t_distribution<double> student(3.0);
  const int d = 1 << spec.alleles;
  std::vector<std::string> labels;
  for (int k = 0; k < spec.antibiotics; ++k) labels.push_back("S" + std::to_string(k + 1));
  std::vector<double> rates;
  rates.reserve(static_cast<std::size_t>(spec.antibiotics) * d * spec.replicates);
  for (int k = 0; k < spec.antibiotics; ++k)
    for (int i = 0; i < d; ++i) {
      const double b = base(rng);
      for (int r = 0; r < spec.replicates; ++r) {
        const double z = spec.heavy_tail ? student(rng) : normal(rng);
        rates.push_back(b * std::exp(spec.dispersion * z));
      }
    }
  return GrowthRateDataset(spec.alleles, labels, spec.replicates, rates);
}

std::string to_string(Mode m) { return m == Mode::kStatic ? "static" : "dynamic"; }
std::string to_string(Objective o) { return o == Objective::kRiskAverse ? "risk-averse" : "risk-neutral"; }

Mode mode_from_string(const std::string& s) {
  if (s == "static") return Mode::kStatic;
  if (s == "dynamic") return Mode::kDynamic;
  throw ConfigError("unknown mode '" + s + "' (static, dynamic)");
}

Objective objective_from_string(const std::string& s) {
  if (s == "risk-averse" || s == "ra") return Objective::kRiskAverse;
  if (s == "risk-neutral" || s == "rn") return Objective::kRiskNeutral;
  throw ConfigError("unknown objective '" + s + "' (risk-averse, risk-neutral)");
}

ExperimentConfig::ExperimentConfig() {
  decomposition.batches = 40;
  decomposition.alpha = 0.1;
  decomposition.epsilon = 0.01;
  decomposition.max_iterations = 5;
  decomposition.limits.abs_gap = 1e-3;
  decomposition.limits.time_limit = 7200.0;
}

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& into, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  check_keys(j, "config",
             {"dataset", "synthetic", "mode", "objectives", "initial", "horizons", "scenarios", "out_of_sample",
              "seed", "out_of_sample_seed", "identity", "decomposition", "enhancements", "ablation", "filter",
              "cache_dir", "jobs"});
  ExperimentConfig c;
  if (j.contains("dataset")) {
    std::string p;
    read(j, "dataset", p, "config");
    c.dataset = resolve(base_dir, p);
  }
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    check_keys(s, "synthetic", {"alleles", "antibiotics", "replicates", "seed", "dispersion", "heavy_tail"});
    read(s, "alleles", c.synthetic.alleles, "synthetic");
    read(s, "antibiotics", c.synthetic.antibiotics, "synthetic");
    read(s, "replicates", c.synthetic.replicates, "synthetic");
    read(s, "seed", c.synthetic.seed, "synthetic");
    read(s, "dispersion", c.synthetic.dispersion, "synthetic");
    read(s, "heavy_tail", c.synthetic.heavy_tail, "synthetic");
  }
  if (j.contains("mode")) c.mode = mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("objectives")) {
    c.objectives.clear();
    std::vector<std::string> names;
    read(j, "objectives", names, "config");
    for (const auto& n : names) c.objectives.push_back(objective_from_string(n));
    if (c.objectives.empty()) throw ConfigError("objectives must not be empty");
  }
  if (j.contains("initial")) {
    if (j.at("initial").is_string() && j.at("initial").get<std::string>() == "all")
      c.initial.clear();
    else
      read(j, "initial", c.initial, "config");
  }
  read(j, "horizons", c.horizons, "config");
  read(j, "scenarios", c.scenarios, "config");
  read(j, "out_of_sample", c.out_of_sample, "config");
  read(j, "seed", c.seed, "config");
  read(j, "out_of_sample_seed", c.out_of_sample_seed, "config");
  read(j, "identity", c.identity, "config");
  read(j, "jobs", c.jobs, "config");
  read(j, "ablation", c.ablation, "config");
  if (j.contains("filter")) {
    std::string p;
    read(j, "filter", p, "config");
    c.filter = resolve(base_dir, p);
  }
  if (j.contains("cache_dir")) {
    std::string p;
    read(j, "cache_dir", p, "config");
    c.cache_dir = resolve(base_dir, p);
  }
  auto& d = c.decomposition;
  if (j.contains("decomposition")) {
    const auto& s = j.at("decomposition");
    check_keys(s, "decomposition",
               {"batches", "alpha", "epsilon", "tau", "abs_gap", "time_limit", "backend", "threads", "batch_tail",
                "regroup_every_iteration", "clusters", "cluster_seed", "cartesian_budget", "enumeration_budget"});
    read(s, "batches", d.batches, "decomposition");
    read(s, "alpha", d.alpha, "decomposition");
    read(s, "epsilon", d.epsilon, "decomposition");
    read(s, "tau", d.max_iterations, "decomposition");
    read(s, "abs_gap", d.limits.abs_gap, "decomposition");
    read(s, "time_limit", d.limits.time_limit, "decomposition");
    read(s, "threads", d.threads, "decomposition");
    read(s, "regroup_every_iteration", d.regroup_every_iteration, "decomposition");
    read(s, "clusters", d.clusters, "decomposition");
    read(s, "cluster_seed", d.cluster_seed, "decomposition");
    read(s, "cartesian_budget", d.cartesian_budget, "decomposition");
    read(s, "enumeration_budget", d.enumeration_budget, "decomposition");
    if (s.contains("backend")) {
      try {
        d.backend = backend_from_string(s.at("backend").get<std::string>());
      } catch (const std::exception& e) {
        throw ConfigError(e.what());
      }
    }
    if (s.contains("batch_tail")) {
      const auto t = s.at("batch_tail").get<std::string>();
      if (t == "integer")
        d.batch_tail = TailPolicy::kInteger;
      else if (t == "fractional")
        d.batch_tail = TailPolicy::kFractional;
      else
        throw ConfigError("batch_tail must be 'integer' or 'fractional'");
    }
  }
  if (j.contains("enhancements")) {
    const auto& s = j.at("enhancements");
    check_keys(s, "enhancements", {"cartesian", "symmetry", "regroup", "warm_start", "irrelevant"});
    read(s, "cartesian", d.enhancements.cartesian, "enhancements");
    read(s, "symmetry", d.enhancements.symmetry, "enhancements");
    read(s, "regroup", d.enhancements.regroup, "enhancements");
    read(s, "warm_start", d.enhancements.warm_start, "enhancements");
    read(s, "irrelevant", d.enhancements.irrelevant, "enhancements");
  }

  // Consistency.
  if (c.horizons.empty()) throw ConfigError("horizons must not be empty");
  for (int n : c.horizons)
    if (n < 1) throw ConfigError("horizons must be >= 1");
  if (c.scenarios < 1 || c.out_of_sample < 1) throw ConfigError("scenario counts must be >= 1");
  if (c.jobs < 1 || d.threads < 1) throw ConfigError("jobs and threads must be >= 1");
  if (!(d.alpha > 0.0 && d.alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  if (d.batches < 1 || c.scenarios % d.batches != 0)
    throw ConfigError("scenarios (" + std::to_string(c.scenarios) + ") must be divisible by batches (" +
                      std::to_string(d.batches) + ")");
  try {
    equipartition(c.scenarios, d.batches, d.alpha, d.batch_tail);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  for (int s : c.ablation)
    if (s < 0 || s > 5) throw ConfigError("ablation settings must be in 0..5");
  if (!c.ablation.empty() && c.mode != Mode::kStatic) throw ConfigError("the ablation runs the static version only");
  for (const auto& g : c.initial) {
    try {
      Genotype::from_string(g);
    } catch (const std::exception&) {
      throw ConfigError("bad initial genotype '" + g + "'");
    }
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

json ExperimentConfig::to_json() const {
  json j;
  if (dataset) j["dataset"] = dataset->string();
  j["synthetic"] = {{"alleles", synthetic.alleles},       {"antibiotics", synthetic.antibiotics},
                    {"replicates", synthetic.replicates}, {"seed", synthetic.seed},
                    {"dispersion", synthetic.dispersion}, {"heavy_tail", synthetic.heavy_tail}};
  j["mode"] = to_string(mode);
  std::vector<std::string> obj;
  for (auto o : objectives) obj.push_back(to_string(o));
  j["objectives"] = obj;
  if (initial.empty())
    j["initial"] = "all";
  else
    j["initial"] = initial;
  j["horizons"] = horizons;
  j["scenarios"] = scenarios;
  j["out_of_sample"] = out_of_sample;
  j["seed"] = seed;
  j["out_of_sample_seed"] = out_of_sample_seed;
  j["identity"] = identity;
  j["jobs"] = jobs;
  j["ablation"] = ablation;
  if (filter) j["filter"] = filter->string();
  if (cache_dir) j["cache_dir"] = cache_dir->string();
  const auto& d = decomposition;
  j["decomposition"] = {{"batches", d.batches},
                        {"alpha", d.alpha},
                        {"epsilon", d.epsilon},
                        {"tau", d.max_iterations},
                        {"abs_gap", d.limits.abs_gap},
                        {"time_limit", d.limits.time_limit},
                        {"backend", atm::to_string(d.backend)},
                        {"threads", d.threads},
                        {"batch_tail", d.batch_tail == TailPolicy::kInteger ? "integer" : "fractional"},
                        {"regroup_every_iteration", d.regroup_every_iteration},
                        {"clusters", d.clusters},
                        {"cluster_seed", d.cluster_seed},
                        {"cartesian_budget", d.cartesian_budget},
                        {"enumeration_budget", d.enumeration_budget}};
  j["enhancements"] = {{"cartesian", d.enhancements.cartesian},
                       {"symmetry", d.enhancements.symmetry},
                       {"regroup", d.enhancements.regroup},
                       {"warm_start", d.enhancements.warm_start},
                       {"irrelevant", d.enhancements.irrelevant}};
  return j;
}

GrowthRateDataset config_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset) return load_growth_rates(*cfg.dataset);
  return synth_dataset(cfg.synthetic);
}

// ---------------------------------------------------------------- comparison

std::string classify(const ComparisonRecord& r, bool same_solution) {
  if (same_solution) return "indifferent";
  return (r.ra_out_10 - r.rn_out_10) > (r.rn_out_avg - r.ra_out_avg) ? "good" : "bad";
}

ComparisonSummary compare_ra_rn(const std::vector<RunRecord>& runs) {
  ComparisonSummary s;
  std::map<std::tuple<int, std::string, int>, const RunRecord*> ra, rn;
  for (const auto& r : runs) {
    if (r.setting >= 0 || !r.error.empty()) continue;
    auto key = std::make_tuple(static_cast<int>(r.mode), r.genotype, r.horizon);
    (r.objective == Objective::kRiskAverse ? ra : rn)[key] = &r;
  }
  double sum_ra10 = 0, sum_rn10 = 0, sum_raavg = 0, sum_rnavg = 0;
  for (const auto& [key, a] : ra) {
    auto it = rn.find(key);
    if (it == rn.end()) {
      s.warnings.push_back("no risk-neutral run for " + a->genotype + " N=" + std::to_string(a->horizon) +
                           "; skipped");
      continue;
    }
    const RunRecord* n = it->second;
    ComparisonRecord c;
    c.genotype = a->genotype;
    c.horizon = a->horizon;
    c.ra_in_10 = a->in_cvar;
    c.ra_out_avg = a->out_mean;
    c.ra_out_10 = a->out_cvar;
    c.rn_in_avg = n->in_mean;
    c.rn_out_avg = n->out_mean;
    c.rn_out_10 = n->out_cvar;
    c.classification = classify(c, a->choice == n->choice);
    if (c.classification == "good") ++s.good;
    else if (c.classification == "bad") ++s.bad;
    else ++s.indifferent;
    sum_ra10 += c.ra_out_10;
    sum_rn10 += c.rn_out_10;
    sum_raavg += c.ra_out_avg;
    sum_rnavg += c.rn_out_avg;
    s.records.push_back(c);
  }
  for (const auto& [key, n] : rn)
    if (!ra.count(key))
      s.warnings.push_back("no risk-averse run for " + n->genotype + " N=" + std::to_string(n->horizon) +
                           "; skipped");
  if (!s.records.empty()) {
    const double n = static_cast<double>(s.records.size());
    s.worst10_gain_pct = 100.0 * (sum_ra10 - sum_rn10) / n;
    s.average_loss_pct = 100.0 * (sum_rnavg - sum_raavg) / n;
  }
  return s;
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream s(line);
  while (std::getline(s, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::vector<int> parse_choices(const std::string& s) {
  std::vector<int> out;
  if (s.empty() || s == "none") return out;
  for (const auto& p : split(s, '-')) out.push_back(std::stoi(p));
  return out;
}

const char* kResultsHeader =
    "label,mode,objective,genotype,N,setting,plan,LB,UB,gap,iterations,converged,in_cvar,in_mean,out_cvar,out_mean,"
    "status";

}  // namespace

void write_results_csv(std::ostream& out, const std::vector<RunRecord>& runs) {
  out << kResultsHeader << '\n';
  for (const auto& r : runs) {
    out << r.label << ',' << to_string(r.mode) << ',' << to_string(r.objective) << ',' << r.genotype << ','
        << r.horizon << ',' << r.setting << ',' << (r.choice.empty() ? "none" : format_choices(r.choice)) << ','
        << num(r.lb) << ',' << num(r.ub) << ',' << num(r.ub - r.lb) << ',' << r.iterations << ','
        << (r.converged ? 1 : 0) << ',' << num(r.in_cvar) << ',' << num(r.in_mean) << ',' << num(r.out_cvar) << ','
        << num(r.out_mean) << ',' << (r.error.empty() ? "ok" : "failed") << '\n';
  }
}

std::vector<RunRecord> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) throw ParseError(1, "not a results table");
  std::vector<RunRecord> out;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto f = split(line, ',');
    if (f.size() != 17) throw ParseError(n, "expected 17 fields, got " + std::to_string(f.size()));
    try {
      RunRecord r;
      r.label = f[0];
      r.mode = mode_from_string(f[1]);
      r.objective = objective_from_string(f[2]);
      r.genotype = f[3];
      r.horizon = std::stoi(f[4]);
      r.setting = std::stoi(f[5]);
      r.choice = parse_choices(f[6]);
      r.lb = std::stod(f[7]);
      r.ub = std::stod(f[8]);
      r.iterations = std::stoi(f[10]);
      r.converged = f[11] == "1";
      r.in_cvar = std::stod(f[12]);
      r.in_mean = std::stod(f[13]);
      r.out_cvar = std::stod(f[14]);
      r.out_mean = std::stod(f[15]);
      if (f[16] != "ok") r.error = "failed";
      out.push_back(std::move(r));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(n, e.what());
    }
  }
  return out;
}

void write_comparison_csv(std::ostream& out, const ComparisonSummary& s) {
  out << "genotype,N,RA-In-10%,RA-Out-Avg,RA-Out-10%,RN-In-Avg,RN-Out-Avg,RN-Out-10%,class\n";
  for (const auto& c : s.records)
    out << c.genotype << ',' << c.horizon << ',' << num(c.ra_in_10) << ',' << num(c.ra_out_avg) << ','
        << num(c.ra_out_10) << ',' << num(c.rn_in_avg) << ',' << num(c.rn_out_avg) << ',' << num(c.rn_out_10) << ','
        << c.classification << '\n';
}

json comparison_json(const ComparisonSummary& s) {
  return json{{"records", s.records.size()},
              {"good", s.good},
              {"bad", s.bad},
              {"indifferent", s.indifferent},
              {"worst10_gain_pct", s.worst10_gain_pct},
              {"average_loss_pct", s.average_loss_pct},
              {"warnings", s.warnings}};
}

// ---------------------------------------------------------------- warm cache

namespace {

CutKind cut_kind_from_string(const std::string& s) {
  for (auto k : {CutKind::kNoGoodStatic, CutKind::kNoGoodDynamic, CutKind::kCartesian, CutKind::kSymmetryEnhanced,
                 CutKind::kSymmetryBreaking})
    if (to_string(k) == s) return k;
  throw std::runtime_error("unknown cut kind '" + s + "'");
}

const char* sense_name(Sense s) {
  switch (s) {
    case Sense::kLessEqual: return "<=";
    case Sense::kEqual: return "=";
    case Sense::kGreaterEqual: return ">=";
  }
  return "?";
}

Sense sense_from(const std::string& s) {
  if (s == "<=") return Sense::kLessEqual;
  if (s == "=") return Sense::kEqual;
  if (s == ">=") return Sense::kGreaterEqual;
  throw std::runtime_error("unknown sense '" + s + "'");
}

json key_json(const WarmCacheKey& k) {
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(k.dataset_hash));
  return json{{"dataset_hash", hash},     {"mode", to_string(k.mode)},     {"genotype", k.genotype},
              {"horizon", k.horizon},     {"scenario_seed", k.scenario_seed}, {"scenarios", k.scenarios},
              {"alpha", k.alpha},         {"variant", k.variant}};
}

}  // namespace

std::filesystem::path warm_cache_path(const std::filesystem::path& dir, const WarmCacheKey& key) {
  char name[160];
  std::snprintf(name, sizeof name, "%016llx-%s-%s-N%d%s%s.json", static_cast<unsigned long long>(key.dataset_hash),
                to_string(key.mode).c_str(), key.genotype.c_str(), key.horizon, key.variant.empty() ? "" : "-",
                key.variant.c_str());
  return dir / name;
}

void save_warm_cache(const std::filesystem::path& path, const WarmCacheKey& key, const DecompositionResult& r) {
  json j;
  j["format"] = "atm-warm/1";
  j["key"] = key_json(key);
  json ev = json::array();
  for (const auto& [choice, v] : r.evaluated) ev.push_back({choice, v});
  j["evaluated"] = ev;
  json cuts = json::array();
  for (const auto& c : r.cuts) {
    json terms = json::array();
    for (const auto& t : c.terms) terms.push_back({t.slot, t.antibiotic, t.coef});
    cuts.push_back({{"kind", to_string(c.kind)},
                    {"space", c.space == SelectionSpace::kStatic ? "static" : "dynamic"},
                    {"terms", terms},
                    {"sense", sense_name(c.sense)},
                    {"rhs", c.rhs},
                    {"iteration", c.iteration},
                    {"cluster", c.cluster}});
  }
  j["cuts"] = cuts;
  j["incumbent"] = r.incumbent;
  j["lb"] = r.lb;
  j["ub"] = r.ub;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["fixed"] = r.fixed;
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

std::optional<DecompositionResult> load_warm_cache(const std::filesystem::path& path, const WarmCacheKey& key,
                                                   std::string* warning) {
  auto fail = [&](const std::string& why) -> std::optional<DecompositionResult> {
    if (warning) *warning = path.string() + ": " + why + "; starting cold";
    return std::nullopt;
  };
  std::ifstream in(path);
  if (!in) return fail("no cache entry");
  try {
    const auto j = json::parse(in);
    if (j.value("format", "") != "atm-warm/1") return fail("not an atm-warm/1 file");
    if (j.at("key") != key_json(key)) return fail("stale cache (key mismatch)");
    DecompositionResult r;
    for (const auto& e : j.at("evaluated")) r.evaluated[e.at(0).get<std::vector<int>>()] = e.at(1).get<double>();
    for (const auto& c : j.at("cuts")) {
      Cut cut;
      cut.kind = cut_kind_from_string(c.at("kind").get<std::string>());
      cut.space = c.at("space").get<std::string>() == "static" ? SelectionSpace::kStatic : SelectionSpace::kDynamic;
      for (const auto& t : c.at("terms")) cut.terms.push_back({t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<double>()});
      cut.sense = sense_from(c.at("sense").get<std::string>());
      cut.rhs = c.at("rhs").get<double>();
      cut.iteration = c.at("iteration").get<int>();
      cut.cluster = c.at("cluster").get<int>();
      r.cuts.push_back(std::move(cut));
    }
    r.incumbent = j.at("incumbent").get<std::vector<int>>();
    r.lb = j.at("lb").get<double>();
    r.ub = j.at("ub").get<double>();
    r.iterations = j.at("iterations").get<int>();
    r.converged = j.at("converged").get<bool>();
    r.fixed = j.at("fixed").get<std::map<int, int>>();
    return r;
  } catch (const std::exception& e) {
    return fail(std::string("corrupt cache (") + e.what() + ")");
  }
}

// ---------------------------------------------------------------- runner

namespace {

struct Chain {
  Objective objective = Objective::kRiskAverse;
  int setting = -1;
  Genotype initial;
};

struct Shared {
  const ExperimentConfig& cfg;
  std::shared_ptr<const ScenarioSet> train;
  std::shared_ptr<const ScenarioSet> fresh;
  std::optional<FilterSpec> filter;
  std::uint64_t dataset_hash = 0;
};

std::string label_for(const ExperimentConfig& cfg, const Chain& c, int horizon) {
  std::string head = c.setting >= 0 ? "ablation-s" + std::to_string(c.setting)
                                    : to_string(cfg.mode) + (c.objective == Objective::kRiskAverse ? "-ra" : "-rn");
  return head + "-" + c.initial.to_string() + "-N" + std::to_string(horizon);
}

DecompositionConfig cell_config(const ExperimentConfig& cfg, const Chain& c) {
  DecompositionConfig d = cfg.decomposition;
  if (c.objective == Objective::kRiskNeutral) d.alpha = 1.0;
  if (c.setting >= 0) {
    const bool irrelevant = d.enhancements.irrelevant;
    d.enhancements = ablation_setting(c.setting);
    d.enhancements.irrelevant = irrelevant;
  }
  return d;
}

SlotDomains cell_domains(const Shared& sh, const Chain& c, int horizon) {
  if (!sh.filter) return {};
  return sh.filter->domains(static_cast<int>(c.initial.index()), horizon);
}

DecompositionResult solve_cell(const Shared& sh, const Chain& c, int horizon, const DecompositionConfig& d,
                               const WarmStart* warm) {
  ProblemInstance inst(sh.train, c.initial, horizon);
  const auto domains = cell_domains(sh, c, horizon);
  return sh.cfg.mode == Mode::kStatic ? solve_static(inst, d, domains, warm) : solve_dynamic(inst, d, domains, warm);
}

WarmCacheKey cache_key(const Shared& sh, const Chain& c, int horizon, const DecompositionConfig& d) {
  WarmCacheKey k;
  k.dataset_hash = sh.dataset_hash;
  k.mode = sh.cfg.mode;
  k.genotype = c.initial.to_string();
  k.horizon = horizon;
  k.scenario_seed = sh.cfg.seed;
  k.scenarios = sh.cfg.scenarios;
  k.alpha = d.alpha;
  k.variant = c.setting >= 0 ? "s" + std::to_string(c.setting)
                             : (c.objective == Objective::kRiskAverse ? "ra" : "rn");
  return k;
}

// Runs one chain over the ascending horizons; results land in `out`.
void run_chain(const Shared& sh, const Chain& c, std::vector<RunRecord>& out, std::vector<std::string>& warnings) {
  const auto& cfg = sh.cfg;
  const auto d = cell_config(cfg, c);
  const auto space = cfg.mode == Mode::kStatic ? SelectionSpace::kStatic : SelectionSpace::kDynamic;
  std::vector<int> horizons = cfg.horizons;
  std::sort(horizons.begin(), horizons.end());
  horizons.erase(std::unique(horizons.begin(), horizons.end()), horizons.end());

  std::optional<std::pair<int, DecompositionResult>> prev;
  for (int N : horizons) {
    RunRecord r;
    r.label = label_for(cfg, c, N);
    r.mode = cfg.mode;
    r.objective = c.objective;
    r.genotype = c.initial.to_string();
    r.horizon = N;
    r.setting = c.setting;
    const auto start = std::chrono::steady_clock::now();
    try {
      std::optional<WarmStart> warm;
      if (d.enhancements.warm_start && N > 1) {
        const bool usable = space == SelectionSpace::kDynamic || sh.train->identity.has_value();
        if (!usable) {
          warnings.push_back(r.label + ": warm start needs the identity antibiotic; starting cold");
        } else {
          std::optional<DecompositionResult> source;
          if (prev && prev->first == N - 1) source = prev->second;
          if (!source && cfg.cache_dir) {
            std::string why;
            source = load_warm_cache(warm_cache_path(*cfg.cache_dir, cache_key(sh, c, N - 1, d)),
                                     cache_key(sh, c, N - 1, d), &why);
            if (!source) warnings.push_back(r.label + ": " + why);
          }
          if (!source) {
            // Preliminary run one step shorter, warm-started the same way.
            auto pre = solve_cell(sh, c, N - 1, d, nullptr);
            if (!pre.error.empty()) throw std::runtime_error("preliminary N-1 run failed: " + pre.error);
            source = std::move(pre);
          }
          warm = warm_start(*source, N - 1, ProblemInstance(sh.train, c.initial, N), d.alpha, space);
        }
      }
      auto res = solve_cell(sh, c, N, d, warm ? &*warm : nullptr);
      r.history = res.history;
      r.lb = res.lb;
      r.ub = res.ub;
      r.iterations = res.iterations;
      r.converged = res.converged;
      r.choice = res.incumbent;
      if (!res.error.empty()) throw std::runtime_error(res.error);
      if (res.incumbent.empty()) throw std::runtime_error("no incumbent found");
      if (cfg.cache_dir) save_warm_cache(warm_cache_path(*cfg.cache_dir, cache_key(sh, c, N, d)),
                                         cache_key(sh, c, N, d), res);

      ProblemInstance inst(sh.train, c.initial, N);
      const double level = cfg.decomposition.alpha;
      std::vector<double> in = space == SelectionSpace::kStatic ? static_values(StaticPlan{res.incumbent}, inst)
                                                                : dynamic_values(DynamicPolicy{res.incumbent}, inst);
      r.in_cvar = tail_objective(in, level, TailPolicy::kFractional);
      r.in_mean = std::accumulate(in.begin(), in.end(), 0.0) / static_cast<double>(in.size());
      const auto oos = space == SelectionSpace::kStatic
                           ? out_of_sample(StaticPlan{res.incumbent}, *sh.fresh, level, inst)
                           : out_of_sample(DynamicPolicy{res.incumbent}, *sh.fresh, level, inst);
      r.out_cvar = oos.cvar;
      r.out_mean = oos.mean;
      r.out_histogram = oos.histogram;
      for (const auto& w : oos.warnings) warnings.push_back(r.label + ": " + w);
      prev.emplace(N, std::move(res));
    } catch (const std::exception& e) {
      r.error = e.what();
      prev.reset();
    }
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    out.push_back(std::move(r));
  }
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  const auto started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = config_dataset(cfg);

  std::vector<Genotype> initials;
  if (cfg.initial.empty()) {
    for (int i = 1; i < data.genotypes(); ++i) initials.emplace_back(data.alleles(), static_cast<std::uint32_t>(i));
  } else {
    for (const auto& s : cfg.initial) {
      auto g = Genotype::from_string(s);
      if (g.alleles() != data.alleles())
        throw ConfigError("initial genotype '" + s + "' does not have " + std::to_string(data.alleles()) + " alleles");
      initials.push_back(g);
    }
  }

  Shared sh{cfg, nullptr, nullptr, std::nullopt, data.content_hash()};
  sh.train = std::make_shared<ScenarioSet>(sample_scenarios(data, cfg.scenarios, cfg.seed, cfg.identity));
  sh.fresh = std::make_shared<ScenarioSet>(sample_scenarios(data, cfg.out_of_sample, cfg.out_of_sample_seed, cfg.identity));
  if (cfg.filter) {
    std::ifstream in(*cfg.filter);
    if (!in) throw ConfigError("cannot open filter " + cfg.filter->string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      sh.filter = FilterSpec::from_json(ss.str());
    } catch (const std::exception& e) {
      throw ConfigError("filter " + cfg.filter->string() + ": " + e.what());
    }
    if (sh.filter->antibiotics != sh.train->antibiotics())
      throw ConfigError("filter was built for " + std::to_string(sh.filter->antibiotics) + " antibiotics, dataset has " +
                        std::to_string(sh.train->antibiotics()));
  }

  std::vector<Chain> chains;
  for (auto o : cfg.objectives)
    for (const auto& g : initials) chains.push_back({o, -1, g});
  for (int s : cfg.ablation)
    for (const auto& g : initials) chains.push_back({Objective::kRiskAverse, s, g});

  std::vector<std::vector<RunRecord>> per_chain(chains.size());
  std::vector<std::vector<std::string>> per_warn(chains.size());
  parallel_for(static_cast<int>(chains.size()), cfg.jobs,
               [&](int i) { run_chain(sh, chains[i], per_chain[i], per_warn[i]); });

  ExperimentOutcome outcome;
  for (std::size_t i = 0; i < chains.size(); ++i) {
    for (auto& r : per_chain[i]) {
      if (!r.error.empty()) {
        ++outcome.failures;
        outcome.warnings.push_back(r.label + " failed: " + r.error);
      }
      outcome.runs.push_back(std::move(r));
    }
    for (auto& w : per_warn[i]) outcome.warnings.push_back(std::move(w));
  }
  const bool both = std::count(cfg.objectives.begin(), cfg.objectives.end(), Objective::kRiskAverse) &&
                    std::count(cfg.objectives.begin(), cfg.objectives.end(), Objective::kRiskNeutral);
  if (both) outcome.comparison = compare_ra_rn(outcome.runs);

  // Artifacts.
  std::filesystem::create_directories(out_dir / "histories");
  {
    auto out = open_out(out_dir / "results.csv");
    write_results_csv(out, outcome.runs);
  }
  {
    auto hist = open_out(out_dir / "histograms.csv");
    auto summ = open_out(out_dir / "summary.csv");
    hist << "label,bin_lo,count\n";
    summ << "label,metric,value\n";
    for (const auto& r : outcome.runs) {
      if (!r.error.empty()) continue;
      write_histogram_rows(hist, r.label, r.out_histogram);
      summ << r.label << ",in_cvar," << num(r.in_cvar) << '\n' << r.label << ",in_mean," << num(r.in_mean) << '\n';
      summ << r.label << ",cvar," << num(r.out_cvar) << '\n' << r.label << ",mean," << num(r.out_mean) << '\n';
    }
  }
  for (const auto& r : outcome.runs) {
    auto out = open_out(out_dir / "histories" / (r.label + ".csv"));
    write_history(out, r.history);
  }
  if (both) {
    auto out = open_out(out_dir / "comparison.csv");
    write_comparison_csv(out, outcome.comparison);
  }
  if (!cfg.ablation.empty()) {
    auto it = open_out(out_dir / "ablation.csv");
    auto tm = open_out(out_dir / "ablation_time.csv");
    it << "genotype,N";
    tm << "genotype,N";
    for (int s : cfg.ablation) {
      it << ",setting" << s;
      tm << ",setting" << s;
    }
    it << '\n';
    tm << '\n';
    std::map<std::pair<std::string, int>, std::map<int, const RunRecord*>> cells;
    std::vector<std::pair<std::string, int>> order;
    for (const auto& r : outcome.runs) {
      if (r.setting < 0) continue;
      auto key = std::make_pair(r.genotype, r.horizon);
      if (!cells.count(key)) order.push_back(key);
      cells[key][r.setting] = &r;
    }
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    for (const auto& key : order) {
      it << key.first << ',' << key.second;
      tm << key.first << ',' << key.second;
      for (int s : cfg.ablation) {
        const RunRecord* r = cells[key].count(s) ? cells[key][s] : nullptr;
        if (!r || !r->error.empty()) {
          it << ",failed";
          tm << ",failed";
          continue;
        }
        // Iterations, with the remaining gap when the run stopped at tau.
        it << ',' << r->iterations;
        if (!r->converged) it << " gap " << num(r->ub - r->lb);
        char buf[32];
        std::snprintf(buf, sizeof buf, ",%.3f", r->wall_ms / 1000.0);
        tm << buf;
      }
      it << '\n';
      tm << '\n';
    }
  }
  {
    json runs = json::array();
    for (const auto& r : outcome.runs)
      runs.push_back({{"label", r.label},
                      {"status", r.error.empty() ? "ok" : "failed"},
                      {"error", r.error},
                      {"converged", r.converged},
                      {"iterations", r.iterations}});
    json s{{"runs", runs}, {"failures", outcome.failures}};
    if (both) s["comparison"] = comparison_json(outcome.comparison);
    auto out = open_out(out_dir / "summary.json");
    out << s.dump(2) << '\n';
  }
  {
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(sh.dataset_hash));
    json timing = json::object();
    for (const auto& r : outcome.runs) timing[r.label] = r.wall_ms;
    json m{{"started", started},
           {"finished", utc_now()},
           {"wall_seconds",
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()},
           {"dataset_hash", hash},
           {"scenario_seed", cfg.seed},
           {"out_of_sample_seed", cfg.out_of_sample_seed},
           {"run_wall_ms", timing},
           {"warnings", outcome.warnings},
           {"config", cfg.to_json()}};
    auto out = open_out(out_dir / "metadata.json");
    out << m.dump(2) << '\n';
  }
  return outcome;
}

}  // namespace atm
