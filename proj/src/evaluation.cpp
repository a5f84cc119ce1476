#include "atm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace atm {

ProblemInstance::ProblemInstance(std::shared_ptr<const ScenarioSet> set, Genotype initial_genotype, int n)
    : scenarios(std::move(set)), initial(initial_genotype), horizon(n) {
  if (!scenarios || scenarios->size() == 0) throw std::invalid_argument("problem instance needs scenarios");
  if (initial.alleles() != scenarios->alleles) throw std::invalid_argument("initial genotype has wrong length");
  if (n < 1) throw std::invalid_argument("horizon must be >= 1");
  target = Genotype::wild_type(scenarios->alleles);
}

ProblemInstance ProblemInstance::with_horizon(int n) const {
  ProblemInstance p = *this;
  if (n < 1) throw std::invalid_argument("horizon must be >= 1");
  p.horizon = n;
  return p;
}

ProblemInstance ProblemInstance::with_scenarios(std::shared_ptr<const ScenarioSet> set) const {
  return ProblemInstance(std::move(set), initial, horizon);
}

namespace {

void check_antibiotic(int k, int K) {
  if (k < 0 || k >= K) throw std::out_of_range("antibiotic index " + std::to_string(k) + " out of range");
}

// next = cur * M
void step(std::span<const double> cur, const TransitionMatrix& m, std::span<double> next) {
  const int d = m.dimension();
  std::fill(next.begin(), next.end(), 0.0);
  for (int i = 0; i < d; ++i) {
    const double ui = cur[i];
    if (ui == 0.0) continue;
    auto row = m.row(i);
    for (int j = 0; j < d; ++j) next[j] += ui * row[j];
  }
}

}  // namespace

double eval_static(const StaticPlan& plan, const AntibioticScenario& scenario, const ProblemInstance& inst) {
  if (plan.horizon() != inst.horizon)
    throw std::invalid_argument("plan length " + std::to_string(plan.horizon()) + " != horizon " +
                                std::to_string(inst.horizon));
  const int K = static_cast<int>(scenario.matrices.size());
  const int d = inst.genotypes();
  std::vector<double> cur(static_cast<std::size_t>(d), 0.0), next(cur.size());
  cur[inst.initial.index()] = 1.0;
  for (int k : plan.choices) {
    check_antibiotic(k, K);
    step(cur, scenario.matrices[k], next);
    cur.swap(next);
  }
  return cur[inst.target.index()];
}

double eval_dynamic(const DynamicPolicy& policy, const AntibioticScenario& scenario, const ProblemInstance& inst) {
  const int d = inst.genotypes();
  if (static_cast<int>(policy.assignment.size()) != d)
    throw std::invalid_argument("policy must assign an antibiotic to all " + std::to_string(d) + " genotypes");
  const int K = static_cast<int>(scenario.matrices.size());
  for (int k : policy.assignment) check_antibiotic(k, K);
  std::vector<double> cur(static_cast<std::size_t>(d), 0.0), next(cur.size());
  cur[inst.initial.index()] = 1.0;
  for (int n = 0; n < inst.horizon; ++n) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int i = 0; i < d; ++i) {
      const double ui = cur[i];
      if (ui == 0.0) continue;
      auto row = scenario.matrices[policy.assignment[i]].row(i);
      for (int j = 0; j < d; ++j) next[j] += ui * row[j];
    }
    cur.swap(next);
  }
  return cur[inst.target.index()];
}

std::vector<double> static_values(const StaticPlan& plan, const ProblemInstance& inst, std::span<const int> indices) {
  const auto& sc = inst.scenarios->scenarios;
  std::vector<double> out;
  if (indices.empty()) {
    out.reserve(sc.size());
    for (const auto& s : sc) out.push_back(eval_static(plan, s, inst));
  } else {
    out.reserve(indices.size());
    for (int h : indices) out.push_back(eval_static(plan, sc.at(static_cast<std::size_t>(h)), inst));
  }
  return out;
}

std::vector<double> dynamic_values(const DynamicPolicy& policy, const ProblemInstance& inst,
                                   std::span<const int> indices) {
  const auto& sc = inst.scenarios->scenarios;
  std::vector<double> out;
  if (indices.empty()) {
    out.reserve(sc.size());
    for (const auto& s : sc) out.push_back(eval_dynamic(policy, s, inst));
  } else {
    out.reserve(indices.size());
    for (int h : indices) out.push_back(eval_dynamic(policy, sc.at(static_cast<std::size_t>(h)), inst));
  }
  return out;
}

int tail_count(std::size_t n, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
  if (n == 0) throw std::invalid_argument("CVaR of an empty vector");
  const double m = alpha * static_cast<double>(n);
  const double r = std::round(m);
  if (std::abs(m - r) > 1e-9 || r < 1.0) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "alpha * n = %g * %zu = %g is not a positive integer", alpha, n, m);
    throw std::invalid_argument(buf);
  }
  return static_cast<int>(r);
}

double cvar(std::span<const double> values, double alpha) {
  const int m = tail_count(values.size(), alpha);
  std::vector<double> v(values.begin(), values.end());
  if (static_cast<std::size_t>(m) < v.size()) std::nth_element(v.begin(), v.begin() + (m - 1), v.end());
  std::sort(v.begin(), v.begin() + m);
  return std::accumulate(v.begin(), v.begin() + m, 0.0) / m;
}

double cvar_lp(std::span<const double> values, double alpha, TailPolicy policy) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
  if (values.empty()) throw std::invalid_argument("CVaR of an empty vector");
  double mass = alpha * static_cast<double>(values.size());
  if (policy == TailPolicy::kInteger) mass = tail_count(values.size(), alpha);
  // lambda sits at the ceil(mass)-th smallest value.
  const auto c = static_cast<std::size_t>(std::max(1.0, std::ceil(mass - 1e-9)));
  std::vector<double> v(values.begin(), values.end());
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(c - 1), v.end());
  const double lambda = v[c - 1];
  double shortfall = 0.0;
  for (double x : values) shortfall += std::max(0.0, lambda - x);
  return lambda - shortfall / mass;
}

double tail_objective(std::span<const double> values, double alpha, TailPolicy policy) {
  const double m = alpha * static_cast<double>(values.size());
  if (policy == TailPolicy::kFractional && std::abs(m - std::round(m)) > 1e-9)
    return cvar_lp(values, alpha, TailPolicy::kFractional);
  return cvar(values, alpha);
}

Histogram histogram(std::span<const double> values) {
  Histogram h{};
  for (double v : values) {
    int bin = static_cast<int>(std::floor(v / 0.05 + 1e-12));
    h[static_cast<std::size_t>(std::clamp(bin, 0, kHistogramBins - 1))]++;
  }
  return h;
}

namespace {

OutOfSampleReport summarize(const std::vector<double>& values, double alpha, std::uint64_t training_seed,
                            std::uint64_t fresh_seed) {
  OutOfSampleReport r;
  r.cvar = cvar(values, alpha);
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  r.histogram = histogram(values);
  r.training_seed = training_seed;
  r.fresh_seed = fresh_seed;
  if (training_seed == fresh_seed)
    r.warnings.push_back("out-of-sample scenarios share the training seed " + std::to_string(fresh_seed));
  return r;
}

std::shared_ptr<const ScenarioSet> borrow(const ScenarioSet& s) {
  return std::shared_ptr<const ScenarioSet>(std::shared_ptr<const ScenarioSet>{}, &s);
}

}  // namespace

OutOfSampleReport out_of_sample(const StaticPlan& plan, const ScenarioSet& fresh, double alpha,
                                const ProblemInstance& inst) {
  auto fresh_inst = inst.with_scenarios(borrow(fresh));
  return summarize(static_values(plan, fresh_inst), alpha, inst.scenarios->seed, fresh.seed);
}

OutOfSampleReport out_of_sample(const DynamicPolicy& policy, const ScenarioSet& fresh, double alpha,
                                const ProblemInstance& inst) {
  auto fresh_inst = inst.with_scenarios(borrow(fresh));
  return summarize(dynamic_values(policy, fresh_inst), alpha, inst.scenarios->seed, fresh.seed);
}

void write_histogram_rows(std::ostream& out, const std::string& label, const Histogram& h) {
  char buf[32];
  for (int b = 0; b < kHistogramBins; ++b) {
    std::snprintf(buf, sizeof buf, "%.2f", 0.05 * b);
    out << label << ',' << buf << ',' << h[static_cast<std::size_t>(b)] << '\n';
  }
}

void write_summary_rows(std::ostream& out, const std::string& label, const OutOfSampleReport& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", r.cvar);
  out << label << ",cvar," << buf << '\n';
  std::snprintf(buf, sizeof buf, "%.17g", r.mean);
  out << label << ",mean," << buf << '\n';
}

std::string format_choices(std::span<const int> choices, char sep) {
  std::string s;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(choices[i]);
  }
  return s;
}

}  // namespace atm
