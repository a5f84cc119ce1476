// Brute-force reference computations used by the test suites. Nothing here
// calls into the library's evaluation or solver code paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include "atm/evaluation.hpp"
#include "atm/landscape.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix dense(const atm::TransitionMatrix& m) {
  const int d = m.dimension();
  Matrix out(d, std::vector<double>(d));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) out[i][j] = m(i, j);
  return out;
}

inline Matrix multiply(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.size();
  Matrix c(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < n; ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

/// r^T (M_1 ... M_N) q with the full matrix product formed first.
inline double static_value(const std::vector<int>& plan, const atm::AntibioticScenario& sc, int from, int to) {
  const int d = sc.matrices.front().dimension();
  Matrix prod(d, std::vector<double>(d, 0.0));
  for (int i = 0; i < d; ++i) prod[i][i] = 1.0;
  for (int k : plan) prod = multiply(prod, dense(sc.matrices[k]));
  return prod[from][to];
}

/// Sum over every genotype path of length N of the product of the
/// transition probabilities chosen by the policy at each visited genotype.
inline double dynamic_value(const std::vector<int>& policy, const atm::AntibioticScenario& sc, int from, int to,
                            int horizon) {
  const int d = sc.matrices.front().dimension();
  double total = 0.0;
  std::vector<int> path(horizon + 1, 0);
  path[0] = from;
  std::function<void(int, double)> walk = [&](int n, double p) {
    if (p == 0.0) return;
    if (n == horizon) {
      if (path[n] == to) total += p;
      return;
    }
    const int g = path[n];
    for (int j = 0; j < d; ++j) {
      path[n + 1] = j;
      walk(n + 1, p * sc.matrices[policy[g]](g, j));
    }
  };
  walk(0, 1.0);
  return total;
}

/// Mean of the m smallest values, m = alpha * n (rounded).
inline double cvar_sorted(std::vector<double> v, double alpha) {
  std::sort(v.begin(), v.end());
  const auto m = static_cast<std::size_t>(std::llround(alpha * v.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) s += v[i];
  return s / static_cast<double>(m);
}

/// max over lambda of lambda - sum (lambda - v)^+ / (alpha n), scanning every
/// breakpoint (the piecewise-linear concave objective peaks at one).
inline double cvar_breakpoints(const std::vector<double>& v, double alpha) {
  const double mass = alpha * static_cast<double>(v.size());
  double best = -std::numeric_limits<double>::infinity();
  for (double lambda : v) {
    double s = 0.0;
    for (double x : v) s += std::max(0.0, lambda - x);
    best = std::max(best, lambda - s / mass);
  }
  return best;
}

/// Calls f(choice) for every vector in lists[0] x lists[1] x ..., lexicographic.
inline void for_each_product(const std::vector<std::vector<int>>& lists, const std::function<void(const std::vector<int>&)>& f) {
  std::vector<std::size_t> digit(lists.size(), 0);
  for (const auto& l : lists)
    if (l.empty()) return;
  std::vector<int> cur(lists.size());
  for (;;) {
    for (std::size_t i = 0; i < lists.size(); ++i) cur[i] = lists[i][digit[i]];
    f(cur);
    std::size_t i = lists.size();
    while (i > 0 && ++digit[i - 1] == lists[i - 1].size()) digit[--i] = 0;
    if (i == 0) break;
  }
}

inline std::vector<std::vector<int>> full_lists(int slots, int antibiotics) {
  std::vector<int> all(antibiotics);
  std::iota(all.begin(), all.end(), 0);
  return std::vector<std::vector<int>>(slots, all);
}

inline std::vector<double> plan_values(const std::vector<int>& plan, const atm::ProblemInstance& inst,
                                       const std::vector<int>& batch = {}) {
  std::vector<double> out;
  const auto& sc = inst.scenarios->scenarios;
  auto one = [&](int h) {
    out.push_back(static_value(plan, sc[h], static_cast<int>(inst.initial.index()), static_cast<int>(inst.target.index())));
  };
  if (batch.empty())
    for (int h = 0; h < inst.scenario_count(); ++h) one(h);
  else
    for (int h : batch) one(h);
  return out;
}

inline std::vector<double> policy_values(const std::vector<int>& policy, const atm::ProblemInstance& inst,
                                         const std::vector<int>& batch = {}) {
  std::vector<double> out;
  const auto& sc = inst.scenarios->scenarios;
  auto one = [&](int h) {
    out.push_back(dynamic_value(policy, sc[h], static_cast<int>(inst.initial.index()),
                                static_cast<int>(inst.target.index()), inst.horizon));
  };
  if (batch.empty())
    for (int h = 0; h < inst.scenario_count(); ++h) one(h);
  else
    for (int h : batch) one(h);
  return out;
}

struct Best {
  double value = -std::numeric_limits<double>::infinity();
  std::vector<int> choice;
};

/// max over all plans (optionally filtered) of CVaR over the full sample.
inline Best best_plan(const atm::ProblemInstance& inst, double alpha,
                      const std::function<bool(const std::vector<int>&)>& keep = nullptr) {
  Best b;
  for_each_product(full_lists(inst.horizon, inst.antibiotics()), [&](const std::vector<int>& p) {
    if (keep && !keep(p)) return;
    const double v = cvar_sorted(plan_values(p, inst), alpha);
    if (v > b.value) b = {v, p};
  });
  return b;
}

/// Vector-chain dynamic value (faster than path enumeration, still independent).
inline double dynamic_chain(const std::vector<int>& policy, const atm::AntibioticScenario& sc, int from, int to,
                            int horizon) {
  const int d = sc.matrices.front().dimension();
  std::vector<double> u(d, 0.0), nx(d);
  u[from] = 1.0;
  for (int n = 0; n < horizon; ++n) {
    std::fill(nx.begin(), nx.end(), 0.0);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) nx[j] += u[i] * sc.matrices[policy[i]](i, j);
    u.swap(nx);
  }
  return u[to];
}

inline Best best_policy(const atm::ProblemInstance& inst, double alpha, std::vector<std::vector<int>> lists = {}) {
  if (lists.empty()) lists = full_lists(inst.genotypes(), inst.antibiotics());
  Best b;
  for_each_product(lists, [&](const std::vector<int>& y) {
    std::vector<double> v;
    for (const auto& sc : inst.scenarios->scenarios)
      v.push_back(dynamic_chain(y, sc, static_cast<int>(inst.initial.index()), static_cast<int>(inst.target.index()),
                                inst.horizon));
    const double c = cvar_sorted(v, alpha);
    if (c > b.value) b = {c, y};
  });
  return b;
}

/// Random dataset with `raw` antibiotics; rates drawn as base * noise so
/// replicates differ.
inline atm::GrowthRateDataset random_dataset(int alleles, int raw, int replicates, std::uint64_t seed,
                                             double spread = 0.6) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> base(0.1, 2.0), noise(1.0 - spread, 1.0 + spread);
  const int d = 1 << alleles;
  std::vector<std::string> labels;
  for (int k = 0; k < raw; ++k) labels.push_back("AB" + std::to_string(k + 1));
  std::vector<double> rates;
  for (int k = 0; k < raw; ++k)
    for (int i = 0; i < d; ++i) {
      const double b = base(rng);
      for (int r = 0; r < replicates; ++r) rates.push_back(b * noise(rng));
    }
  return atm::GrowthRateDataset(alleles, labels, replicates, rates);
}

inline atm::ProblemInstance random_instance(int alleles, int raw, int replicates, int scenarios, int horizon,
                                            std::uint64_t seed, bool identity = true, int initial = -1) {
  auto ds = random_dataset(alleles, raw, replicates, seed);
  auto set = std::make_shared<atm::ScenarioSet>(atm::sample_scenarios(ds, scenarios, seed * 7919 + 1, identity));
  const int d = 1 << alleles;
  if (initial < 0) initial = d - 1;
  return atm::ProblemInstance(set, atm::Genotype(alleles, static_cast<std::uint32_t>(initial)), horizon);
}

}  // namespace oracle
