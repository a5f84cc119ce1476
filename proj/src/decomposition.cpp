#include "atm/decomposition.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <thread>

#include "atm/enhancements.hpp"

namespace atm {

ObjectiveCache::ObjectiveCache(const ProblemInstance& inst, double alpha, SelectionSpace space)
    : inst_(inst), alpha_(alpha), space_(space) {
  tail_count(static_cast<std::size_t>(inst.scenario_count()), alpha);
}

double ObjectiveCache::value(const std::vector<int>& choice) {
  {
    std::lock_guard lock(mu_);
    if (auto it = values_.find(choice); it != values_.end()) return it->second;
  }
  const auto vals = space_ == SelectionSpace::kStatic ? static_values(StaticPlan{choice}, inst_)
                                                      : dynamic_values(DynamicPolicy{choice}, inst_);
  const double v = cvar(vals, alpha_);
  std::lock_guard lock(mu_);
  values_.emplace(choice, v);
  return v;
}

void ObjectiveCache::insert(const std::vector<int>& choice, double v) {
  std::lock_guard lock(mu_);
  values_[choice] = v;
}

bool ObjectiveCache::contains(const std::vector<int>& choice) const {
  std::lock_guard lock(mu_);
  return values_.count(choice) > 0;
}

std::map<std::vector<int>, double> ObjectiveCache::entries() const {
  std::lock_guard lock(mu_);
  return values_;
}

std::size_t ObjectiveCache::size() const {
  std::lock_guard lock(mu_);
  return values_.size();
}

EnhancementToggles ablation_setting(int setting) {
  EnhancementToggles all{true, true, true, true, true};
  switch (setting) {
    case 0: return {false, false, false, false, true};
    case 1: all.cartesian = false; return all;
    case 2: all.symmetry = false; return all;
    case 3: all.regroup = false; return all;
    case 4: all.warm_start = false; return all;
    case 5: return all;
    default: throw std::invalid_argument("ablation setting must be 0..5, got " + std::to_string(setting));
  }
}

std::vector<std::vector<int>> equipartition(int scenario_count, int batches, double alpha, TailPolicy tail) {
  if (batches < 1) throw std::invalid_argument("batch count must be >= 1");
  if (scenario_count % batches != 0)
    throw std::invalid_argument("|H| = " + std::to_string(scenario_count) + " is not divisible by P = " +
                                std::to_string(batches));
  const int size = scenario_count / batches;
  if (tail == TailPolicy::kInteger) {
    const double m = alpha * size;
    if (std::abs(m - std::round(m)) > 1e-9 || std::round(m) < 1.0) {
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "alpha * |H^p| = %g * %d = %g is not a positive integer (enable the fractional batch tail)",
                    alpha, size, m);
      throw std::invalid_argument(buf);
    }
  } else if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("alpha must lie in (0, 1]");
  }
  std::vector<std::vector<int>> out(static_cast<std::size_t>(batches));
  for (int p = 0; p < batches; ++p)
    for (int j = 0; j < size; ++j) out[p].push_back(p * size + j);
  return out;
}

std::vector<std::vector<int>> regroup_balanced(std::span<const double> values, int batches) {
  if (batches < 1) throw std::invalid_argument("batch count must be >= 1");
  std::vector<int> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] < values[b]; });
  std::vector<std::vector<int>> out(static_cast<std::size_t>(batches));
  for (std::size_t r = 0; r < order.size(); ++r) out[r % batches].push_back(order[r]);
  for (auto& b : out) std::sort(b.begin(), b.end());
  return out;
}

namespace {

bool improves(double v, const std::vector<int>& choice, double lb, const std::vector<int>& incumbent) {
  return incumbent.empty() || v > lb || (v == lb && choice < incumbent);
}

}  // namespace

Bounds bounds_from_batches(const std::vector<BatchSolution>& batch_solutions, ObjectiveCache& cache) {
  if (batch_solutions.empty()) throw std::invalid_argument("no batch solutions");
  Bounds b;
  double sum = 0.0;
  for (const auto& s : batch_solutions) {
    sum += s.objective;
    const double v = cache.value(s.choice);
    if (improves(v, s.choice, b.lb, b.incumbent)) {
      b.lb = v;
      b.incumbent = s.choice;
    }
  }
  b.ub = sum / static_cast<double>(batch_solutions.size());
  return b;
}

Cut no_good_cut_static(const StaticPlan& plan) {
  if (plan.choices.empty()) throw std::invalid_argument("empty plan");
  Cut c;
  c.kind = CutKind::kNoGoodStatic;
  c.space = SelectionSpace::kStatic;
  for (int n = 0; n < plan.horizon(); ++n) c.terms.push_back({n, plan.choices[n], 1.0});
  c.rhs = plan.horizon() - 1;
  return c;
}

Cut no_good_cut_dynamic(const DynamicPolicy& policy) {
  if (policy.assignment.empty()) throw std::invalid_argument("empty policy");
  Cut c;
  c.kind = CutKind::kNoGoodDynamic;
  c.space = SelectionSpace::kDynamic;
  const int d = static_cast<int>(policy.assignment.size());
  for (int i = 0; i < d; ++i) c.terms.push_back({i, policy.assignment[i], 1.0});
  c.rhs = d - 1;
  return c;
}

void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (int i; (i = next++) < n;) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace {

using Clock = std::chrono::steady_clock;

struct BatchOutcome {
  bool feasible = false;
  std::vector<int> choice;
  double objective = 0.0;
  double bound = 0.0;
  double ms = 0.0;
};

// Everything that differs between the static and dynamic loops.
struct Space {
  SelectionSpace kind;
  int slots;
  SlotDomains domains;    // already merged with fixed entries
  std::map<int, int> fixed;
};

BatchOutcome solve_batch(const ProblemInstance& inst, const DecompositionConfig& cfg, const Space& sp,
                         const std::vector<int>& batch, const std::vector<Cut>& cuts) {
  const auto start = Clock::now();
  Backend backend = cfg.backend;
  EnumerationOptions eo;
  eo.budget = cfg.enumeration_budget;
  eo.domains = sp.domains;
  eo.tail = cfg.batch_tail;
  if (backend == Backend::kAuto) {
    std::vector<std::vector<int>> lists;
    for (int s = 0; s < sp.slots; ++s) lists.push_back(allowed_antibiotics(sp.domains, s, inst.antibiotics()));
    std::size_t space = 1;
    bool over = false;
    for (const auto& l : lists) {
      if (space > cfg.enumeration_budget / std::max<std::size_t>(1, l.size())) over = true;
      space *= l.size();
    }
    backend = over || space > cfg.enumeration_budget ? Backend::kExternal : Backend::kEnumeration;
  }
  MilpSolution sol;
  if (backend == Backend::kEnumeration) {
    sol = sp.kind == SelectionSpace::kStatic ? enumerate_static(inst, batch, cfg.alpha, cuts, eo)
                                             : enumerate_dynamic(inst, batch, cfg.alpha, cuts, {}, eo);
  } else {
    MilpModel m = sp.kind == SelectionSpace::kStatic
                      ? build_static_ra(inst, batch, cfg.alpha, sp.domains, cfg.batch_tail)
                      : build_dynamic_ra(inst, batch, cfg.alpha, sp.fixed, sp.domains, cfg.batch_tail);
    m = add_cuts(std::move(m), cuts);
    sol = solve(m, Backend::kExternal, cfg.limits, eo, cfg.external_command);
  }
  BatchOutcome out;
  out.ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  if (sol.status == SolveStatus::kInfeasible) return out;
  if (sol.choice.empty())
    throw std::runtime_error("batch subproblem stopped at " + to_string(sol.status) + " without a solution");
  out.feasible = true;
  out.choice = sol.choice;
  out.objective = sol.objective;
  out.bound = std::max(sol.bound, sol.objective);
  return out;
}

DecompositionResult run(const ProblemInstance& inst, const DecompositionConfig& cfg, const Space& sp,
                        const WarmStart* warm) {
  if (cfg.max_iterations < 1) throw std::invalid_argument("tau must be >= 1");
  if (cfg.epsilon < 0) throw std::invalid_argument("epsilon must be >= 0");
  const bool is_static = sp.kind == SelectionSpace::kStatic;
  const auto identity = inst.scenarios->identity;
  const bool symmetry = is_static && cfg.enhancements.symmetry && identity.has_value();
  const bool cartesian = is_static && cfg.enhancements.cartesian;

  auto batches = equipartition(inst.scenario_count(), cfg.batches, cfg.alpha, cfg.batch_tail);
  ObjectiveCache cache(inst, cfg.alpha, sp.kind);

  DecompositionResult res;
  res.fixed = sp.fixed;
  std::vector<Cut> pool;
  if (symmetry) pool = symmetry_breaking(inst.horizon, *identity);

  double lb = 0.0, ub = 1.0;
  std::vector<int> incumbent;
  auto offer = [&](const std::vector<int>& choice, double v) {
    if (improves(v, choice, lb, incumbent)) {
      lb = v;
      incumbent = choice;
    }
  };
  if (warm) {
    for (const auto& [choice, v] : warm->evaluated) {
      cache.insert(choice, v);
      offer(choice, v);
    }
    for (const auto& c : warm->cuts) pool.push_back(c);
  }

  const int P = cfg.batches;
  std::vector<std::optional<double>> last(static_cast<std::size_t>(P));
  int t = 1;
  try {
    while (ub - lb > cfg.epsilon && t <= cfg.max_iterations) {
      std::vector<BatchOutcome> out(static_cast<std::size_t>(P));
      parallel_for(P, cfg.threads, [&](int p) { out[p] = solve_batch(inst, cfg, sp, batches[p], pool); });

      bool any_feasible = false;
      double sum = 0.0;
      std::vector<std::vector<int>> distinct;
      for (int p = 0; p < P; ++p) {
        if (out[p].feasible) {
          any_feasible = true;
          last[p] = out[p].bound;
          offer(out[p].choice, cache.value(out[p].choice));
          if (std::find(distinct.begin(), distinct.end(), out[p].choice) == distinct.end())
            distinct.push_back(out[p].choice);
        }
        sum += last[p].value_or(lb);
      }
      if (any_feasible)
        ub = std::min(ub, std::max(lb, sum / P));
      else
        ub = lb;
      ub = std::max(ub, lb);
      for (int p = 0; p < P; ++p)
        res.history.push_back({t, p, out[p].choice, out[p].feasible ? out[p].objective : last[p].value_or(lb), lb,
                               ub, out[p].ms});
      if (ub - lb <= cfg.epsilon || t == cfg.max_iterations) {
        ++t;
        break;
      }

      // Cuts for this iteration's solutions.
      std::sort(distinct.begin(), distinct.end());
      if (cartesian) {
        std::vector<StaticPlan> plans;
        for (const auto& c : distinct) plans.push_back(StaticPlan{c});
        const int k = cfg.clusters > 0 ? cfg.clusters : default_cluster_count(plans.size());
        auto clusters = cluster_solutions(plans, k, inst.antibiotics(), cfg.cluster_seed + static_cast<unsigned>(t));
        CartesianOptions co;
        co.budget = cfg.cartesian_budget;
        co.threads = cfg.threads;
        if (symmetry) co.symmetry_identity = identity;
        for (std::size_t ci = 0; ci < clusters.size(); ++ci) {
          auto cr = cartesian_cut(clusters[ci], cache, lb, co);
          if (!cr.best.empty()) offer(cr.best, cr.lb);
          std::vector<Cut> cuts = cr.cuts;
          if (symmetry && !cr.fell_back) {
            auto enhanced = symmetry_enhanced_cuts(clusters[ci], *identity);
            if (!enhanced.empty()) cuts = std::move(enhanced);
          }
          for (auto& c : cuts) {
            c.iteration = t;
            c.cluster = static_cast<int>(ci);
            pool.push_back(std::move(c));
          }
        }
      } else {
        for (const auto& c : distinct) {
          Cut cut = is_static ? no_good_cut_static(StaticPlan{c}) : no_good_cut_dynamic(DynamicPolicy{c});
          cut.iteration = t;
          pool.push_back(std::move(cut));
        }
      }
      ub = std::max(ub, lb);

      if (cfg.enhancements.regroup && !incumbent.empty() && (t == 1 || cfg.regroup_every_iteration)) {
        const auto vals = is_static ? static_values(StaticPlan{incumbent}, inst)
                                    : dynamic_values(DynamicPolicy{incumbent}, inst);
        batches = regroup_balanced(vals, P);
      }
      ++t;
    }
  } catch (const std::exception& e) {
    res.error = e.what();
  }

  res.incumbent = incumbent;
  res.lb = lb;
  res.ub = ub;
  res.iterations = t - 1;
  res.converged = res.error.empty() && ub - lb <= cfg.epsilon;
  res.cuts = std::move(pool);
  res.evaluated = cache.entries();
  return res;
}

}  // namespace

DecompositionResult solve_static(const ProblemInstance& inst, const DecompositionConfig& config,
                                 const SlotDomains& domains, const WarmStart* warm) {
  Space sp{SelectionSpace::kStatic, inst.horizon, domains, {}};
  return run(inst, config, sp, warm);
}

DecompositionResult solve_dynamic(const ProblemInstance& inst, const DecompositionConfig& config,
                                  const SlotDomains& domains, const WarmStart* warm) {
  const int d = inst.genotypes(), K = inst.antibiotics();
  Space sp{SelectionSpace::kDynamic, d, SlotDomains(static_cast<std::size_t>(d)), {}};
  for (int i = 0; i < d; ++i) sp.domains[i] = allowed_antibiotics(domains, i, K);
  if (config.enhancements.irrelevant) {
    for (const auto& g : irrelevant_genotypes(inst.initial, inst.horizon)) {
      const int i = static_cast<int>(g.index());
      const auto& dom = sp.domains[i];
      int k = dom.front();
      if (inst.scenarios->identity && std::binary_search(dom.begin(), dom.end(), *inst.scenarios->identity))
        k = *inst.scenarios->identity;
      sp.fixed[i] = k;
      sp.domains[i] = {k};
    }
  }
  return run(inst, config, sp, warm);
}

void write_history(std::ostream& out, const std::vector<IterationRecord>& history, bool header, bool with_time) {
  if (header) out << "t,batch,plan,batch_obj,LB,UB" << (with_time ? ",wall_ms" : "") << '\n';
  char buf[128];
  for (const auto& r : history) {
    const std::string plan = r.choice.empty() ? "infeasible" : format_choices(r.choice);
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", r.batch_obj, r.lb, r.ub);
    out << r.t << ',' << r.batch << ',' << plan << ',' << buf;
    if (with_time) {
      std::snprintf(buf, sizeof buf, ",%.3f", r.wall_ms);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace atm
