#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <vector>

#include "atm/evaluation.hpp"
#include "atm/milp.hpp"

namespace atm {

/// Memoized full-sample CVaR of plans (static) or policies (dynamic).
/// Thread-safe; every value ever computed is kept for warm starts and
/// for checking that cuts only remove evaluated points.
class ObjectiveCache {
 public:
  ObjectiveCache(const ProblemInstance& inst, double alpha, SelectionSpace space);

  double value(const std::vector<int>& choice);
  void insert(const std::vector<int>& choice, double v);
  bool contains(const std::vector<int>& choice) const;
  std::map<std::vector<int>, double> entries() const;
  std::size_t size() const;

  const ProblemInstance& instance() const noexcept { return inst_; }
  double alpha() const noexcept { return alpha_; }
  SelectionSpace space() const noexcept { return space_; }

 private:
  ProblemInstance inst_;
  double alpha_;
  SelectionSpace space_;
  mutable std::mutex mu_;
  std::map<std::vector<int>, double> values_;
};

struct EnhancementToggles {
  bool cartesian = false;
  bool symmetry = false;
  bool regroup = false;
  bool warm_start = false;
  bool irrelevant = true;  // dynamic only
};

/// Ablation settings: 0 has no enhancements, 5 has all of them, and 1-4
/// drop one each (Cartesian cuts, symmetry, regrouping, warm start).
EnhancementToggles ablation_setting(int setting);

struct DecompositionConfig {
  int batches = 40;
  double alpha = 0.1;
  double epsilon = 0.01;
  int max_iterations = 5;
  Backend backend = Backend::kAuto;
  SolveLimits limits{};
  EnhancementToggles enhancements{};
  bool regroup_every_iteration = false;
  int threads = 1;
  /// Allow alpha*|H^p| to be fractional in batch subproblems (the LP form
  /// of CVaR keeps the batch average an upper bound).
  TailPolicy batch_tail = TailPolicy::kInteger;
  int clusters = 0;  // 0: ceil(|T|/3)
  std::uint64_t cluster_seed = 0;
  std::size_t cartesian_budget = 10'000;
  std::size_t enumeration_budget = 10'000'000;
  std::string external_command = default_external_command();
};

struct IterationRecord {
  int t = 0;
  int batch = 0;
  std::vector<int> choice;
  double batch_obj = 0.0;
  double lb = 0.0;
  double ub = 1.0;
  double wall_ms = 0.0;
};

/// Solutions and cuts seeded into a run before its first iteration.
struct WarmStart {
  std::map<std::vector<int>, double> evaluated;  // on the new instance
  std::vector<Cut> cuts;
};

struct DecompositionResult {
  std::vector<int> incumbent;
  double lb = 0.0;
  double ub = 1.0;
  int iterations = 0;
  bool converged = false;
  std::vector<IterationRecord> history;
  std::vector<Cut> cuts;                         // pool at termination, symmetry rows included
  std::map<std::vector<int>, double> evaluated;  // full-sample CVaR of every scored point
  std::map<int, int> fixed;                      // dynamic: pinned genotypes
  std::string error;                             // set when a subproblem failed
};

/// Contiguous blocks of |H|/P indices.
std::vector<std::vector<int>> equipartition(int scenario_count, int batches, double alpha,
                                            TailPolicy tail = TailPolicy::kInteger);

/// Rank scenarios by `values` (ascending, ties by index); rank r goes to batch r mod P.
std::vector<std::vector<int>> regroup_balanced(std::span<const double> values, int batches);

struct BatchSolution {
  std::vector<int> choice;
  double objective = 0.0;
};

struct Bounds {
  double lb = 0.0;
  double ub = 1.0;
  std::vector<int> incumbent;
};

/// LB = best full-sample CVaR among batch solutions, UB = mean batch optimum.
Bounds bounds_from_batches(const std::vector<BatchSolution>& batch_solutions, ObjectiveCache& cache);

Cut no_good_cut_static(const StaticPlan& plan);
Cut no_good_cut_dynamic(const DynamicPolicy& policy);

DecompositionResult solve_static(const ProblemInstance& inst, const DecompositionConfig& config,
                                 const SlotDomains& domains = {}, const WarmStart* warm = nullptr);
DecompositionResult solve_dynamic(const ProblemInstance& inst, const DecompositionConfig& config,
                                  const SlotDomains& domains = {}, const WarmStart* warm = nullptr);

/// `t,batch,plan,batch_obj,LB,UB,wall_ms` rows.
void write_history(std::ostream& out, const std::vector<IterationRecord>& history, bool header = true,
                   bool with_time = true);

/// Runs body(i) for i in [0, n) on up to `threads` workers.
void parallel_for(int n, int threads, const std::function<void(int)>& body);

}  // namespace atm
