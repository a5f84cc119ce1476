#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "atm/evaluation.hpp"

namespace atm {

enum class VarKind { kContinuous, kBinary };
enum class Sense { kLessEqual, kEqual, kGreaterEqual };

struct Variable {
  std::string tag;
  VarKind kind = VarKind::kContinuous;
  double lower = 0.0;
  double upper = 1.0;
};

struct LinearTerm {
  int var = 0;
  double coef = 0.0;
};

struct Constraint {
  std::string name;
  std::vector<LinearTerm> terms;
  Sense sense = Sense::kLessEqual;
  double rhs = 0.0;
};

/// Which selection matrix a cut or domain talks about: x[n,k] (a slot is a
/// treatment step) or y[k,i] (a slot is a genotype).
enum class SelectionSpace { kStatic, kDynamic };

enum class CutKind { kNoGoodStatic, kNoGoodDynamic, kCartesian, kSymmetryEnhanced, kSymmetryBreaking };

std::string to_string(CutKind kind);

struct SelectionTerm {
  int slot = 0;
  int antibiotic = 0;
  double coef = 1.0;
  friend auto operator<=>(const SelectionTerm&, const SelectionTerm&) = default;
};

/// Linear inequality (or equality) over binary selection variables only.
struct Cut {
  CutKind kind = CutKind::kNoGoodStatic;
  SelectionSpace space = SelectionSpace::kStatic;
  std::vector<SelectionTerm> terms;
  Sense sense = Sense::kLessEqual;
  double rhs = 0.0;
  int iteration = 0;
  int cluster = -1;

  /// Left-hand side at the 0/1 point encoded by `choice` (one antibiotic per slot).
  double lhs(std::span<const int> choice) const;
  bool satisfied_by(std::span<const int> choice) const;
  /// Highest slot referenced, or -1 for an empty cut.
  int max_slot() const;
};

/// Per-slot allowed antibiotics. An empty outer vector, or an empty inner
/// list, means "all antibiotics".
using SlotDomains = std::vector<std::vector<int>>;

/// Sorted list of allowed antibiotics for `slot`.
std::vector<int> allowed_antibiotics(const SlotDomains& domains, int slot, int antibiotics);

enum class Formulation { kStaticRiskNeutral, kStaticRiskAverse, kDynamicRiskAverse };

/// What a model was built from, so the enumeration backend can solve it
/// without reading the rows.
struct ModelOrigin {
  Formulation formulation = Formulation::kStaticRiskAverse;
  ProblemInstance instance;
  std::vector<int> batch;
  double alpha = 1.0;
  SlotDomains domains;
  TailPolicy tail = TailPolicy::kInteger;
};

/// Solver-agnostic MILP: maximize objective subject to linear rows.
class MilpModel {
 public:
  int add_variable(std::string tag, VarKind kind, double lower, double upper);
  void add_constraint(std::string name, std::vector<LinearTerm> terms, Sense sense, double rhs);
  void add_objective_term(int var, double coef) { objective_.push_back({var, coef}); }

  std::optional<int> find(const std::string& tag) const;
  int at(const std::string& tag) const;

  const std::vector<Variable>& variables() const noexcept { return variables_; }
  std::vector<Variable>& variables() noexcept { return variables_; }
  const std::vector<Constraint>& constraints() const noexcept { return constraints_; }
  const std::vector<LinearTerm>& objective() const noexcept { return objective_; }
  const std::vector<Cut>& cuts() const noexcept { return cuts_; }
  const std::optional<ModelOrigin>& origin() const noexcept { return origin_; }

  void set_origin(ModelOrigin o) { origin_ = std::move(o); }
  void attach_cut(Cut c) { cuts_.push_back(std::move(c)); }

  std::size_t binary_count() const;
  /// Tag of the selection variable for (slot, antibiotic) in `space`.
  static std::string selection_tag(SelectionSpace space, int slot, int antibiotic);

  /// Objective value and maximum row/bound violation at `values` (indexed like variables()).
  double objective_value(std::span<const double> values) const;
  double max_violation(std::span<const double> values) const;

 private:
  std::vector<Variable> variables_;
  std::vector<Constraint> constraints_;
  std::vector<LinearTerm> objective_;
  std::map<std::string, int> index_;
  std::vector<Cut> cuts_;
  std::optional<ModelOrigin> origin_;
};

/// Risk-neutral static model: mean over `batch` of the target probability.
MilpModel build_static_rn(const ProblemInstance& inst, std::vector<int> batch, const SlotDomains& domains = {});
/// CVaR static model.
MilpModel build_static_ra(const ProblemInstance& inst, std::vector<int> batch, double alpha,
                          const SlotDomains& domains = {}, TailPolicy tail = TailPolicy::kInteger);
/// CVaR dynamic model. `fixed` pins genotype index -> antibiotic.
MilpModel build_dynamic_ra(const ProblemInstance& inst, std::vector<int> batch, double alpha,
                           const std::map<int, int>& fixed = {}, const SlotDomains& domains = {},
                           TailPolicy tail = TailPolicy::kInteger);

/// Appends the cuts as rows (and to the attached pool). Throws on unknown tags.
MilpModel add_cuts(MilpModel model, const std::vector<Cut>& cuts);

enum class SolveStatus { kOptimal, kGapLimit, kTimeLimit, kInfeasible };
std::string to_string(SolveStatus s);

struct MilpSolution {
  SolveStatus status = SolveStatus::kInfeasible;
  double objective = 0.0;
  double bound = 0.0;
  std::map<std::string, double> values;
  std::vector<int> choice;  // plan (per step) or policy (per genotype)
  double wall_seconds = 0.0;
  std::size_t evaluated = 0;  // points scored by the enumeration backend
  std::string log;
};

struct SolveLimits {
  double abs_gap = 1e-3;
  double time_limit = 7200.0;
};

enum class Backend { kAuto, kEnumeration, kExternal };
std::string to_string(Backend b);
Backend backend_from_string(const std::string& s);

struct EnumerationOptions {
  std::size_t budget = 10'000'000;
  SlotDomains domains;
  TailPolicy tail = TailPolicy::kInteger;
};

/// Exhaustive search over plans that satisfy the domains and every cut.
/// Ties go to the lexicographically smallest plan. Infeasible when no plan
/// survives the cuts.
MilpSolution enumerate_static(const ProblemInstance& inst, std::span<const int> batch, double alpha,
                              const std::vector<Cut>& cuts, const EnumerationOptions& opts = {});
/// Same over policies; `fixed` genotypes are not enumerated.
MilpSolution enumerate_dynamic(const ProblemInstance& inst, std::span<const int> batch, double alpha,
                               const std::vector<Cut>& cuts, const std::map<int, int>& fixed = {},
                               const EnumerationOptions& opts = {});

/// Number of points the enumeration backend would visit (saturates at SIZE_MAX).
std::size_t search_space_size(const ModelOrigin& origin, std::size_t slots);

/// Free-format MPS, maximization declared via OBJSENSE.
void write_interchange(const MilpModel& model, std::ostream& out);
void write_interchange(const MilpModel& model, const std::filesystem::path& path);
/// Deterministic MPS-safe name.
std::string sanitize_name(const std::string& name);

/// Command used for the external backend. Defaults to the bundled HiGHS
/// wrapper; overridable with the ATM_MILP_SOLVER environment variable.
std::string default_external_command();
bool external_solver_available(const std::string& command = default_external_command());

/// Parses a HiGHS-style solution file (model status, objective, column values).
MilpSolution parse_solution_file(std::istream& in);

MilpSolution solve(const MilpModel& model, Backend backend, const SolveLimits& limits = {},
                   const EnumerationOptions& enumeration = {},
                   const std::string& external_command = default_external_command());

/// Reads back the plan/policy from x/y values of a solved model.
std::vector<int> extract_choice(const MilpModel& model, const std::map<std::string, double>& values);

}  // namespace atm
