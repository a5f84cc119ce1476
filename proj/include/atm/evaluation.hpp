#pragma once

#include <array>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "atm/landscape.hpp"

namespace atm {

/// One antibiotic index per treatment step.
struct StaticPlan {
  std::vector<int> choices;
  int horizon() const noexcept { return static_cast<int>(choices.size()); }
  friend auto operator<=>(const StaticPlan&, const StaticPlan&) = default;
};

/// One antibiotic index per genotype (indexed by genotype index).
struct DynamicPolicy {
  std::vector<int> assignment;
  friend auto operator<=>(const DynamicPolicy&, const DynamicPolicy&) = default;
};

/// Scenario sample plus start genotype, target (wild type) and horizon N.
struct ProblemInstance {
  std::shared_ptr<const ScenarioSet> scenarios;
  Genotype initial;
  Genotype target;
  int horizon = 0;

  ProblemInstance() = default;
  ProblemInstance(std::shared_ptr<const ScenarioSet> set, Genotype initial_genotype, int n);

  int antibiotics() const { return scenarios->antibiotics(); }
  int genotypes() const { return scenarios->genotypes(); }
  int scenario_count() const { return scenarios->size(); }
  /// Same scenarios and genotypes, different horizon.
  ProblemInstance with_horizon(int n) const;
  /// Same genotypes and horizon on another scenario sample.
  ProblemInstance with_scenarios(std::shared_ptr<const ScenarioSet> set) const;
};

/// Probability of ending at the target after applying `plan` in `scenario`.
double eval_static(const StaticPlan& plan, const AntibioticScenario& scenario, const ProblemInstance& inst);
/// Probability of ending at the target under the genotype-feedback `policy`.
double eval_dynamic(const DynamicPolicy& policy, const AntibioticScenario& scenario, const ProblemInstance& inst);

/// Per-scenario values over `indices` (all scenarios when empty).
std::vector<double> static_values(const StaticPlan& plan, const ProblemInstance& inst, std::span<const int> indices = {});
std::vector<double> dynamic_values(const DynamicPolicy& policy, const ProblemInstance& inst,
                                   std::span<const int> indices = {});

/// Mean of the smallest alpha*n entries. alpha*n must be a positive integer
/// (checked to 1e-9).
double cvar(std::span<const double> values, double alpha);

/// Whether alpha*n may be fractional. With kFractional the boundary order
/// statistic enters with a fractional weight, which is exactly the optimum of
/// the lambda/mu linear program for any alpha in (0,1].
enum class TailPolicy { kInteger, kFractional };

/// Closed-form optimum of max lambda - sum(mu_h)/(alpha n) subject to
/// lambda - mu_h <= v_h, mu_h >= 0. lambda is the value-at-risk order
/// statistic and mu_h = max(0, lambda - v_h).
double cvar_lp(std::span<const double> values, double alpha, TailPolicy policy = TailPolicy::kInteger);

/// Throws unless alpha*n is a positive integer within 1e-9; returns it.
int tail_count(std::size_t n, double alpha);

/// cvar() when alpha*n is integral; otherwise cvar_lp() under kFractional,
/// or an error under kInteger.
double tail_objective(std::span<const double> values, double alpha, TailPolicy policy);

inline constexpr int kHistogramBins = 20;
using Histogram = std::array<int, kHistogramBins>;

/// Width-0.05 bins on [0,1]; the last bin is closed on the right.
Histogram histogram(std::span<const double> values);

struct OutOfSampleReport {
  double cvar = 0.0;
  double mean = 0.0;
  Histogram histogram{};
  std::uint64_t training_seed = 0;
  std::uint64_t fresh_seed = 0;
  std::vector<std::string> warnings;
};

OutOfSampleReport out_of_sample(const StaticPlan& plan, const ScenarioSet& fresh, double alpha,
                                const ProblemInstance& inst);
OutOfSampleReport out_of_sample(const DynamicPolicy& policy, const ScenarioSet& fresh, double alpha,
                                const ProblemInstance& inst);

/// `label,bin_lo,count` rows.
void write_histogram_rows(std::ostream& out, const std::string& label, const Histogram& h);
/// `label,metric,value` rows for cvar and mean.
void write_summary_rows(std::ostream& out, const std::string& label, const OutOfSampleReport& r);

std::string format_choices(std::span<const int> choices, char sep = '-');

}  // namespace atm
