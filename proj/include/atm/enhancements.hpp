#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "atm/decomposition.hpp"

namespace atm {

/// A group of similar static plans and its per-position alphabets A[n].
struct SolutionCluster {
  std::vector<StaticPlan> members;
  std::vector<std::vector<int>> alphabets;

  /// |A[0]| * ... * |A[N-1]|, saturating.
  std::size_t cartesian_size() const;
  static SolutionCluster from_members(std::vector<StaticPlan> members);
};

/// K-means (Lloyd) on one-hot N*K encodings, Euclidean distance. Centers
/// start at distinct members drawn with `seed`; at most `max_iterations`
/// sweeps. `target_clusters` is clamped to [1, |solutions|].
std::vector<SolutionCluster> cluster_solutions(const std::vector<StaticPlan>& solutions, int target_clusters,
                                               int antibiotics, std::uint64_t seed = 0, int max_iterations = 100);

/// Default cluster count: ceil(n / 3).
int default_cluster_count(std::size_t solutions);

/// Every plan of the cluster's Cartesian product, in lexicographic order.
std::vector<StaticPlan> cartesian_members(const SolutionCluster& cluster);

struct CartesianOptions {
  std::size_t budget = 10'000;
  /// When set, only plans satisfying the symmetry-breaking rows for this
  /// identity index are scored.
  std::optional<int> symmetry_identity;
  int threads = 1;
};

struct CartesianResult {
  std::vector<Cut> cuts;  // one Cartesian cut, or member no-goods on fallback
  double lb = 0.0;
  std::vector<int> best;  // plan achieving lb among the newly scored ones, if it improved
  std::vector<std::vector<int>> evaluated;
  bool fell_back = false;
};

/// Scores K_c \ T_c on the full sample and returns the cut removing K_c.
CartesianResult cartesian_cut(const SolutionCluster& cluster, ObjectiveCache& cache, double lb,
                              const CartesianOptions& opts = {});

/// x[0,I] = 0 and x[n,I] - x[n+1,I] <= 0 for n < N-1.
std::vector<Cut> symmetry_breaking(int horizon, int identity);
bool satisfies_symmetry_breaking(std::span<const int> plan, int identity);

/// First position with I in the alphabet, and first position whose alphabet
/// is exactly {I}. Both 1-based, as positions are written in the cut family.
struct SymmetryProfile {
  std::optional<int> n_star;
  std::optional<int> n_identity;
  static SymmetryProfile of(const SolutionCluster& cluster, int identity);
};

/// Strengthened Cartesian cuts valid under the symmetry-breaking rows.
/// Empty when the cluster never uses the identity (use the plain cut then).
std::vector<Cut> symmetry_enhanced_cuts(const SolutionCluster& cluster, int identity);

/// Genotypes g with |i_I - g|_1 + |g|_1 > N: a walk from i_I through g to the
/// wild type needs more than N flips.
std::vector<Genotype> irrelevant_genotypes(const Genotype& initial, int horizon);

/// Static: recorded plans of the horizon-N run extended by I and scored on
/// `next`; full-length cuts gain the term x[N,I] so they keep removing only
/// scored plans, shorter ones carry over. Dynamic: recorded policies are
/// scored on `next` and each gets a no-good cut.
WarmStart warm_start(const DecompositionResult& prev, int prev_horizon, const ProblemInstance& next, double alpha,
                     SelectionSpace space);

enum class FilterMode { kStaticFilterI, kStaticFilterII, kDynamicPerGenotype };
std::string to_string(FilterMode m);
FilterMode filter_mode_from_string(const std::string& s);

/// Optimal choice from an earlier run, used to build filters.
struct PriorSolution {
  SelectionSpace space = SelectionSpace::kStatic;
  int initial = 0;  // genotype index
  int horizon = 0;
  std::vector<int> choice;
};

struct FilterSpec {
  FilterMode mode = FilterMode::kStaticFilterI;
  int antibiotics = 0;
  int identity = 0;
  std::vector<int> global;                       // Filter I
  std::map<int, std::vector<int>> per_initial;   // Filter II, keyed by initial genotype index
  std::vector<std::vector<int>> per_genotype;    // dynamic K_i (empty list = unrestricted)

  /// Slot domains for a run from `initial` at `horizon`.
  SlotDomains domains(int initial, int horizon) const;
  std::string to_json() const;
  static FilterSpec from_json(const std::string& text);
};

/// `initials` are the genotype indices the filter must cover; `horizons`
/// defaults to {4} (Filter I, dynamic) or {4,5,6} (Filter II). Throws a
/// message listing every missing (genotype, N) prior.
FilterSpec build_filter(FilterMode mode, const std::vector<PriorSolution>& priors, const std::vector<int>& initials,
                        int antibiotics, int identity, int alleles, std::vector<int> horizons = {});

}  // namespace atm
