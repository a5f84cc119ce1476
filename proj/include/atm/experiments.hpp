#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atm/decomposition.hpp"
#include "atm/enhancements.hpp"

namespace atm {

/// Bad or inconsistent experiment configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Synthetic growth rates: base[k][i] ~ U(0.1, 2) times a per-replicate
/// factor exp(dispersion * z), z standard normal, or Student-t with 3
/// degrees of freedom when heavy_tail is set.
struct SyntheticSpec {
  int alleles = 3;
  int antibiotics = 3;
  int replicates = 4;
  std::uint64_t seed = 1;
  double dispersion = 0.5;
  bool heavy_tail = false;
};

GrowthRateDataset synth_dataset(const SyntheticSpec& spec);

enum class Mode { kStatic, kDynamic };
enum class Objective { kRiskAverse, kRiskNeutral };
std::string to_string(Mode m);
std::string to_string(Objective o);
Mode mode_from_string(const std::string& s);
Objective objective_from_string(const std::string& s);

struct ExperimentConfig {
  std::optional<std::filesystem::path> dataset;  // growth-rate CSV; synthetic when unset
  SyntheticSpec synthetic;
  Mode mode = Mode::kStatic;
  std::vector<Objective> objectives{Objective::kRiskAverse};
  std::vector<std::string> initial;  // bit strings; empty means every non-wild genotype
  std::vector<int> horizons{4};
  int scenarios = 2000;
  int out_of_sample = 2000;
  std::uint64_t seed = 1;
  std::uint64_t out_of_sample_seed = 2;
  bool identity = true;
  DecompositionConfig decomposition;
  std::vector<int> ablation;  // settings 0..5; static risk-averse only
  std::optional<std::filesystem::path> filter;
  std::optional<std::filesystem::path> cache_dir;
  int jobs = 1;

  /// Defaults: P=40, alpha=0.1, epsilon=0.01, tau=5, gap 1e-3, 7200 s.
  ExperimentConfig();

  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

/// Dataset named by the config (loaded or generated).
GrowthRateDataset config_dataset(const ExperimentConfig& cfg);

struct RunRecord {
  std::string label;
  Mode mode = Mode::kStatic;
  Objective objective = Objective::kRiskAverse;
  std::string genotype;
  int horizon = 0;
  int setting = -1;  // ablation setting, -1 outside the ablation
  std::vector<int> choice;
  double lb = 0.0;
  double ub = 1.0;
  int iterations = 0;
  bool converged = false;
  double in_cvar = 0.0;
  double in_mean = 0.0;
  double out_cvar = 0.0;
  double out_mean = 0.0;
  Histogram out_histogram{};
  double wall_ms = 0.0;
  std::string error;
  std::vector<IterationRecord> history;
};

/// RA-In-10%, RA-Out-Avg, RA-Out-10%, RN-In-Avg, RN-Out-Avg, RN-Out-10%.
struct ComparisonRecord {
  std::string genotype;
  int horizon = 0;
  double ra_in_10 = 0.0;
  double ra_out_avg = 0.0;
  double ra_out_10 = 0.0;
  double rn_in_avg = 0.0;
  double rn_out_avg = 0.0;
  double rn_out_10 = 0.0;
  std::string classification;  // indifferent, good or bad
};

struct ComparisonSummary {
  std::vector<ComparisonRecord> records;
  /// Mean of RA-Out-10% - RN-Out-10%, in percentage points.
  double worst10_gain_pct = 0.0;
  /// Mean of RN-Out-Avg - RA-Out-Avg, in percentage points.
  double average_loss_pct = 0.0;
  int good = 0;
  int bad = 0;
  int indifferent = 0;
  std::vector<std::string> warnings;
};

/// good iff the worst-10% gain exceeds the average loss; indifferent iff
/// both objectives picked the same plan/policy.
std::string classify(const ComparisonRecord& r, bool same_solution);
ComparisonSummary compare_ra_rn(const std::vector<RunRecord>& runs);

void write_results_csv(std::ostream& out, const std::vector<RunRecord>& runs);
/// Reads what write_results_csv wrote (histories and histograms are not part of it).
std::vector<RunRecord> read_results_csv(std::istream& in);
void write_comparison_csv(std::ostream& out, const ComparisonSummary& s);
nlohmann::json comparison_json(const ComparisonSummary& s);

/// Warm-start cache entry key; the file name is derived from all fields.
struct WarmCacheKey {
  std::uint64_t dataset_hash = 0;
  Mode mode = Mode::kStatic;
  std::string genotype;
  int horizon = 0;
  std::uint64_t scenario_seed = 0;
  int scenarios = 0;
  double alpha = 0.1;
  std::string variant;  // e.g. objective and ablation setting
};

std::filesystem::path warm_cache_path(const std::filesystem::path& dir, const WarmCacheKey& key);
void save_warm_cache(const std::filesystem::path& path, const WarmCacheKey& key, const DecompositionResult& r);
/// Empty with `warning` set when the file is missing, corrupt or stale.
std::optional<DecompositionResult> load_warm_cache(const std::filesystem::path& path, const WarmCacheKey& key,
                                                   std::string* warning = nullptr);

struct ExperimentOutcome {
  std::vector<RunRecord> runs;
  ComparisonSummary comparison;
  int failures = 0;
  std::vector<std::string> warnings;
};

/// Runs the sweep and writes results.csv, histograms.csv, summary.csv,
/// comparison.csv, ablation.csv, ablation_time.csv, summary.json,
/// metadata.json and histories/<label>.csv into `out_dir`.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace atm
