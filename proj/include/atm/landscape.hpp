#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace atm {

/// Raised by the growth-rate reader; `line()` is the 1-based input line.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A vertex of the allele hypercube {0,1}^a.
///
/// The string form lists allele 1 first; allele 1 is the most significant bit
/// of `index()`. The 1-based ID used in data files is `index() + 1`, so the
/// wild type (all zeros) is index 0 / ID 1.
class Genotype {
 public:
  Genotype() = default;
  Genotype(int alleles, std::uint32_t index);

  static Genotype from_string(std::string_view bits);
  static Genotype from_id(int alleles, int id);
  static Genotype wild_type(int alleles) { return Genotype(alleles, 0); }

  int alleles() const noexcept { return alleles_; }
  std::uint32_t index() const noexcept { return index_; }
  int id() const noexcept { return static_cast<int>(index_) + 1; }
  /// Value of allele `l` (0-based, allele 0 is the leftmost character).
  int allele(int l) const;
  int weight() const noexcept;
  std::string to_string() const;

  friend bool operator==(const Genotype&, const Genotype&) = default;
  friend auto operator<=>(const Genotype&, const Genotype&) = default;

 private:
  int alleles_ = 0;
  std::uint32_t index_ = 0;
};

int hamming_distance(const Genotype& a, const Genotype& b);

/// The `a` genotypes one allele flip away from `g`, ascending by ID.
std::vector<Genotype> neighbors(const Genotype& g);

/// Dense d x d row-stochastic matrix obeying the single-flip (SSWM) pattern.
class TransitionMatrix {
 public:
  TransitionMatrix() = default;

  /// Validates row sums, [0,1] range and the single-flip zero pattern.
  static TransitionMatrix from_entries(int dimension, std::vector<double> entries);
  static TransitionMatrix identity(int dimension);

  int dimension() const noexcept { return dimension_; }
  double operator()(int from, int to) const { return entries_[static_cast<std::size_t>(from) * dimension_ + to]; }
  std::span<const double> row(int from) const {
    return {entries_.data() + static_cast<std::size_t>(from) * dimension_, static_cast<std::size_t>(dimension_)};
  }
  std::span<const double> entries() const noexcept { return entries_; }

  friend bool operator==(const TransitionMatrix&, const TransitionMatrix&) = default;

 private:
  TransitionMatrix(int dimension, std::vector<double> entries)
      : dimension_(dimension), entries_(std::move(entries)) {}

  int dimension_ = 0;
  std::vector<double> entries_;
};

/// Correlated probability model: mass moves to strictly fitter neighbors in
/// proportion to the growth-rate gain. A local peak keeps a unit self-loop.
TransitionMatrix build_transition_matrix(std::span<const double> growth_rates);

/// Replicated growth-rate measurements: `rate(k, i, r)` for antibiotic k,
/// genotype index i and replicate r (all 0-based).
class GrowthRateDataset {
 public:
  GrowthRateDataset() = default;
  /// `rates` is laid out [k][i][r]; throws if any value is negative or the size is off.
  GrowthRateDataset(int alleles, std::vector<std::string> labels, int replicates, std::vector<double> rates);

  int alleles() const noexcept { return alleles_; }
  int genotypes() const noexcept { return 1 << alleles_; }
  int antibiotics() const noexcept { return static_cast<int>(labels_.size()); }
  int replicates() const noexcept { return replicates_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  double rate(int k, int i, int r) const {
    return rates_[(static_cast<std::size_t>(k) * genotypes() + i) * replicates_ + r];
  }
  std::span<const double> raw() const noexcept { return rates_; }

  /// FNV-1a over labels, shape and the bit patterns of every rate.
  std::uint64_t content_hash() const;

  void write_csv(std::ostream& out) const;

 private:
  int alleles_ = 0;
  int replicates_ = 0;
  std::vector<std::string> labels_;
  std::vector<double> rates_;
};

GrowthRateDataset load_growth_rates(const std::filesystem::path& path);
GrowthRateDataset parse_growth_rates(std::istream& in);

/// One realization of every antibiotic's transition matrix.
struct AntibioticScenario {
  std::vector<TransitionMatrix> matrices;
};

/// SAA sample of scenarios. `draws[h]` holds the replicate index chosen for
/// every (antibiotic, genotype) cell of scenario h, laid out [k][i].
struct ScenarioSet {
  int alleles = 0;
  std::vector<std::string> labels;  // includes the identity label when present
  std::optional<int> identity;      // index of the "no in-take" antibiotic
  std::uint64_t seed = 0;
  std::uint64_t dataset_hash = 0;
  std::vector<std::vector<std::uint16_t>> draws;
  std::vector<AntibioticScenario> scenarios;

  int genotypes() const noexcept { return 1 << alleles; }
  int antibiotics() const noexcept { return static_cast<int>(labels.size()); }
  int size() const noexcept { return static_cast<int>(scenarios.size()); }
};

inline constexpr std::string_view kIdentityLabel = "I";

/// Scenario h uses its own generator seeded from (seed, h), so any index
/// range can be rebuilt independently.
ScenarioSet sample_scenarios(const GrowthRateDataset& data, int count, std::uint64_t seed, bool include_identity);

/// Rebuilds matrices from recorded replicate draws.
ScenarioSet scenarios_from_draws(const GrowthRateDataset& data, std::vector<std::vector<std::uint16_t>> draws,
                                 std::uint64_t seed, bool include_identity);

/// Scenario cache: JSON holding the dataset hash, seed and replicate draws.
void save_scenario_cache(const ScenarioSet& set, const std::filesystem::path& path);
/// Throws if the cache was produced from a different dataset.
ScenarioSet load_scenario_cache(const GrowthRateDataset& data, const std::filesystem::path& path);

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t state = 14695981039346656037ull);

}  // namespace atm
