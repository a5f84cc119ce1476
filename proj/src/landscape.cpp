#include "atm/landscape.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace atm {

namespace {

constexpr double kRowTolerance = 1e-12;

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

Genotype::Genotype(int alleles, std::uint32_t index) : alleles_(alleles), index_(index) {
  if (alleles < 0 || alleles > 16) throw std::invalid_argument("allele count must be in [0, 16]");
  if (index >= (1u << alleles)) throw std::invalid_argument("genotype index out of range");
}

Genotype Genotype::from_string(std::string_view bits) {
  if (bits.empty() || bits.size() > 16) throw std::invalid_argument("genotype string must have 1..16 alleles");
  std::uint32_t index = 0;
  for (char c : bits) {
    if (c != '0' && c != '1') throw std::invalid_argument("genotype string must be binary: '" + std::string(bits) + "'");
    index = (index << 1) | static_cast<std::uint32_t>(c - '0');
  }
  return Genotype(static_cast<int>(bits.size()), index);
}

Genotype Genotype::from_id(int alleles, int id) {
  if (id < 1 || id > (1 << alleles)) throw std::invalid_argument("genotype id out of range");
  return Genotype(alleles, static_cast<std::uint32_t>(id - 1));
}

int Genotype::allele(int l) const {
  if (l < 0 || l >= alleles_) throw std::out_of_range("allele index");
  return static_cast<int>((index_ >> (alleles_ - 1 - l)) & 1u);
}

int Genotype::weight() const noexcept { return std::popcount(index_); }

std::string Genotype::to_string() const {
  std::string s(static_cast<std::size_t>(alleles_), '0');
  for (int l = 0; l < alleles_; ++l) s[l] = allele(l) ? '1' : '0';
  return s;
}

int hamming_distance(const Genotype& a, const Genotype& b) {
  if (a.alleles() != b.alleles()) throw std::invalid_argument("genotypes of different length");
  return std::popcount(a.index() ^ b.index());
}

std::vector<Genotype> neighbors(const Genotype& g) {
  std::vector<Genotype> out;
  out.reserve(static_cast<std::size_t>(g.alleles()));
  for (int bit = 0; bit < g.alleles(); ++bit) out.emplace_back(g.alleles(), g.index() ^ (1u << bit));
  std::sort(out.begin(), out.end(), [](const Genotype& x, const Genotype& y) { return x.index() < y.index(); });
  return out;
}

TransitionMatrix TransitionMatrix::from_entries(int dimension, std::vector<double> entries) {
  if (dimension <= 0 || !is_power_of_two(static_cast<std::size_t>(dimension)))
    throw std::invalid_argument("matrix dimension must be a power of two");
  if (entries.size() != static_cast<std::size_t>(dimension) * dimension)
    throw std::invalid_argument("matrix entry count does not match dimension");
  for (int i = 0; i < dimension; ++i) {
    double sum = 0.0;
    for (int j = 0; j < dimension; ++j) {
      double p = entries[static_cast<std::size_t>(i) * dimension + j];
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("matrix entry outside [0,1]");
      if (i != j && std::popcount(static_cast<unsigned>(i ^ j)) > 1 && p != 0.0)
        throw std::invalid_argument("transition between non-neighbor genotypes");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kRowTolerance)
      throw std::invalid_argument("row " + std::to_string(i) + " does not sum to 1");
  }
  return TransitionMatrix(dimension, std::move(entries));
}

TransitionMatrix TransitionMatrix::identity(int dimension) {
  std::vector<double> e(static_cast<std::size_t>(dimension) * dimension, 0.0);
  for (int i = 0; i < dimension; ++i) e[static_cast<std::size_t>(i) * dimension + i] = 1.0;
  return from_entries(dimension, std::move(e));
}

TransitionMatrix build_transition_matrix(std::span<const double> omega) {
  const std::size_t d = omega.size();
  if (!is_power_of_two(d)) throw std::invalid_argument("growth-rate vector length must be 2^a");
  for (double w : omega)
    if (!(w >= 0.0)) throw std::invalid_argument("growth rates must be nonnegative");
  const int dim = static_cast<int>(d);
  const int alleles = std::countr_zero(d);
  std::vector<double> e(d * d, 0.0);
  for (int j = 0; j < dim; ++j) {
    double total = 0.0;
    for (int bit = 0; bit < alleles; ++bit) total += std::max(0.0, omega[j ^ (1 << bit)] - omega[j]);
    if (total <= 0.0) {
      e[static_cast<std::size_t>(j) * d + j] = 1.0;
      continue;
    }
    for (int bit = 0; bit < alleles; ++bit) {
      int nb = j ^ (1 << bit);
      e[static_cast<std::size_t>(j) * d + nb] = std::max(0.0, omega[nb] - omega[j]) / total;
    }
  }
  return TransitionMatrix::from_entries(dim, std::move(e));
}

GrowthRateDataset::GrowthRateDataset(int alleles, std::vector<std::string> labels, int replicates,
                                     std::vector<double> rates)
    : alleles_(alleles), replicates_(replicates), labels_(std::move(labels)), rates_(std::move(rates)) {
  if (alleles < 1 || alleles > 16) throw std::invalid_argument("allele count must be in [1, 16]");
  if (labels_.empty()) throw std::invalid_argument("dataset has no antibiotics");
  if (replicates < 1) throw std::invalid_argument("dataset needs at least one replicate");
  if (rates_.size() != labels_.size() * static_cast<std::size_t>(genotypes()) * replicates)
    throw std::invalid_argument("rate count does not match K * 2^a * R");
  for (double r : rates_)
    if (!(r >= 0.0)) throw std::invalid_argument("growth rates must be nonnegative");
}

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t state) {
  for (unsigned char b : bytes) {
    state ^= b;
    state *= 1099511628211ull;
  }
  return state;
}

std::uint64_t GrowthRateDataset::content_hash() const {
  auto mix = [](std::uint64_t h, const void* p, std::size_t n) {
    return fnv1a({static_cast<const unsigned char*>(p), n}, h);
  };
  std::uint64_t h = 14695981039346656037ull;
  std::int32_t shape[3] = {alleles_, replicates_, antibiotics()};
  h = mix(h, shape, sizeof shape);
  for (const auto& l : labels_) {
    h = mix(h, l.data(), l.size());
    h = mix(h, "\0", 1);
  }
  for (double r : rates_) {
    auto bits = std::bit_cast<std::uint64_t>(r);
    h = mix(h, &bits, sizeof bits);
  }
  return h;
}

void GrowthRateDataset::write_csv(std::ostream& out) const {
  out << "antibiotic,genotype,replicate,rate\n";
  char buf[64];
  for (int k = 0; k < antibiotics(); ++k)
    for (int i = 0; i < genotypes(); ++i)
      for (int r = 0; r < replicates_; ++r) {
        std::snprintf(buf, sizeof buf, "%.17g", rate(k, i, r));
        out << labels_[k] << ',' << Genotype(alleles_, static_cast<std::uint32_t>(i)).to_string() << ',' << r + 1
            << ',' << buf << '\n';
      }
}

GrowthRateDataset parse_growth_rates(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(1, "empty growth-rate file");
  ++lineno;
  if (trim(line) != "antibiotic,genotype,replicate,rate")
    throw ParseError(lineno, "expected header 'antibiotic,genotype,replicate,rate'");

  struct Cell {
    std::map<int, double> reps;
    std::size_t first_line = 0;
  };
  std::vector<std::string> labels;
  std::map<std::string, int> label_index;
  std::map<std::pair<int, int>, Cell> cells;
  int alleles = -1;
  int max_rep = 0;

  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(trim(f));
    if (fields.size() != 4) throw ParseError(lineno, "expected 4 fields, got " + std::to_string(fields.size()));
    const auto& label = fields[0];
    if (label.empty()) throw ParseError(lineno, "empty antibiotic label");
    Genotype g;
    try {
      g = Genotype::from_string(fields[1]);
    } catch (const std::invalid_argument& e) {
      throw ParseError(lineno, std::string("malformed genotype: ") + e.what());
    }
    if (alleles < 0) alleles = g.alleles();
    if (g.alleles() != alleles)
      throw ParseError(lineno, "genotype '" + fields[1] + "' has length " + std::to_string(g.alleles()) +
                                   ", expected " + std::to_string(alleles));
    int rep = 0;
    double rate = 0.0;
    try {
      std::size_t used = 0;
      rep = std::stoi(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(lineno, "replicate must be an integer: '" + fields[2] + "'");
    }
    if (rep < 1) throw ParseError(lineno, "replicate index must be >= 1");
    try {
      std::size_t used = 0;
      rate = std::stod(fields[3], &used);
      if (used != fields[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(lineno, "rate must be a decimal number: '" + fields[3] + "'");
    }
    if (!(rate >= 0.0) || !std::isfinite(rate)) throw ParseError(lineno, "negative or non-finite growth rate");

    auto [it, inserted] = label_index.try_emplace(label, static_cast<int>(labels.size()));
    if (inserted) labels.push_back(label);
    auto& cell = cells[{it->second, static_cast<int>(g.index())}];
    if (cell.first_line == 0) cell.first_line = lineno;
    if (!cell.reps.emplace(rep, rate).second)
      throw ParseError(lineno, "duplicate record for (" + label + ", " + fields[1] + ", " + fields[2] + ")");
    max_rep = std::max(max_rep, rep);
  }
  if (labels.empty()) throw ParseError(lineno, "no growth-rate records");

  const int d = 1 << alleles;
  const int K = static_cast<int>(labels.size());
  std::vector<double> rates(static_cast<std::size_t>(K) * d * max_rep);
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < d; ++i) {
      auto it = cells.find({k, i});
      const std::string where = labels[k] + ", " + Genotype(alleles, static_cast<std::uint32_t>(i)).to_string();
      if (it == cells.end()) throw ParseError(lineno, "no measurements for (" + where + ")");
      for (int r = 1; r <= max_rep; ++r) {
        auto rr = it->second.reps.find(r);
        if (rr == it->second.reps.end())
          throw ParseError(it->second.first_line,
                           "missing replicate " + std::to_string(r) + " of " + std::to_string(max_rep) + " for (" +
                               where + ")");
        rates[(static_cast<std::size_t>(k) * d + i) * max_rep + (r - 1)] = rr->second;
      }
    }
  return GrowthRateDataset(alleles, std::move(labels), max_rep, std::move(rates));
}

GrowthRateDataset load_growth_rates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open growth-rate file " + path.string());
  return parse_growth_rates(in);
}

namespace {

AntibioticScenario build_scenario(const GrowthRateDataset& data, std::span<const std::uint16_t> draw,
                                  bool include_identity) {
  const int d = data.genotypes();
  AntibioticScenario s;
  s.matrices.reserve(static_cast<std::size_t>(data.antibiotics()) + include_identity);
  std::vector<double> omega(static_cast<std::size_t>(d));
  for (int k = 0; k < data.antibiotics(); ++k) {
    for (int i = 0; i < d; ++i) omega[i] = data.rate(k, i, draw[static_cast<std::size_t>(k) * d + i]);
    s.matrices.push_back(build_transition_matrix(omega));
  }
  if (include_identity) s.matrices.push_back(TransitionMatrix::identity(d));
  return s;
}

ScenarioSet empty_set(const GrowthRateDataset& data, std::uint64_t seed, bool include_identity) {
  ScenarioSet set;
  set.alleles = data.alleles();
  set.labels = data.labels();
  if (include_identity) {
    set.identity = static_cast<int>(set.labels.size());
    set.labels.emplace_back(kIdentityLabel);
  }
  set.seed = seed;
  set.dataset_hash = data.content_hash();
  return set;
}

}  // namespace

ScenarioSet sample_scenarios(const GrowthRateDataset& data, int count, std::uint64_t seed, bool include_identity) {
  if (count < 1) throw std::invalid_argument("scenario count must be >= 1");
  if (data.antibiotics() == 0) throw std::invalid_argument("empty dataset");
  const std::size_t cells = static_cast<std::size_t>(data.antibiotics()) * data.genotypes();
  std::vector<std::vector<std::uint16_t>> draws(static_cast<std::size_t>(count), std::vector<std::uint16_t>(cells));
  for (int h = 0; h < count; ++h) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h)};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<int> pick(0, data.replicates() - 1);
    for (auto& c : draws[h]) c = static_cast<std::uint16_t>(pick(rng));
  }
  return scenarios_from_draws(data, std::move(draws), seed, include_identity);
}

ScenarioSet scenarios_from_draws(const GrowthRateDataset& data, std::vector<std::vector<std::uint16_t>> draws,
                                 std::uint64_t seed, bool include_identity) {
  ScenarioSet set = empty_set(data, seed, include_identity);
  const std::size_t cells = static_cast<std::size_t>(data.antibiotics()) * data.genotypes();
  set.scenarios.reserve(draws.size());
  for (const auto& d : draws) {
    if (d.size() != cells) throw std::invalid_argument("replicate draw has wrong size");
    for (auto r : d)
      if (r >= data.replicates()) throw std::invalid_argument("replicate draw out of range");
    set.scenarios.push_back(build_scenario(data, d, include_identity));
  }
  set.draws = std::move(draws);
  return set;
}

void save_scenario_cache(const ScenarioSet& set, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "atm-scenarios/1";
  j["dataset_hash"] = set.dataset_hash;
  j["seed"] = set.seed;
  j["count"] = set.size();
  j["include_identity"] = set.identity.has_value();
  j["draws"] = set.draws;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scenario cache " + path.string());
  out << j.dump() << '\n';
}

ScenarioSet load_scenario_cache(const GrowthRateDataset& data, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario cache " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt scenario cache: " + std::string(e.what()));
  }
  if (j.value("format", "") != "atm-scenarios/1") throw std::runtime_error("unknown scenario cache format");
  if (j.at("dataset_hash").get<std::uint64_t>() != data.content_hash())
    throw std::runtime_error("scenario cache was built from a different dataset");
  auto draws = j.at("draws").get<std::vector<std::vector<std::uint16_t>>>();
  if (static_cast<int>(draws.size()) != j.at("count").get<int>()) throw std::runtime_error("scenario count mismatch");
  return scenarios_from_draws(data, std::move(draws), j.at("seed").get<std::uint64_t>(),
                              j.at("include_identity").get<bool>());
}

}  // namespace atm
