#include "atm/enhancements.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace atm {

std::size_t SolutionCluster::cartesian_size() const {
  std::size_t n = 1;
  for (const auto& a : alphabets) {
    if (a.empty()) return 0;
    if (n > std::numeric_limits<std::size_t>::max() / a.size()) return std::numeric_limits<std::size_t>::max();
    n *= a.size();
  }
  return n;
}

SolutionCluster SolutionCluster::from_members(std::vector<StaticPlan> members) {
  if (members.empty()) throw std::invalid_argument("cluster needs at least one member");
  const int N = members.front().horizon();
  SolutionCluster c;
  c.alphabets.assign(static_cast<std::size_t>(N), {});
  for (const auto& m : members) {
    if (m.horizon() != N) throw std::invalid_argument("cluster members have different horizons");
    for (int n = 0; n < N; ++n) c.alphabets[n].push_back(m.choices[n]);
  }
  for (auto& a : c.alphabets) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }
  c.members = std::move(members);
  return c;
}

int default_cluster_count(std::size_t solutions) { return static_cast<int>((solutions + 2) / 3); }

std::vector<SolutionCluster> cluster_solutions(const std::vector<StaticPlan>& solutions, int target_clusters,
                                               int antibiotics, std::uint64_t seed, int max_iterations) {
  if (solutions.empty()) throw std::invalid_argument("no solutions to cluster");
  const int n = static_cast<int>(solutions.size());
  const int N = solutions.front().horizon();
  const int dim = N * antibiotics;
  const int k = std::clamp(target_clusters, 1, n);

  std::vector<std::vector<double>> pts(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(dim)));
  for (int s = 0; s < n; ++s) {
    if (solutions[s].horizon() != N) throw std::invalid_argument("solutions have different horizons");
    for (int p = 0; p < N; ++p) {
      const int a = solutions[s].choices[p];
      if (a < 0 || a >= antibiotics) throw std::out_of_range("antibiotic index out of range in clustering");
      pts[s][static_cast<std::size_t>(p) * antibiotics + a] = 1.0;
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<std::vector<double>> centers;
  for (int c = 0; c < k; ++c) centers.push_back(pts[idx[c]]);

  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (int s = 0; s < n; ++s) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        double dist = 0.0;
        for (int j = 0; j < dim; ++j) {
          const double diff = pts[s][j] - centers[c][j];
          dist += diff * diff;
        }
        if (dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      if (assign[s] != best) {
        assign[s] = best;
        changed = true;
      }
    }
    if (!changed) break;
    for (int c = 0; c < k; ++c) {
      std::vector<double> sum(static_cast<std::size_t>(dim), 0.0);
      int count = 0;
      for (int s = 0; s < n; ++s)
        if (assign[s] == c) {
          for (int j = 0; j < dim; ++j) sum[j] += pts[s][j];
          ++count;
        }
      if (count == 0) continue;  // keep the old center
      for (auto& v : sum) v /= count;
      centers[c] = std::move(sum);
    }
  }

  // Clusters ordered by their first member.
  std::vector<SolutionCluster> out;
  std::vector<int> seen(static_cast<std::size_t>(k), -1);
  std::vector<std::vector<StaticPlan>> groups;
  for (int s = 0; s < n; ++s) {
    int& g = seen[assign[s]];
    if (g < 0) {
      g = static_cast<int>(groups.size());
      groups.emplace_back();
    }
    groups[g].push_back(solutions[s]);
  }
  for (auto& g : groups) out.push_back(SolutionCluster::from_members(std::move(g)));
  return out;
}

std::vector<StaticPlan> cartesian_members(const SolutionCluster& cluster) {
  std::vector<StaticPlan> out;
  const auto& A = cluster.alphabets;
  const std::size_t N = A.size();
  if (cluster.cartesian_size() == 0) return out;
  std::vector<std::size_t> digit(N, 0);
  for (;;) {
    StaticPlan p;
    for (std::size_t n = 0; n < N; ++n) p.choices.push_back(A[n][digit[n]]);
    out.push_back(std::move(p));
    std::size_t n = N;
    while (n > 0 && ++digit[n - 1] == A[n - 1].size()) digit[--n] = 0;
    if (n == 0) break;
  }
  return out;
}

namespace {

Cut product_cut(const std::vector<std::vector<int>>& sets, CutKind kind, double rhs) {
  Cut c;
  c.kind = kind;
  c.space = SelectionSpace::kStatic;
  for (std::size_t n = 0; n < sets.size(); ++n)
    for (int k : sets[n]) c.terms.push_back({static_cast<int>(n), k, 1.0});
  c.rhs = rhs;
  return c;
}

}  // namespace

CartesianResult cartesian_cut(const SolutionCluster& cluster, ObjectiveCache& cache, double lb,
                              const CartesianOptions& opts) {
  CartesianResult r;
  r.lb = lb;
  const std::size_t size = cluster.cartesian_size();
  std::vector<std::vector<int>> members;
  for (const auto& m : cluster.members) members.push_back(m.choices);
  std::sort(members.begin(), members.end());

  if (size > opts.budget + members.size()) {
    r.fell_back = true;
    for (const auto& m : members) r.cuts.push_back(no_good_cut_static(StaticPlan{m}));
    return r;
  }
  std::vector<std::vector<int>> todo;
  for (auto& p : cartesian_members(cluster)) {
    if (std::binary_search(members.begin(), members.end(), p.choices)) continue;
    if (opts.symmetry_identity && !satisfies_symmetry_breaking(p.choices, *opts.symmetry_identity)) continue;
    if (cache.contains(p.choices)) continue;
    todo.push_back(std::move(p.choices));
  }
  std::vector<double> vals(todo.size());
  parallel_for(static_cast<int>(todo.size()), opts.threads, [&](int i) { vals[i] = cache.value(todo[i]); });
  for (std::size_t i = 0; i < todo.size(); ++i) {
    if (vals[i] > r.lb || (vals[i] == r.lb && !r.best.empty() && todo[i] < r.best)) {
      r.lb = vals[i];
      r.best = todo[i];
    }
  }
  r.evaluated = std::move(todo);
  r.cuts.push_back(product_cut(cluster.alphabets, CutKind::kCartesian, static_cast<double>(cluster.alphabets.size()) - 1));
  return r;
}

std::vector<Cut> symmetry_breaking(int horizon, int identity) {
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  std::vector<Cut> out;
  Cut first;
  first.kind = CutKind::kSymmetryBreaking;
  first.terms = {{0, identity, 1.0}};
  first.sense = Sense::kEqual;
  first.rhs = 0.0;
  out.push_back(first);
  for (int n = 0; n + 1 < horizon; ++n) {
    Cut c;
    c.kind = CutKind::kSymmetryBreaking;
    c.terms = {{n, identity, 1.0}, {n + 1, identity, -1.0}};
    c.rhs = 0.0;
    out.push_back(c);
  }
  return out;
}

bool satisfies_symmetry_breaking(std::span<const int> plan, int identity) {
  if (plan.empty()) return true;
  if (plan[0] == identity) return false;
  for (std::size_t n = 0; n + 1 < plan.size(); ++n)
    if (plan[n] == identity && plan[n + 1] != identity) return false;
  return true;
}

SymmetryProfile SymmetryProfile::of(const SolutionCluster& cluster, int identity) {
  SymmetryProfile p;
  for (std::size_t n = 0; n < cluster.alphabets.size(); ++n) {
    const auto& a = cluster.alphabets[n];
    if (!p.n_star && std::binary_search(a.begin(), a.end(), identity)) p.n_star = static_cast<int>(n) + 1;
    if (!p.n_identity && a.size() == 1 && a[0] == identity) p.n_identity = static_cast<int>(n) + 1;
  }
  return p;
}

std::vector<Cut> symmetry_enhanced_cuts(const SolutionCluster& cluster, int identity) {
  const auto prof = SymmetryProfile::of(cluster, identity);
  if (!prof.n_star) return {};
  const int N = static_cast<int>(cluster.alphabets.size());
  const int ns = *prof.n_star;
  auto widened = [&](int p) {  // 1-based position
    auto a = cluster.alphabets[p - 1];
    if (p >= 2 && p <= ns - 2 && !std::binary_search(a.begin(), a.end(), identity)) {
      a.push_back(identity);
      std::sort(a.begin(), a.end());
    }
    return a;
  };
  auto pinned = [&](int nbar) {
    std::vector<std::vector<int>> sets;
    for (int p = 1; p < nbar; ++p) sets.push_back(widened(p));
    sets.push_back({identity});
    return product_cut(sets, CutKind::kSymmetryEnhanced, nbar - 1);
  };
  std::vector<Cut> out;
  if (prof.n_identity) {
    for (int nbar = ns; nbar <= *prof.n_identity; ++nbar) out.push_back(pinned(nbar));
  } else {
    for (int nbar = ns; nbar <= N - 1; ++nbar) out.push_back(pinned(nbar));
    std::vector<std::vector<int>> sets;
    for (int p = 1; p <= N; ++p) sets.push_back(widened(p));
    out.push_back(product_cut(sets, CutKind::kSymmetryEnhanced, N - 1));
  }
  return out;
}

std::vector<Genotype> irrelevant_genotypes(const Genotype& initial, int horizon) {
  std::vector<Genotype> out;
  const int a = initial.alleles();
  for (std::uint32_t i = 0; i < (1u << a); ++i) {
    Genotype g(a, i);
    if (hamming_distance(initial, g) + g.weight() > horizon) out.push_back(g);
  }
  return out;
}

WarmStart warm_start(const DecompositionResult& prev, int prev_horizon, const ProblemInstance& next, double alpha,
                     SelectionSpace space) {
  if (next.horizon != prev_horizon + 1)
    throw std::invalid_argument("warm start needs horizon " + std::to_string(prev_horizon + 1) + ", got " +
                                std::to_string(next.horizon));
  WarmStart w;
  ObjectiveCache cache(next, alpha, space);
  if (space == SelectionSpace::kStatic) {
    const auto identity = next.scenarios->identity;
    if (!identity) throw std::invalid_argument("static warm start needs the identity antibiotic");
    for (const auto& [plan, v] : prev.evaluated) {
      if (static_cast<int>(plan.size()) != prev_horizon)
        throw std::invalid_argument("recorded plan length does not match the previous horizon");
      auto ext = plan;
      ext.push_back(*identity);
      w.evaluated[ext] = cache.value(ext);
    }
    for (const auto& c : prev.cuts) {
      if (c.kind == CutKind::kSymmetryBreaking) continue;
      Cut e = c;
      if (c.max_slot() == prev_horizon - 1) {
        e.terms.push_back({prev_horizon, *identity, 1.0});
        e.rhs += 1.0;
      }
      w.cuts.push_back(std::move(e));
    }
  } else {
    for (const auto& [policy, v] : prev.evaluated) {
      w.evaluated[policy] = cache.value(policy);
      Cut c = no_good_cut_dynamic(DynamicPolicy{policy});
      w.cuts.push_back(std::move(c));
    }
  }
  return w;
}

std::string to_string(FilterMode m) {
  switch (m) {
    case FilterMode::kStaticFilterI: return "static-filter-I";
    case FilterMode::kStaticFilterII: return "static-filter-II";
    case FilterMode::kDynamicPerGenotype: return "dynamic-per-genotype";
  }
  return "unknown";
}

FilterMode filter_mode_from_string(const std::string& s) {
  if (s == "static-filter-I") return FilterMode::kStaticFilterI;
  if (s == "static-filter-II") return FilterMode::kStaticFilterII;
  if (s == "dynamic-per-genotype") return FilterMode::kDynamicPerGenotype;
  throw std::invalid_argument("unknown filter mode '" + s + "'");
}

SlotDomains FilterSpec::domains(int initial, int horizon) const {
  switch (mode) {
    case FilterMode::kStaticFilterI:
      return SlotDomains(static_cast<std::size_t>(horizon), global);
    case FilterMode::kStaticFilterII: {
      auto it = per_initial.find(initial);
      if (it == per_initial.end())
        throw std::invalid_argument("Filter II has no entry for genotype index " + std::to_string(initial));
      return SlotDomains(static_cast<std::size_t>(horizon), it->second);
    }
    case FilterMode::kDynamicPerGenotype:
      return per_genotype;
  }
  return {};
}

std::string FilterSpec::to_json() const {
  nlohmann::json j;
  j["format"] = "atm-filter/1";
  j["mode"] = to_string(mode);
  j["antibiotics"] = antibiotics;
  j["identity"] = identity;
  j["global"] = global;
  nlohmann::json pi = nlohmann::json::object();
  for (const auto& [g, s] : per_initial) pi[std::to_string(g)] = s;
  j["per_initial"] = pi;
  j["per_genotype"] = per_genotype;
  return j.dump(2);
}

FilterSpec FilterSpec::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.value("format", "") != "atm-filter/1") throw std::runtime_error("not an atm-filter/1 document");
  FilterSpec f;
  f.mode = filter_mode_from_string(j.at("mode").get<std::string>());
  f.antibiotics = j.at("antibiotics").get<int>();
  f.identity = j.at("identity").get<int>();
  f.global = j.at("global").get<std::vector<int>>();
  for (const auto& [k, v] : j.at("per_initial").items()) f.per_initial[std::stoi(k)] = v.get<std::vector<int>>();
  f.per_genotype = j.at("per_genotype").get<std::vector<std::vector<int>>>();
  return f;
}

FilterSpec build_filter(FilterMode mode, const std::vector<PriorSolution>& priors, const std::vector<int>& initials,
                        int antibiotics, int identity, int alleles, std::vector<int> horizons) {
  if (identity < 0 || identity >= antibiotics) throw std::invalid_argument("identity index out of range");
  if (horizons.empty()) horizons = mode == FilterMode::kStaticFilterII ? std::vector<int>{4, 5, 6} : std::vector<int>{4};
  const auto space = mode == FilterMode::kDynamicPerGenotype ? SelectionSpace::kDynamic : SelectionSpace::kStatic;

  std::vector<std::string> missing;
  std::map<int, std::vector<const PriorSolution*>> found;
  for (int g : initials)
    for (int n : horizons) {
      const PriorSolution* hit = nullptr;
      for (const auto& p : priors)
        if (p.space == space && p.initial == g && p.horizon == n) hit = &p;
      if (hit) {
        found[g].push_back(hit);
      } else {
        missing.push_back(std::string(space == SelectionSpace::kStatic ? "static" : "dynamic") + " N=" +
                          std::to_string(n) + " from " + Genotype(alleles, static_cast<std::uint32_t>(g)).to_string());
      }
    }
  if (!missing.empty()) {
    std::string msg = "filter " + to_string(mode) + " needs prior solutions; run first:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw std::runtime_error(msg);
  }

  auto close = [&](std::vector<int> s) {
    s.push_back(identity);
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
  };

  FilterSpec f;
  f.mode = mode;
  f.antibiotics = antibiotics;
  f.identity = identity;
  if (mode == FilterMode::kStaticFilterI) {
    std::vector<int> u;
    for (const auto& [g, ps] : found)
      for (const auto* p : ps) u.insert(u.end(), p->choice.begin(), p->choice.end());
    f.global = close(std::move(u));
  } else if (mode == FilterMode::kStaticFilterII) {
    for (const auto& [g, ps] : found) {
      std::vector<int> u;
      for (const auto* p : ps) u.insert(u.end(), p->choice.begin(), p->choice.end());
      f.per_initial[g] = close(std::move(u));
    }
  } else {
    const int d = 1 << alleles;
    f.per_genotype.assign(static_cast<std::size_t>(d), {});
    for (int i = 0; i < d - 1; ++i) {
      std::vector<int> u;
      for (const auto& [g, ps] : found)
        for (const auto* p : ps) {
          if (static_cast<int>(p->choice.size()) != d)
            throw std::invalid_argument("dynamic prior policy does not cover every genotype");
          u.push_back(p->choice[i]);
        }
      f.per_genotype[i] = close(std::move(u));
    }
    // The all-ones genotype stays unrestricted.
  }
  for (const auto& s : f.global)
    if (s < 0 || s >= antibiotics) throw std::invalid_argument("prior solution uses an unknown antibiotic");
  return f;
}

}  // namespace atm
