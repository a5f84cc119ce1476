#include "atm/milp.hpp"

#include <algorithm>
#include <cctype>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <unistd.h>

#ifndef ATM_HIGHS_WRAPPER
#define ATM_HIGHS_WRAPPER "highs_milp.py"
#endif

namespace atm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string to_string(CutKind kind) {
  switch (kind) {
    case CutKind::kNoGoodStatic: return "no-good-static";
    case CutKind::kNoGoodDynamic: return "no-good-dynamic";
    case CutKind::kCartesian: return "cartesian";
    case CutKind::kSymmetryEnhanced: return "symmetry-enhanced";
    case CutKind::kSymmetryBreaking: return "symmetry-breaking";
  }
  return "unknown";
}

double Cut::lhs(std::span<const int> choice) const {
  double s = 0.0;
  for (const auto& t : terms)
    if (t.slot < static_cast<int>(choice.size()) && choice[static_cast<std::size_t>(t.slot)] == t.antibiotic)
      s += t.coef;
  return s;
}

bool Cut::satisfied_by(std::span<const int> choice) const {
  const double l = lhs(choice);
  switch (sense) {
    case Sense::kLessEqual: return l <= rhs + 1e-9;
    case Sense::kGreaterEqual: return l >= rhs - 1e-9;
    case Sense::kEqual: return std::abs(l - rhs) <= 1e-9;
  }
  return false;
}

int Cut::max_slot() const {
  int m = -1;
  for (const auto& t : terms) m = std::max(m, t.slot);
  return m;
}

std::vector<int> allowed_antibiotics(const SlotDomains& domains, int slot, int antibiotics) {
  std::vector<int> out;
  if (slot < static_cast<int>(domains.size()) && !domains[static_cast<std::size_t>(slot)].empty()) {
    for (int k : domains[static_cast<std::size_t>(slot)]) {
      if (k < 0 || k >= antibiotics) throw std::invalid_argument("domain names antibiotic " + std::to_string(k));
      out.push_back(k);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
  } else {
    out.resize(static_cast<std::size_t>(antibiotics));
    for (int k = 0; k < antibiotics; ++k) out[k] = k;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model container
// ---------------------------------------------------------------------------

int MilpModel::add_variable(std::string tag, VarKind kind, double lower, double upper) {
  if (lower > upper) throw std::invalid_argument("variable " + tag + " has empty bounds");
  const int id = static_cast<int>(variables_.size());
  if (!index_.emplace(tag, id).second) throw std::invalid_argument("duplicate variable tag " + tag);
  variables_.push_back({std::move(tag), kind, lower, upper});
  return id;
}

void MilpModel::add_constraint(std::string name, std::vector<LinearTerm> terms, Sense sense, double rhs) {
  for (const auto& t : terms)
    if (t.var < 0 || t.var >= static_cast<int>(variables_.size()))
      throw std::invalid_argument("constraint " + name + " references an undeclared variable");
  constraints_.push_back({std::move(name), std::move(terms), sense, rhs});
}

std::optional<int> MilpModel::find(const std::string& tag) const {
  auto it = index_.find(tag);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int MilpModel::at(const std::string& tag) const {
  auto v = find(tag);
  if (!v) throw std::invalid_argument("unknown variable tag " + tag);
  return *v;
}

std::size_t MilpModel::binary_count() const {
  return static_cast<std::size_t>(
      std::count_if(variables_.begin(), variables_.end(), [](const Variable& v) { return v.kind == VarKind::kBinary; }));
}

std::string MilpModel::selection_tag(SelectionSpace space, int slot, int antibiotic) {
  if (space == SelectionSpace::kStatic) return "x_" + std::to_string(slot) + "_" + std::to_string(antibiotic);
  return "y_" + std::to_string(antibiotic) + "_" + std::to_string(slot);
}

double MilpModel::objective_value(std::span<const double> values) const {
  double s = 0.0;
  for (const auto& t : objective_) s += t.coef * values[static_cast<std::size_t>(t.var)];
  return s;
}

double MilpModel::max_violation(std::span<const double> values) const {
  double worst = 0.0;
  for (std::size_t j = 0; j < variables_.size(); ++j) {
    worst = std::max(worst, variables_[j].lower - values[j]);
    worst = std::max(worst, values[j] - variables_[j].upper);
  }
  for (const auto& c : constraints_) {
    double l = 0.0;
    for (const auto& t : c.terms) l += t.coef * values[static_cast<std::size_t>(t.var)];
    if (c.sense != Sense::kGreaterEqual) worst = std::max(worst, l - c.rhs);
    if (c.sense != Sense::kLessEqual) worst = std::max(worst, c.rhs - l);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

namespace {

std::string tag(std::initializer_list<std::string_view> parts) {
  std::string s;
  for (auto p : parts) {
    if (!s.empty()) s += '_';
    s += p;
  }
  return s;
}

std::string num(int v) { return std::to_string(v); }

void check_batch(const ProblemInstance& inst, const std::vector<int>& batch) {
  if (batch.empty()) throw std::invalid_argument("scenario batch is empty");
  for (int h : batch)
    if (h < 0 || h >= inst.scenario_count()) throw std::out_of_range("scenario index " + num(h) + " out of range");
}

double tail_mass(std::size_t n, double alpha, TailPolicy tail) {
  if (tail == TailPolicy::kInteger) return tail_count(n, alpha);
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
  return alpha * static_cast<double>(n);
}

// Static body (3b)-(3f); returns the u[h,N,target] variables.
std::vector<int> add_static_body(MilpModel& m, const ProblemInstance& inst, const std::vector<int>& batch,
                                 const SlotDomains& domains) {
  const int N = inst.horizon, K = inst.antibiotics(), d = inst.genotypes();
  std::vector<std::vector<int>> x(static_cast<std::size_t>(N), std::vector<int>(static_cast<std::size_t>(K)));
  for (int n = 0; n < N; ++n) {
    auto allowed = allowed_antibiotics(domains, n, K);
    for (int k = 0; k < K; ++k) {
      bool ok = std::binary_search(allowed.begin(), allowed.end(), k);
      x[n][k] = m.add_variable(MilpModel::selection_tag(SelectionSpace::kStatic, n, k), VarKind::kBinary, 0.0,
                               ok ? 1.0 : 0.0);
    }
    std::vector<LinearTerm> sos;
    for (int k = 0; k < K; ++k) sos.push_back({x[n][k], 1.0});
    m.add_constraint(tag({"sos", num(n)}), std::move(sos), Sense::kEqual, 1.0);
  }

  std::vector<int> finals;
  for (int h : batch) {
    const auto& sc = inst.scenarios->scenarios[static_cast<std::size_t>(h)];
    const std::string hs = num(h);
    std::vector<std::vector<int>> u(static_cast<std::size_t>(N + 1), std::vector<int>(static_cast<std::size_t>(d)));
    for (int n = 0; n <= N; ++n)
      for (int i = 0; i < d; ++i) u[n][i] = m.add_variable(tag({"u", hs, num(n), num(i)}), VarKind::kContinuous, 0.0, kInf);
    // v[s][k][i] copies u[s] into the branch of the antibiotic applied at step s.
    std::vector<std::vector<std::vector<int>>> v(static_cast<std::size_t>(N));
    for (int s = 0; s < N; ++s) {
      v[s].assign(static_cast<std::size_t>(K), std::vector<int>(static_cast<std::size_t>(d)));
      for (int k = 0; k < K; ++k)
        for (int i = 0; i < d; ++i)
          v[s][k][i] = m.add_variable(tag({"v", hs, num(s), num(k), num(i)}), VarKind::kContinuous, 0.0, kInf);
    }
    for (int i = 0; i < d; ++i)
      m.add_constraint(tag({"init", hs, num(i)}), {{u[0][i], 1.0}}, Sense::kEqual,
                       i == static_cast<int>(inst.initial.index()) ? 1.0 : 0.0);
    for (int s = 0; s < N; ++s) {
      for (int i = 0; i < d; ++i) {
        std::vector<LinearTerm> t;
        for (int k = 0; k < K; ++k) t.push_back({v[s][k][i], 1.0});
        t.push_back({u[s][i], -1.0});
        m.add_constraint(tag({"split", hs, num(s), num(i)}), std::move(t), Sense::kEqual, 0.0);
      }
      for (int j = 0; j < d; ++j) {
        std::vector<LinearTerm> t;
        for (int k = 0; k < K; ++k)
          for (int i = 0; i < d; ++i) {
            double p = sc.matrices[static_cast<std::size_t>(k)](i, j);
            if (p != 0.0) t.push_back({v[s][k][i], p});
          }
        t.push_back({u[s + 1][j], -1.0});
        m.add_constraint(tag({"flow", hs, num(s + 1), num(j)}), std::move(t), Sense::kEqual, 0.0);
      }
      for (int k = 0; k < K; ++k) {
        std::vector<LinearTerm> t;
        for (int i = 0; i < d; ++i) t.push_back({v[s][k][i], 1.0});
        t.push_back({x[s][k], -1.0});
        m.add_constraint(tag({"link", hs, num(s), num(k)}), std::move(t), Sense::kEqual, 0.0);
      }
    }
    finals.push_back(u[N][inst.target.index()]);
  }
  return finals;
}

void add_cvar_block(MilpModel& m, const std::vector<int>& batch, const std::vector<int>& finals, double mass) {
  const int lam = m.add_variable("lam", VarKind::kContinuous, -kInf, kInf);
  m.add_objective_term(lam, 1.0);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::string hs = num(batch[b]);
    const int mu = m.add_variable(tag({"mu", hs}), VarKind::kContinuous, 0.0, kInf);
    m.add_objective_term(mu, -1.0 / mass);
    m.add_constraint(tag({"cvar", hs}), {{lam, 1.0}, {mu, -1.0}, {finals[b], -1.0}}, Sense::kLessEqual, 0.0);
  }
}

}  // namespace

MilpModel build_static_rn(const ProblemInstance& inst, std::vector<int> batch, const SlotDomains& domains) {
  check_batch(inst, batch);
  MilpModel m;
  auto finals = add_static_body(m, inst, batch, domains);
  for (int f : finals) m.add_objective_term(f, 1.0 / static_cast<double>(batch.size()));
  m.set_origin({Formulation::kStaticRiskNeutral, inst, std::move(batch), 1.0, domains, TailPolicy::kInteger});
  return m;
}

MilpModel build_static_ra(const ProblemInstance& inst, std::vector<int> batch, double alpha,
                          const SlotDomains& domains, TailPolicy tail) {
  check_batch(inst, batch);
  const double mass = tail_mass(batch.size(), alpha, tail);
  MilpModel m;
  auto finals = add_static_body(m, inst, batch, domains);
  add_cvar_block(m, batch, finals, mass);
  m.set_origin({Formulation::kStaticRiskAverse, inst, std::move(batch), alpha, domains, tail});
  return m;
}

MilpModel build_dynamic_ra(const ProblemInstance& inst, std::vector<int> batch, double alpha,
                           const std::map<int, int>& fixed, const SlotDomains& domains, TailPolicy tail) {
  check_batch(inst, batch);
  const double mass = tail_mass(batch.size(), alpha, tail);
  const int N = inst.horizon, K = inst.antibiotics(), d = inst.genotypes();

  SlotDomains dom(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) dom[i] = allowed_antibiotics(domains, i, K);
  for (auto [g, k] : fixed) {
    if (g < 0 || g >= d) throw std::invalid_argument("fixed genotype index " + num(g) + " out of range");
    if (!std::binary_search(dom[g].begin(), dom[g].end(), k))
      throw std::invalid_argument("fixed antibiotic " + num(k) + " for genotype " + num(g) +
                                  " conflicts with its allowed set");
    dom[g] = {k};
  }

  MilpModel m;
  std::vector<std::vector<int>> y(static_cast<std::size_t>(K), std::vector<int>(static_cast<std::size_t>(d)));
  for (int i = 0; i < d; ++i) {
    const bool pinned = dom[i].size() == 1;
    for (int k = 0; k < K; ++k) {
      const bool ok = std::binary_search(dom[i].begin(), dom[i].end(), k);
      const double lo = pinned && ok ? 1.0 : 0.0;
      y[k][i] = m.add_variable(MilpModel::selection_tag(SelectionSpace::kDynamic, i, k), VarKind::kBinary, lo,
                               ok ? 1.0 : 0.0);
    }
  }
  for (int i = 0; i < d; ++i) {
    std::vector<LinearTerm> sos;
    for (int k = 0; k < K; ++k) sos.push_back({y[k][i], 1.0});
    m.add_constraint(tag({"sos", num(i)}), std::move(sos), Sense::kEqual, 1.0);
  }

  std::vector<int> finals;
  for (int h : batch) {
    const auto& sc = inst.scenarios->scenarios[static_cast<std::size_t>(h)];
    const std::string hs = num(h);
    std::vector<std::vector<int>> u(static_cast<std::size_t>(N + 1), std::vector<int>(static_cast<std::size_t>(d)));
    for (int n = 0; n <= N; ++n)
      for (int j = 0; j < d; ++j) u[n][j] = m.add_variable(tag({"u", hs, num(n), num(j)}), VarKind::kContinuous, 0.0, kInf);
    std::vector<std::vector<std::vector<int>>> w(static_cast<std::size_t>(N));
    for (int s = 0; s < N; ++s) {
      w[s].assign(static_cast<std::size_t>(K), std::vector<int>(static_cast<std::size_t>(d)));
      for (int k = 0; k < K; ++k)
        for (int i = 0; i < d; ++i)
          w[s][k][i] = m.add_variable(tag({"w", hs, num(s), num(k), num(i)}), VarKind::kContinuous, 0.0, kInf);
    }
    for (int j = 0; j < d; ++j)
      m.add_constraint(tag({"init", hs, num(j)}), {{u[0][j], 1.0}}, Sense::kEqual,
                       j == static_cast<int>(inst.initial.index()) ? 1.0 : 0.0);
    for (int s = 0; s < N; ++s) {
      for (int j = 0; j < d; ++j) {
        std::vector<LinearTerm> t{{u[s + 1][j], 1.0}};
        for (int k = 0; k < K; ++k)
          for (int i = 0; i < d; ++i) {
            double p = sc.matrices[static_cast<std::size_t>(k)](i, j);
            if (p != 0.0) t.push_back({w[s][k][i], -p});
          }
        m.add_constraint(tag({"flow", hs, num(s + 1), num(j)}), std::move(t), Sense::kEqual, 0.0);
      }
      for (int k = 0; k < K; ++k)
        for (int i = 0; i < d; ++i)
          m.add_constraint(tag({"link", hs, num(s), num(k), num(i)}), {{w[s][k][i], 1.0}, {y[k][i], -1.0}},
                           Sense::kLessEqual, 0.0);
      for (int i = 0; i < d; ++i) {
        std::vector<LinearTerm> t;
        for (int k = 0; k < K; ++k) t.push_back({w[s][k][i], 1.0});
        t.push_back({u[s][i], -1.0});
        m.add_constraint(tag({"split", hs, num(s), num(i)}), std::move(t), Sense::kEqual, 0.0);
      }
    }
    for (int n = 1; n <= N; ++n) {
      std::vector<LinearTerm> t;
      for (int j = 0; j < d; ++j) t.push_back({u[n][j], 1.0});
      m.add_constraint(tag({"valid", hs, num(n)}), std::move(t), Sense::kEqual, 1.0);
    }
    finals.push_back(u[N][inst.target.index()]);
  }
  add_cvar_block(m, batch, finals, mass);
  m.set_origin({Formulation::kDynamicRiskAverse, inst, std::move(batch), alpha, std::move(dom), tail});
  return m;
}

MilpModel add_cuts(MilpModel model, const std::vector<Cut>& cuts) {
  for (const auto& c : cuts) {
    std::vector<LinearTerm> terms;
    for (const auto& t : c.terms) {
      auto v = model.find(MilpModel::selection_tag(c.space, t.slot, t.antibiotic));
      if (!v) throw std::invalid_argument("cut references unknown variable " +
                                          MilpModel::selection_tag(c.space, t.slot, t.antibiotic));
      terms.push_back({*v, t.coef});
    }
    model.add_constraint("cut_" + std::to_string(model.cuts().size()), std::move(terms), c.sense, c.rhs);
    model.attach_cut(c);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Enumeration backend
// ---------------------------------------------------------------------------

namespace {

class BudgetExceeded : public std::length_error {
 public:
  using std::length_error::length_error;
};

// Cut compiled to a dense slot x antibiotic coefficient table.
struct CompiledCut {
  std::vector<double> table;
  Sense sense;
  double rhs;
  bool monotone;  // all coefficients >= 0, so partial sums may prune
};

std::vector<CompiledCut> compile(const std::vector<Cut>& cuts, SelectionSpace space, int slots, int K) {
  std::vector<CompiledCut> out;
  for (const auto& c : cuts) {
    if (c.space != space) throw std::invalid_argument("cut lives in the wrong selection space");
    CompiledCut cc{std::vector<double>(static_cast<std::size_t>(slots) * K, 0.0), c.sense, c.rhs, true};
    for (const auto& t : c.terms) {
      if (t.slot < 0 || t.slot >= slots || t.antibiotic < 0 || t.antibiotic >= K)
        throw std::invalid_argument("cut references unknown variable " +
                                    MilpModel::selection_tag(space, t.slot, t.antibiotic));
      cc.table[static_cast<std::size_t>(t.slot) * K + t.antibiotic] += t.coef;
      if (t.coef < 0) cc.monotone = false;
    }
    out.push_back(std::move(cc));
  }
  return out;
}

bool holds(const CompiledCut& c, double l) {
  switch (c.sense) {
    case Sense::kLessEqual: return l <= c.rhs + 1e-9;
    case Sense::kGreaterEqual: return l >= c.rhs - 1e-9;
    case Sense::kEqual: return std::abs(l - c.rhs) <= 1e-9;
  }
  return false;
}

std::size_t product_size(const std::vector<std::vector<int>>& lists) {
  std::size_t n = 1;
  for (const auto& l : lists) {
    if (l.empty()) return 0;
    if (n > std::numeric_limits<std::size_t>::max() / l.size()) return std::numeric_limits<std::size_t>::max();
    n *= l.size();
  }
  return n;
}

void fill_selection(MilpSolution& sol, SelectionSpace space, int K) {
  for (std::size_t s = 0; s < sol.choice.size(); ++s)
    for (int k = 0; k < K; ++k)
      sol.values[MilpModel::selection_tag(space, static_cast<int>(s), k)] = sol.choice[s] == k ? 1.0 : 0.0;
}

struct StaticSearch {
  const ProblemInstance& inst;
  std::span<const int> batch;
  double alpha;
  TailPolicy tail;
  std::vector<std::vector<int>> allowed;
  std::vector<CompiledCut> cuts;
  int N, K, d;
  // layers[n] holds the distributions after n steps for every batch scenario.
  std::vector<std::vector<double>> layers{};
  std::vector<std::vector<double>> partial{};  // per depth, per cut
  std::vector<int> plan{};
  std::vector<int> best_plan{};
  double best = -kInf;
  std::size_t visited = 0;
  std::vector<double> values{};

  void run() {
    const std::size_t B = batch.size();
    layers.assign(static_cast<std::size_t>(N + 1), std::vector<double>(B * d, 0.0));
    for (std::size_t b = 0; b < B; ++b) layers[0][b * d + inst.initial.index()] = 1.0;
    partial.assign(static_cast<std::size_t>(N + 1), std::vector<double>(cuts.size(), 0.0));
    plan.assign(static_cast<std::size_t>(N), 0);
    values.resize(B);
    dfs(0);
  }

  void dfs(int n) {
    if (n == N) {
      for (std::size_t c = 0; c < cuts.size(); ++c)
        if (!holds(cuts[c], partial[N][c])) return;
      ++visited;
      const std::size_t B = batch.size();
      for (std::size_t b = 0; b < B; ++b) values[b] = layers[N][b * d + inst.target.index()];
      const double v = tail_objective(values, alpha, tail);
      if (v > best) {
        best = v;
        best_plan = plan;
      }
      return;
    }
    const auto& sc = inst.scenarios->scenarios;
    for (int k : allowed[n]) {
      bool pruned = false;
      for (std::size_t c = 0; c < cuts.size(); ++c) {
        double l = partial[n][c] + cuts[c].table[static_cast<std::size_t>(n) * K + k];
        partial[n + 1][c] = l;
        if (cuts[c].monotone && cuts[c].sense != Sense::kGreaterEqual && l > cuts[c].rhs + 1e-9) pruned = true;
      }
      if (pruned) continue;
      plan[n] = k;
      const auto& cur = layers[n];
      auto& next = layers[n + 1];
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& m = sc[static_cast<std::size_t>(batch[b])].matrices[static_cast<std::size_t>(k)];
        const double* u = cur.data() + b * d;
        double* out = next.data() + b * d;
        std::fill(out, out + d, 0.0);
        for (int i = 0; i < d; ++i) {
          const double ui = u[i];
          if (ui == 0.0) continue;
          auto row = m.row(i);
          for (int j = 0; j < d; ++j) out[j] += ui * row[j];
        }
      }
      dfs(n + 1);
    }
  }
};

}  // namespace

MilpSolution enumerate_static(const ProblemInstance& inst, std::span<const int> batch, double alpha,
                              const std::vector<Cut>& cuts, const EnumerationOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  if (batch.empty()) throw std::invalid_argument("scenario batch is empty");
  const int N = inst.horizon, K = inst.antibiotics();
  StaticSearch s{inst, batch, alpha, opts.tail, {}, compile(cuts, SelectionSpace::kStatic, N, K), N, K,
                 inst.genotypes()};
  for (int n = 0; n < N; ++n) s.allowed.push_back(allowed_antibiotics(opts.domains, n, K));
  const std::size_t space = product_size(s.allowed);
  if (space > opts.budget)
    throw BudgetExceeded("enumeration over " + std::to_string(space) + " plans exceeds the budget of " +
                         std::to_string(opts.budget) + "; use the MILP backend");
  // Validate alpha*|batch| before searching.
  if (opts.tail == TailPolicy::kInteger) tail_count(batch.size(), alpha);
  s.run();

  MilpSolution sol;
  sol.evaluated = s.visited;
  if (s.best_plan.empty()) {
    sol.status = SolveStatus::kInfeasible;
  } else {
    sol.status = SolveStatus::kOptimal;
    sol.objective = sol.bound = s.best;
    sol.choice = s.best_plan;
    fill_selection(sol, SelectionSpace::kStatic, K);
  }
  sol.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  sol.log = "enumeration: " + std::to_string(s.visited) + " feasible plans";
  return sol;
}

MilpSolution enumerate_dynamic(const ProblemInstance& inst, std::span<const int> batch, double alpha,
                               const std::vector<Cut>& cuts, const std::map<int, int>& fixed,
                               const EnumerationOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  if (batch.empty()) throw std::invalid_argument("scenario batch is empty");
  const int K = inst.antibiotics(), d = inst.genotypes(), N = inst.horizon;
  std::vector<std::vector<int>> allowed;
  for (int i = 0; i < d; ++i) allowed.push_back(allowed_antibiotics(opts.domains, i, K));
  for (auto [g, k] : fixed) {
    if (g < 0 || g >= d) throw std::invalid_argument("fixed genotype index out of range");
    if (!std::binary_search(allowed[g].begin(), allowed[g].end(), k))
      throw std::invalid_argument("fixed antibiotic conflicts with the allowed set of genotype " + std::to_string(g));
    allowed[g] = {k};
  }
  const std::size_t space = product_size(allowed);
  if (space > opts.budget)
    throw BudgetExceeded("enumeration over " + std::to_string(space) + " policies exceeds the budget of " +
                         std::to_string(opts.budget) + "; use the MILP backend");
  if (opts.tail == TailPolicy::kInteger) tail_count(batch.size(), alpha);
  const auto compiled = compile(cuts, SelectionSpace::kDynamic, d, K);

  MilpSolution sol;
  std::vector<int> best_policy;
  double best = -kInf;
  std::vector<std::size_t> digit(static_cast<std::size_t>(d), 0);
  std::vector<int> policy(static_cast<std::size_t>(d));
  std::vector<double> values(batch.size()), cur(static_cast<std::size_t>(d)), next(cur.size());
  const auto& sc = inst.scenarios->scenarios;
  std::size_t visited = 0;
  if (space > 0) {
    for (;;) {
      for (int i = 0; i < d; ++i) policy[i] = allowed[i][digit[i]];
      bool feasible = true;
      for (const auto& c : compiled) {
        double l = 0.0;
        for (int i = 0; i < d; ++i) l += c.table[static_cast<std::size_t>(i) * K + policy[i]];
        if (!holds(c, l)) {
          feasible = false;
          break;
        }
      }
      if (feasible) {
        ++visited;
        for (std::size_t b = 0; b < batch.size(); ++b) {
          const auto& mats = sc[static_cast<std::size_t>(batch[b])].matrices;
          std::fill(cur.begin(), cur.end(), 0.0);
          cur[inst.initial.index()] = 1.0;
          for (int n = 0; n < N; ++n) {
            std::fill(next.begin(), next.end(), 0.0);
            for (int i = 0; i < d; ++i) {
              const double ui = cur[i];
              if (ui == 0.0) continue;
              auto row = mats[static_cast<std::size_t>(policy[i])].row(i);
              for (int j = 0; j < d; ++j) next[j] += ui * row[j];
            }
            cur.swap(next);
          }
          values[b] = cur[inst.target.index()];
        }
        const double v = tail_objective(values, alpha, opts.tail);
        if (v > best) {
          best = v;
          best_policy = policy;
        }
      }
      // Odometer with the last genotype fastest keeps lexicographic order.
      int i = d - 1;
      while (i >= 0 && ++digit[i] == allowed[i].size()) digit[i--] = 0;
      if (i < 0) break;
    }
  }
  sol.evaluated = visited;
  if (best_policy.empty()) {
    sol.status = SolveStatus::kInfeasible;
  } else {
    sol.status = SolveStatus::kOptimal;
    sol.objective = sol.bound = best;
    sol.choice = best_policy;
    fill_selection(sol, SelectionSpace::kDynamic, K);
  }
  sol.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  sol.log = "enumeration: " + std::to_string(visited) + " feasible policies";
  return sol;
}

std::size_t search_space_size(const ModelOrigin& origin, std::size_t slots) {
  std::vector<std::vector<int>> lists;
  for (std::size_t s = 0; s < slots; ++s)
    lists.push_back(allowed_antibiotics(origin.domains, static_cast<int>(s), origin.instance.antibiotics()));
  return product_size(lists);
}

// ---------------------------------------------------------------------------
// MPS interchange
// ---------------------------------------------------------------------------

std::string sanitize_name(const std::string& name) {
  std::string s;
  for (char c : name) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.') ? c : '_';
  if (s.empty()) s = "_";
  return s;
}

namespace {

std::vector<std::string> unique_names(const std::vector<std::string>& raw) {
  std::set<std::string> seen;
  std::vector<std::string> out;
  for (const auto& r : raw) {
    std::string s = sanitize_name(r);
    std::string cand = s;
    for (int n = 1; !seen.insert(cand).second; ++n) cand = s + "__" + std::to_string(n);
    out.push_back(cand);
  }
  return out;
}

}  // namespace

void write_interchange(const MilpModel& model, std::ostream& out) {
  const auto& vars = model.variables();
  const auto& rows = model.constraints();
  std::vector<std::string> raw_cols, raw_rows;
  for (const auto& v : vars) raw_cols.push_back(v.tag);
  for (const auto& r : rows) raw_rows.push_back(r.name);
  const auto cols = unique_names(raw_cols);
  auto row_names = unique_names(raw_rows);
  const std::string obj = "obj";
  for (auto& r : row_names)
    if (r == obj) r = "obj_row";

  // column-major coefficient lists
  std::vector<std::vector<std::pair<int, double>>> by_col(vars.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::map<int, double> merged;
    for (const auto& t : rows[r].terms) merged[t.var] += t.coef;
    for (auto [v, c] : merged)
      if (c != 0.0) by_col[static_cast<std::size_t>(v)].push_back({static_cast<int>(r), c});
  }
  std::vector<double> objc(vars.size(), 0.0);
  for (const auto& t : model.objective()) objc[static_cast<std::size_t>(t.var)] += t.coef;

  out << "NAME atm\nOBJSENSE\n    MAX\nROWS\n N  " << obj << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const char* s = rows[r].sense == Sense::kLessEqual ? "L" : rows[r].sense == Sense::kEqual ? "E" : "G";
    out << ' ' << s << "  " << row_names[r] << '\n';
  }
  out << "COLUMNS\n";
  bool in_int = false;
  int marker = 0;
  for (std::size_t j = 0; j < vars.size(); ++j) {
    const bool bin = vars[j].kind == VarKind::kBinary;
    if (bin != in_int) {
      out << "    M" << marker++ << "  'MARKER'  " << (bin ? "'INTORG'" : "'INTEND'") << '\n';
      in_int = bin;
    }
    bool wrote = false;
    if (objc[j] != 0.0) {
      out << "    " << cols[j] << "  " << obj << "  " << fmt_double(objc[j]) << '\n';
      wrote = true;
    }
    for (auto [r, c] : by_col[j]) {
      out << "    " << cols[j] << "  " << row_names[static_cast<std::size_t>(r)] << "  " << fmt_double(c) << '\n';
      wrote = true;
    }
    if (!wrote) out << "    " << cols[j] << "  " << obj << "  0\n";
  }
  if (in_int) out << "    M" << marker++ << "  'MARKER'  'INTEND'\n";
  out << "RHS\n";
  for (std::size_t r = 0; r < rows.size(); ++r)
    if (rows[r].rhs != 0.0) out << "    rhs  " << row_names[r] << "  " << fmt_double(rows[r].rhs) << '\n';
  out << "BOUNDS\n";
  for (std::size_t j = 0; j < vars.size(); ++j) {
    const auto& v = vars[j];
    const auto& c = cols[j];
    if (v.lower == v.upper) {
      out << " FX bnd  " << c << "  " << fmt_double(v.lower) << '\n';
    } else if (v.kind == VarKind::kBinary && v.lower == 0.0 && v.upper == 1.0) {
      out << " BV bnd  " << c << '\n';
    } else if (std::isinf(v.lower) && std::isinf(v.upper)) {
      out << " FR bnd  " << c << '\n';
    } else {
      if (std::isinf(v.lower))
        out << " MI bnd  " << c << '\n';
      else if (v.lower != 0.0 || v.kind == VarKind::kBinary)
        out << " LO bnd  " << c << "  " << fmt_double(v.lower) << '\n';
      if (!std::isinf(v.upper)) out << " UP bnd  " << c << "  " << fmt_double(v.upper) << '\n';
    }
  }
  out << "ENDATA\n";
}

void write_interchange(const MilpModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write MPS file " + path.string());
  write_interchange(model, out);
  if (!out) throw std::runtime_error("I/O error writing " + path.string());
}

// ---------------------------------------------------------------------------
// External solver adapter
// ---------------------------------------------------------------------------

std::string default_external_command() {
  if (const char* env = std::getenv("ATM_MILP_SOLVER"); env && *env) return env;
  return std::string("python3 \"") + ATM_HIGHS_WRAPPER + "\"";
}

bool external_solver_available(const std::string& command) {
  return std::system((command + " --check >/dev/null 2>&1").c_str()) == 0;
}

MilpSolution parse_solution_file(std::istream& in) {
  MilpSolution sol;
  std::string line, status;
  bool have_status = false;
  while (std::getline(in, line)) {
    if (line == "Model status") {
      std::getline(in, status);
      have_status = true;
    } else if (line.rfind("Objective ", 0) == 0) {
      sol.objective = std::stod(line.substr(10));
    } else if (line.rfind("# Columns ", 0) == 0) {
      const int n = std::stoi(line.substr(10));
      for (int c = 0; c < n && std::getline(in, line); ++c) {
        std::istringstream ss(line);
        std::string name;
        double value = 0.0;
        if (!(ss >> name >> value)) throw std::runtime_error("malformed column line in solution file: " + line);
        sol.values[name] = value;
      }
    } else if (line.rfind("# Rows", 0) == 0) {
      break;
    }
  }
  if (!have_status) throw std::runtime_error("solution file has no 'Model status' section");
  if (status == "Optimal")
    sol.status = SolveStatus::kOptimal;
  else if (status == "Time limit reached")
    sol.status = SolveStatus::kTimeLimit;
  else if (status == "Infeasible" || status == "Primal infeasible or unbounded")
    sol.status = SolveStatus::kInfeasible;
  else
    throw std::runtime_error("solver reported status '" + status + "'");
  sol.bound = sol.objective;
  return sol;
}

std::vector<int> extract_choice(const MilpModel& model, const std::map<std::string, double>& values) {
  if (!model.origin()) throw std::invalid_argument("model has no origin; cannot map selection variables");
  const auto& o = *model.origin();
  const bool dynamic = o.formulation == Formulation::kDynamicRiskAverse;
  const auto space = dynamic ? SelectionSpace::kDynamic : SelectionSpace::kStatic;
  const int slots = dynamic ? o.instance.genotypes() : o.instance.horizon;
  std::vector<int> choice(static_cast<std::size_t>(slots), -1);
  for (int s = 0; s < slots; ++s)
    for (int k = 0; k < o.instance.antibiotics(); ++k) {
      auto it = values.find(sanitize_name(MilpModel::selection_tag(space, s, k)));
      if (it != values.end() && it->second > 0.5) choice[s] = k;
    }
  for (int c : choice)
    if (c < 0) throw std::runtime_error("solution leaves a selection slot unassigned");
  return choice;
}

namespace {

std::atomic<int> g_solve_counter{0};

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

MilpSolution solve_external(const MilpModel& model, const SolveLimits& limits, const std::string& command) {
  namespace fs = std::filesystem;
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = fs::temp_directory_path() /
                       ("atm_milp_" + std::to_string(::getpid()) + "_" + std::to_string(g_solve_counter++));
  fs::create_directories(dir);
  const fs::path mps = dir / "model.mps", sol_path = dir / "solution.txt", log_path = dir / "solver.log";
  write_interchange(model, mps);
  const std::string cmd = command + " \"" + mps.string() + "\" --abs-gap " + fmt_double(limits.abs_gap) +
                          " --time-limit " + fmt_double(limits.time_limit) + " --solution \"" + sol_path.string() +
                          "\" > \"" + log_path.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  std::string log = read_all(log_path);
  if (rc != 0 || !fs::exists(sol_path)) {
    fs::remove_all(dir);
    throw std::runtime_error("external MILP solver failed (exit " + std::to_string(rc) + "): " +
                             log.substr(0, std::min<std::size_t>(log.size(), 2000)));
  }
  std::ifstream in(sol_path);
  MilpSolution sol = parse_solution_file(in);
  sol.log = log;
  if (auto pos = log.find("dual_bound="); pos != std::string::npos) {
    try {
      double b = std::stod(log.substr(pos + 11));
      if (std::isfinite(b)) sol.bound = b;
    } catch (const std::exception&) {
    }
  }
  fs::remove_all(dir);
  if (sol.status == SolveStatus::kOptimal && sol.bound - sol.objective > 1e-9) sol.status = SolveStatus::kGapLimit;
  if (!sol.values.empty()) sol.choice = extract_choice(model, sol.values);
  sol.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return sol;
}

}  // namespace

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal: return "optimal";
    case SolveStatus::kGapLimit: return "gap-limit";
    case SolveStatus::kTimeLimit: return "time-limit";
    case SolveStatus::kInfeasible: return "infeasible";
  }
  return "unknown";
}

std::string to_string(Backend b) {
  switch (b) {
    case Backend::kAuto: return "auto";
    case Backend::kEnumeration: return "enumeration";
    case Backend::kExternal: return "external";
  }
  return "unknown";
}

Backend backend_from_string(const std::string& s) {
  if (s == "auto") return Backend::kAuto;
  if (s == "enumeration") return Backend::kEnumeration;
  if (s == "external" || s == "milp") return Backend::kExternal;
  throw std::invalid_argument("unknown backend '" + s + "' (expected auto, enumeration or external)");
}

MilpSolution solve(const MilpModel& model, Backend backend, const SolveLimits& limits,
                   const EnumerationOptions& enumeration, const std::string& external_command) {
  const auto& origin = model.origin();
  if (backend == Backend::kAuto) {
    backend = Backend::kExternal;
    if (origin) {
      const bool dynamic = origin->formulation == Formulation::kDynamicRiskAverse;
      const auto slots = static_cast<std::size_t>(dynamic ? origin->instance.genotypes() : origin->instance.horizon);
      if (search_space_size(*origin, slots) <= enumeration.budget) backend = Backend::kEnumeration;
    }
  }
  if (backend == Backend::kExternal) return solve_external(model, limits, external_command);

  if (!origin) throw std::invalid_argument("enumeration backend needs a model built by one of the builders");
  EnumerationOptions opts = enumeration;
  opts.domains = origin->domains;
  opts.tail = origin->tail;
  std::vector<Cut> cuts = model.cuts();
  switch (origin->formulation) {
    case Formulation::kStaticRiskNeutral:
      return enumerate_static(origin->instance, origin->batch, 1.0, cuts, opts);
    case Formulation::kStaticRiskAverse:
      return enumerate_static(origin->instance, origin->batch, origin->alpha, cuts, opts);
    case Formulation::kDynamicRiskAverse:
      return enumerate_dynamic(origin->instance, origin->batch, origin->alpha, cuts, {}, opts);
  }
  throw std::logic_error("unreachable");
}

}  // namespace atm
