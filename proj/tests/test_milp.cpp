#include <doctest.h>

#include <sstream>

#include "atm/milp.hpp"
#include "oracles.hpp"

using namespace atm;

namespace {

std::vector<int> iota_batch(int n) {
  std::vector<int> b(n);
  std::iota(b.begin(), b.end(), 0);
  return b;
}

std::string tag(std::initializer_list<int> parts, const char* head) {
  std::string s = head;
  for (int p : parts) s += "_" + std::to_string(p);
  return s;
}

void set_cvar_block(const MilpModel& m, std::vector<double>& x, const std::vector<int>& batch,
                    const std::vector<double>& finals, double alpha, TailPolicy tail) {
  const double mass = tail == TailPolicy::kInteger ? tail_count(finals.size(), alpha) : alpha * finals.size();
  auto sorted = finals;
  std::sort(sorted.begin(), sorted.end());
  const double lambda = sorted[static_cast<std::size_t>(std::ceil(mass - 1e-9)) - 1];
  x[m.at("lam")] = lambda;
  for (std::size_t b = 0; b < batch.size(); ++b)
    x[m.at(tag({batch[b]}, "mu"))] = std::max(0.0, lambda - finals[b]);
}

// Full variable vector of the static model at the SOS1 point `plan`.
std::vector<double> static_point(const MilpModel& m, const ProblemInstance& inst, const std::vector<int>& batch,
                                 const std::vector<int>& plan, std::optional<double> alpha,
                                 TailPolicy tail = TailPolicy::kInteger) {
  std::vector<double> x(m.variables().size(), 0.0);
  const int N = inst.horizon, K = inst.antibiotics(), d = inst.genotypes();
  for (int n = 0; n < N; ++n) x[m.at(tag({n, plan[n]}, "x"))] = 1.0;
  std::vector<double> finals;
  for (int h : batch) {
    std::vector<double> u(d, 0.0);
    u[inst.initial.index()] = 1.0;
    for (int i = 0; i < d; ++i) x[m.at(tag({h, 0, i}, "u"))] = u[i];
    for (int s = 0; s < N; ++s) {
      std::vector<double> nx(d, 0.0);
      const auto& M = inst.scenarios->scenarios[h].matrices[plan[s]];
      for (int i = 0; i < d; ++i) {
        x[m.at(tag({h, s, plan[s], i}, "v"))] = u[i];
        for (int j = 0; j < d; ++j) nx[j] += u[i] * M(i, j);
      }
      u = nx;
      for (int i = 0; i < d; ++i) x[m.at(tag({h, s + 1, i}, "u"))] = u[i];
    }
    finals.push_back(u[inst.target.index()]);
    (void)K;
  }
  if (alpha) set_cvar_block(m, x, batch, finals, *alpha, tail);
  return x;
}

std::vector<double> dynamic_point(const MilpModel& m, const ProblemInstance& inst, const std::vector<int>& batch,
                                  const std::vector<int>& pol, double alpha) {
  std::vector<double> x(m.variables().size(), 0.0);
  const int N = inst.horizon, d = inst.genotypes();
  for (int i = 0; i < d; ++i) x[m.at(tag({pol[i], i}, "y"))] = 1.0;
  std::vector<double> finals;
  for (int h : batch) {
    std::vector<double> u(d, 0.0);
    u[inst.initial.index()] = 1.0;
    for (int i = 0; i < d; ++i) x[m.at(tag({h, 0, i}, "u"))] = u[i];
    for (int s = 0; s < N; ++s) {
      std::vector<double> nx(d, 0.0);
      for (int i = 0; i < d; ++i) {
        x[m.at(tag({h, s, pol[i], i}, "w"))] = u[i];
        const auto& M = inst.scenarios->scenarios[h].matrices[pol[i]];
        for (int j = 0; j < d; ++j) nx[j] += u[i] * M(i, j);
      }
      u = nx;
      for (int i = 0; i < d; ++i) x[m.at(tag({h, s + 1, i}, "u"))] = u[i];
    }
    finals.push_back(u[inst.target.index()]);
  }
  set_cvar_block(m, x, batch, finals, alpha, TailPolicy::kInteger);
  return x;
}

}  // namespace

TEST_CASE("static model size and row families") {
  auto inst = oracle::random_instance(2, 2, 2, 5, 3, 1);
  const int N = 3, K = 3, d = 4, B = 5;
  auto m = build_static_rn(inst, iota_batch(B));
  CHECK(m.variables().size() == static_cast<std::size_t>(N * K + B * (N + 1) * d + B * N * K * d));
  CHECK(m.binary_count() == static_cast<std::size_t>(N * K));
  auto ra = build_static_ra(inst, iota_batch(B), 0.2);
  CHECK(ra.variables().size() == m.variables().size() + 1 + B);
  CHECK(ra.find("lam"));
  CHECK(ra.variables()[ra.at("lam")].lower == -std::numeric_limits<double>::infinity());
  int cvar_rows = 0;
  for (const auto& c : ra.constraints()) cvar_rows += c.name.rfind("cvar_", 0) == 0;
  CHECK(cvar_rows == B);
  CHECK_THROWS(build_static_ra(inst, iota_batch(B), 0.1));
  CHECK_NOTHROW(build_static_ra(inst, iota_batch(B), 0.1, {}, TailPolicy::kFractional));
  CHECK_THROWS(build_static_rn(inst, {}));
  CHECK_THROWS(build_static_rn(inst, {99}));
}

TEST_CASE("SOS1 points are exactly feasible and score their CVaR") {
  for (int seed = 0; seed < 6; ++seed) {
    auto inst = oracle::random_instance(2, 2, 3, 10, 3, 40 + seed);
    auto batch = iota_batch(10);
    auto m = build_static_ra(inst, batch, 0.1);
    auto rn = build_static_rn(inst, batch);
    oracle::for_each_product(oracle::full_lists(3, 3), [&](const std::vector<int>& p) {
      auto x = static_point(m, inst, batch, p, 0.1);
      CHECK(m.max_violation(x) <= 1e-9);
      auto vals = oracle::plan_values(p, inst);
      CHECK(std::abs(m.objective_value(x) - oracle::cvar_sorted(vals, 0.1)) <= 1e-9);
      auto xr = static_point(rn, inst, batch, p, std::nullopt);
      CHECK(rn.max_violation(xr) <= 1e-9);
      CHECK(std::abs(rn.objective_value(xr) - oracle::cvar_sorted(vals, 1.0)) <= 1e-9);
    });
    auto frac = build_static_ra(inst, iota_batch(5), 0.3, {}, TailPolicy::kFractional);
    auto x = static_point(frac, inst, iota_batch(5), {0, 1, 2}, 0.3, TailPolicy::kFractional);
    CHECK(frac.max_violation(x) <= 1e-9);
    auto vals = oracle::plan_values({0, 1, 2}, inst, iota_batch(5));
    CHECK(std::abs(frac.objective_value(x) - oracle::cvar_breakpoints(vals, 0.3)) <= 1e-9);
  }
}

TEST_CASE("dynamic model rows and SOS1 points") {
  auto inst = oracle::random_instance(2, 1, 3, 10, 3, 7);
  auto batch = iota_batch(10);
  auto m = build_dynamic_ra(inst, batch, 0.1);
  int valid = 0;
  for (const auto& c : m.constraints())
    if (c.name.rfind("valid_", 0) == 0) {
      ++valid;
      CHECK(c.sense == Sense::kEqual);
      CHECK(c.rhs == 1.0);
      CHECK(c.terms.size() == 4u);
    }
  CHECK(valid == 10 * 3);
  oracle::for_each_product(oracle::full_lists(4, 2), [&](const std::vector<int>& y) {
    auto x = dynamic_point(m, inst, batch, y, 0.1);
    CHECK(m.max_violation(x) <= 1e-9);
    auto vals = oracle::policy_values(y, inst);
    CHECK(std::abs(m.objective_value(x) - oracle::cvar_sorted(vals, 0.1)) <= 1e-9);
  });
  auto fixed = build_dynamic_ra(inst, batch, 0.1, {{0, 1}, {2, 0}});
  CHECK(fixed.variables()[fixed.at("y_1_0")].lower == 1.0);
  CHECK(fixed.variables()[fixed.at("y_0_0")].upper == 0.0);
  CHECK_THROWS(build_dynamic_ra(inst, batch, 0.1, {{0, 5}}));
  CHECK_THROWS(build_dynamic_ra(inst, batch, 0.1, {{0, 1}}, SlotDomains{{0}}));
}

TEST_CASE("enumeration matches brute force") {
  SUBCASE("risk-neutral a=2 K=2 N=2 three scenarios") {
    for (int seed = 0; seed < 10; ++seed) {
      auto inst = oracle::random_instance(2, 2, 3, 3, 2, 500 + seed, false);
      auto sol = solve(build_static_rn(inst, iota_batch(3)), Backend::kEnumeration);
      auto best = oracle::best_plan(inst, 1.0);
      CHECK(sol.status == SolveStatus::kOptimal);
      CHECK(std::abs(sol.objective - best.value) <= 1e-9);
      CHECK(sol.choice == best.choice);
    }
  }
  SUBCASE("risk-averse a=2 K=2 N=3 ten scenarios") {
    for (int seed = 0; seed < 10; ++seed) {
      auto inst = oracle::random_instance(2, 2, 3, 10, 3, 600 + seed, false);
      auto sol = solve(build_static_ra(inst, iota_batch(10), 0.1), Backend::kEnumeration);
      auto best = oracle::best_plan(inst, 0.1);
      CHECK(std::abs(sol.objective - best.value) <= 1e-9);
      CHECK(sol.evaluated == 8u);
      auto rn = solve(build_static_rn(inst, iota_batch(10)), Backend::kEnumeration);
      auto ra1 = solve(build_static_ra(inst, iota_batch(10), 1.0), Backend::kEnumeration);
      CHECK(std::abs(rn.objective - ra1.objective) <= 1e-12);
    }
  }
  SUBCASE("dynamic a=2 K=2 ten scenarios") {
    for (int seed = 0; seed < 10; ++seed) {
      auto inst = oracle::random_instance(2, 2, 3, 10, 3, 700 + seed, false);
      auto sol = solve(build_dynamic_ra(inst, iota_batch(10), 0.1), Backend::kEnumeration);
      auto best = oracle::best_policy(inst, 0.1);
      CHECK(std::abs(sol.objective - best.value) <= 1e-9);
      CHECK(sol.evaluated == 16u);
    }
  }
}

TEST_CASE("single antibiotic and single scenario") {
  auto ds = oracle::random_dataset(2, 1, 3, 3);
  auto set = std::make_shared<ScenarioSet>(sample_scenarios(ds, 4, 3, false));
  ProblemInstance inst(set, Genotype(2, 3), 3);
  auto sol = solve(build_static_rn(inst, iota_batch(4)), Backend::kEnumeration);
  CHECK(sol.choice == std::vector<int>{0, 0, 0});
  auto vals = oracle::plan_values({0, 0, 0}, inst);
  CHECK(std::abs(sol.objective - std::accumulate(vals.begin(), vals.end(), 0.0) / 4) <= 1e-12);

  auto inst2 = oracle::random_instance(2, 3, 3, 1, 3, 8);
  auto one = solve(build_static_ra(inst2, {0}, 1.0), Backend::kEnumeration);
  double best = 0;
  oracle::for_each_product(oracle::full_lists(3, 4), [&](const std::vector<int>& p) {
    best = std::max(best, oracle::static_value(p, inst2.scenarios->scenarios[0], 3, 0));
  });
  CHECK(std::abs(one.objective - best) <= 1e-12);
}

TEST_CASE("fully fixed dynamic model scores its single policy") {
  auto inst = oracle::random_instance(2, 2, 3, 10, 2, 9);
  std::map<int, int> fixed{{0, 2}, {1, 0}, {2, 1}, {3, 0}};
  auto sol = solve(build_dynamic_ra(inst, iota_batch(10), 0.1, fixed), Backend::kEnumeration);
  CHECK(sol.evaluated == 1u);
  CHECK(sol.choice == std::vector<int>{2, 0, 1, 0});
  CHECK(std::abs(sol.objective - oracle::cvar_sorted(oracle::policy_values({2, 0, 1, 0}, inst), 0.1)) <= 1e-12);
  auto direct = enumerate_dynamic(inst, iota_batch(10), 0.1, {}, fixed);
  CHECK(direct.choice == sol.choice);
}

TEST_CASE("cuts change what the enumerator can return") {
  auto inst = oracle::random_instance(2, 2, 3, 10, 3, 11, false);
  auto batch = iota_batch(10);
  // rank all plans
  std::vector<std::pair<double, std::vector<int>>> ranked;
  oracle::for_each_product(oracle::full_lists(3, 2), [&](const std::vector<int>& p) {
    ranked.push_back({-oracle::cvar_sorted(oracle::plan_values(p, inst), 0.1), p});
  });
  std::sort(ranked.begin(), ranked.end());
  auto no_good = [](const std::vector<int>& p) {
    Cut c;
    for (int n = 0; n < static_cast<int>(p.size()); ++n) c.terms.push_back({n, p[n], 1.0});
    c.rhs = static_cast<double>(p.size()) - 1;
    return c;
  };
  auto base = build_static_ra(inst, batch, 0.1);
  auto first = solve(base, Backend::kEnumeration);
  CHECK(std::abs(first.objective + ranked[0].first) <= 1e-12);

  auto cut_best = add_cuts(base, {no_good(first.choice)});
  CHECK(cut_best.constraints().size() == base.constraints().size() + 1);
  CHECK(cut_best.cuts().size() == 1u);
  auto second = solve(cut_best, Backend::kEnumeration);
  CHECK(second.choice != first.choice);
  // second-best value among the remaining plans
  double runner_up = -1;
  for (const auto& [v, p] : ranked)
    if (p != first.choice) runner_up = std::max(runner_up, -v);
  CHECK(std::abs(second.objective - runner_up) <= 1e-12);

  auto twice = add_cuts(cut_best, {no_good(first.choice)});
  CHECK(solve(twice, Backend::kEnumeration).objective == second.objective);

  std::vector<Cut> all_but_one;
  for (std::size_t r = 0; r + 1 < ranked.size(); ++r) all_but_one.push_back(no_good(ranked[r].second));
  auto last = solve(add_cuts(base, all_but_one), Backend::kEnumeration);
  CHECK(last.choice == ranked.back().second);

  all_but_one.push_back(no_good(ranked.back().second));
  auto none = solve(add_cuts(base, all_but_one), Backend::kEnumeration);
  CHECK(none.status == SolveStatus::kInfeasible);

  Cut bad;
  bad.terms = {{7, 0, 1.0}};
  CHECK_THROWS_WITH(add_cuts(base, {bad}), "cut references unknown variable x_7_0");
  CHECK_THROWS(enumerate_static(inst, batch, 0.1, {bad}));
}

TEST_CASE("enumeration respects domains, budget and tie-breaking") {
  auto inst = oracle::random_instance(2, 3, 3, 10, 3, 12);
  EnumerationOptions opts;
  opts.domains = {{1, 2}, {0}, {}};
  auto sol = enumerate_static(inst, iota_batch(10), 0.1, {}, opts);
  CHECK(sol.evaluated == 2u * 1u * 4u);
  CHECK((sol.choice[0] == 1 || sol.choice[0] == 2));
  CHECK(sol.choice[1] == 0);
  opts.budget = 5;
  CHECK_THROWS_AS(enumerate_static(inst, iota_batch(10), 0.1, {}, opts), std::length_error);
  // flat landscape: every plan scores 1 from the wild type, smallest wins
  GrowthRateDataset flat(2, {"A", "B"}, 2, std::vector<double>(16, 1.0));
  auto set = std::make_shared<ScenarioSet>(sample_scenarios(flat, 10, 1, true));
  ProblemInstance at_wild(set, Genotype::wild_type(2), 3);
  auto w = enumerate_static(at_wild, iota_batch(10), 0.1, {});
  CHECK(w.objective == 1.0);
  CHECK(w.choice == std::vector<int>{0, 0, 0});
}

TEST_CASE("fractional tails in the enumerator") {
  auto inst = oracle::random_instance(2, 2, 3, 25, 2, 13);
  EnumerationOptions opts;
  opts.tail = TailPolicy::kFractional;
  auto sol = enumerate_static(inst, iota_batch(25), 0.1, {}, opts);
  double best = -1;
  oracle::for_each_product(oracle::full_lists(2, 3), [&](const std::vector<int>& p) {
    best = std::max(best, oracle::cvar_breakpoints(oracle::plan_values(p, inst), 0.1));
  });
  CHECK(std::abs(sol.objective - best) <= 1e-12);
  CHECK_THROWS(enumerate_static(inst, iota_batch(25), 0.1, {}));
}

TEST_CASE("MPS writer layout") {
  MilpModel m;
  int x = m.add_variable("x", VarKind::kContinuous, 0.0, 4.0);
  m.add_objective_term(x, 1.0);
  std::ostringstream out;
  write_interchange(m, out);
  const std::string s = out.str();
  for (const char* sec : {"NAME", "OBJSENSE", "ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA"})
    CHECK(s.find(sec) != std::string::npos);
  CHECK(s.find(" UP bnd  x  4") != std::string::npos);

  auto inst = oracle::random_instance(2, 1, 2, 2, 2, 14);
  auto ra = build_static_ra(inst, {0, 1}, 0.5);
  std::ostringstream o2;
  write_interchange(ra, o2);
  const std::string t = o2.str();
  CHECK(t.find("'MARKER'  'INTORG'") != std::string::npos);
  CHECK(t.find("'MARKER'  'INTEND'") != std::string::npos);
  CHECK(t.find(" BV bnd  x_0_0") != std::string::npos);
  CHECK(t.find(" FR bnd  lam") != std::string::npos);
  CHECK(t.find("OBJSENSE\n    MAX") != std::string::npos);
  // deterministic
  std::ostringstream o3;
  write_interchange(ra, o3);
  CHECK(o3.str() == t);
}

TEST_CASE("name sanitizing") {
  CHECK(sanitize_name("x_1_2") == "x_1_2");
  CHECK(sanitize_name("a b[c]") == "a_b_c_");
  CHECK(sanitize_name("") == "_");
  MilpModel m;
  m.add_variable("a b", VarKind::kContinuous, 0, 1);
  m.add_variable("a_b", VarKind::kContinuous, 0, 1);
  std::ostringstream out;
  write_interchange(m, out);
  CHECK(out.str().find("a_b__1") != std::string::npos);
}

TEST_CASE("solution file parsing") {
  std::istringstream ok(
      "Model status\nOptimal\n\n# Primal solution values\nFeasible\nObjective 0.75\n# Columns 2\nx_0_0 1\nlam 0.5\n"
      "# Rows 1\nc 1\n");
  auto s = parse_solution_file(ok);
  CHECK(s.status == SolveStatus::kOptimal);
  CHECK(s.objective == 0.75);
  CHECK(s.values.at("lam") == 0.5);
  std::istringstream inf("Model status\nInfeasible\n\n# Primal solution values\nNone\n");
  CHECK(parse_solution_file(inf).status == SolveStatus::kInfeasible);
  std::istringstream tl("Model status\nTime limit reached\n\n# Primal solution values\nNone\n");
  CHECK(parse_solution_file(tl).status == SolveStatus::kTimeLimit);
  std::istringstream junk("nothing here\n");
  CHECK_THROWS(parse_solution_file(junk));
  std::istringstream odd("Model status\nUnbounded\n");
  CHECK_THROWS_WITH(parse_solution_file(odd), "solver reported status 'Unbounded'");
}

TEST_CASE("backend names") {
  CHECK(backend_from_string("enumeration") == Backend::kEnumeration);
  CHECK(backend_from_string("external") == Backend::kExternal);
  CHECK(backend_from_string("auto") == Backend::kAuto);
  CHECK(to_string(Backend::kExternal) == "external");
  CHECK_THROWS(backend_from_string("gurobi"));
  CHECK(to_string(SolveStatus::kGapLimit) == "gap-limit");
  CHECK(to_string(CutKind::kSymmetryEnhanced) == "symmetry-enhanced");
}

TEST_CASE("auto backend picks enumeration for small spaces") {
  auto inst = oracle::random_instance(2, 2, 3, 10, 3, 15);
  auto m = build_static_ra(inst, iota_batch(10), 0.1);
  auto sol = solve(m, Backend::kAuto, {}, {}, "false");
  CHECK(sol.status == SolveStatus::kOptimal);
  CHECK(sol.log.rfind("enumeration", 0) == 0);
  EnumerationOptions tiny;
  tiny.budget = 5;
  CHECK_THROWS_AS(solve(m, Backend::kAuto, {}, tiny, "false"), std::runtime_error);
}
