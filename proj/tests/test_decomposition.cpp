#include <doctest.h>

#include <set>
#include <sstream>

#include "atm/decomposition.hpp"
#include "atm/enhancements.hpp"
#include "oracles.hpp"

using namespace atm;

namespace {

DecompositionConfig small_config(int batches, int tau = 5) {
  DecompositionConfig cfg;
  cfg.batches = batches;
  cfg.alpha = 0.1;
  cfg.epsilon = 0.01;
  cfg.max_iterations = tau;
  cfg.backend = Backend::kEnumeration;
  return cfg;
}

std::string history_text(const DecompositionResult& r) {
  std::ostringstream s;
  write_history(s, r.history, true, false);
  return s.str();
}

// Checks LB <= z <= UB on every history row and the monotonicity of both bounds.
void check_sandwich(const DecompositionResult& r, double z) {
  double prev_lb = 0.0, prev_ub = 1.0;
  for (const auto& row : r.history) {
    CHECK(row.lb <= z + 1e-12);
    CHECK(row.ub >= z - 1e-12);
    CHECK(row.lb <= row.ub);
    CHECK(row.lb >= prev_lb);
    CHECK(row.ub <= prev_ub + 1e-15);
    prev_lb = row.lb;
    prev_ub = row.ub;
  }
  CHECK(r.lb <= z + 1e-12);
  CHECK(r.ub >= z - 1e-12);
}

}  // namespace

TEST_CASE("equipartition") {
  auto b = equipartition(2000, 40, 0.1);
  REQUIRE(b.size() == 40u);
  std::set<int> seen;
  for (const auto& batch : b) {
    CHECK(batch.size() == 50u);
    for (int h : batch) CHECK(seen.insert(h).second);
  }
  CHECK(seen.size() == 2000u);
  CHECK(*seen.begin() == 0);
  CHECK(b[1].front() == 50);
  auto one = equipartition(30, 1, 0.1);
  CHECK(one.size() == 1u);
  CHECK(one[0].size() == 30u);
  CHECK_THROWS(equipartition(2000, 30, 0.1));
  CHECK_THROWS_WITH(equipartition(200, 8, 0.1),
                    "alpha * |H^p| = 0.1 * 25 = 2.5 is not a positive integer (enable the fractional batch tail)");
  CHECK(equipartition(200, 8, 0.1, TailPolicy::kFractional).size() == 8u);
  CHECK_THROWS(equipartition(10, 0, 0.1));
}

TEST_CASE("balanced regrouping") {
  std::vector<double> vals{0.5, 0.5, 0.8, 0.8, 0.9, 1.0, 1.0, 1.0};
  auto b = regroup_balanced(vals, 2);
  REQUIRE(b.size() == 2u);
  CHECK(b[0] == std::vector<int>{0, 2, 4, 6});
  CHECK(b[1] == std::vector<int>{1, 3, 5, 7});
  auto batch_cvar = [&](const std::vector<int>& idx) {
    std::vector<double> v;
    for (int i : idx) v.push_back(vals[i]);
    return cvar(v, 0.25);
  };
  CHECK(batch_cvar(b[0]) == 0.5);
  CHECK(batch_cvar(b[1]) == 0.5);
  CHECK((batch_cvar(b[0]) + batch_cvar(b[1])) / 2 == 0.5);
  // the contiguous split of the same values is unbalanced
  CHECK((batch_cvar({0, 1, 2, 3}) + batch_cvar({4, 5, 6, 7})) / 2 == doctest::Approx(0.7));

  // unsorted input, rank order goes by value then index
  std::vector<double> shuffled{1.0, 0.5, 0.9, 0.8, 0.5, 1.0, 0.8, 1.0};
  auto s = regroup_balanced(shuffled, 2);
  CHECK(s[0] == std::vector<int>{1, 2, 3, 5});
  CHECK(s[1] == std::vector<int>{0, 4, 6, 7});

  auto single = regroup_balanced(shuffled, 1);
  CHECK(single[0] == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});

  std::vector<double> flat(12, 0.4);
  for (const auto& batch : regroup_balanced(flat, 3)) {
    std::vector<double> v(batch.size(), 0.4);
    CHECK(cvar(v, 0.25) == 0.4);
  }
}

TEST_CASE("bounds from batch solutions") {
  auto inst = oracle::random_instance(2, 2, 3, 20, 2, 31);
  ObjectiveCache cache(inst, 0.1, SelectionSpace::kStatic);
  auto b = bounds_from_batches({{{0, 1}, 0.9}, {{0, 1}, 0.5}}, cache);
  CHECK(b.ub == doctest::Approx(0.7));
  CHECK(b.incumbent == std::vector<int>{0, 1});
  CHECK(b.lb == doctest::Approx(oracle::cvar_sorted(oracle::plan_values({0, 1}, inst), 0.1)).epsilon(1e-12));
  CHECK(cache.contains({0, 1}));
  CHECK(cache.size() == 1u);

  // equal full-sample values go to the smaller plan
  cache.insert({2, 0}, 0.3);
  cache.insert({1, 2}, 0.3);
  auto tie = bounds_from_batches({{{2, 0}, 0.4}, {{1, 2}, 0.4}}, cache);
  CHECK(tie.incumbent == std::vector<int>{1, 2});
  CHECK_THROWS(bounds_from_batches({}, cache));

  // one batch: both bounds are the batch optimum
  auto inst1 = oracle::random_instance(2, 2, 3, 10, 2, 32);
  ObjectiveCache c1(inst1, 0.1, SelectionSpace::kStatic);
  auto best = oracle::best_plan(inst1, 0.1);
  auto p1 = bounds_from_batches({{best.choice, best.value}}, c1);
  CHECK(p1.lb == doctest::Approx(p1.ub).epsilon(1e-12));
}

TEST_CASE("no-good cuts remove exactly one point") {
  auto c = no_good_cut_static(StaticPlan{{0, 1, 1}});
  CHECK(c.rhs == 2.0);
  CHECK(c.terms == std::vector<SelectionTerm>{{0, 0, 1.0}, {1, 1, 1.0}, {2, 1, 1.0}});
  int removed = 0;
  oracle::for_each_product(oracle::full_lists(3, 3), [&](const std::vector<int>& p) {
    removed += !c.satisfied_by(p);
    if (p == std::vector<int>{0, 1, 1}) CHECK_FALSE(c.satisfied_by(p));
  });
  CHECK(removed == 1);
  auto one = no_good_cut_static(StaticPlan{{2}});
  CHECK(one.rhs == 0.0);
  CHECK_FALSE(one.satisfied_by(std::vector<int>{2}));
  CHECK(one.satisfied_by(std::vector<int>{0}));

  auto d = no_good_cut_dynamic(DynamicPolicy{{1, 0, 0, 1}});
  CHECK(d.terms.size() == 4u);
  CHECK(d.rhs == 3.0);
  CHECK(d.space == SelectionSpace::kDynamic);
  removed = 0;
  std::vector<Cut> all;
  oracle::for_each_product(oracle::full_lists(4, 2), [&](const std::vector<int>& y) {
    removed += !d.satisfied_by(y);
    all.push_back(no_good_cut_dynamic(DynamicPolicy{y}));
  });
  CHECK(removed == 1);
  auto inst = oracle::random_instance(2, 1, 3, 10, 2, 33);
  std::vector<int> batch(10);
  std::iota(batch.begin(), batch.end(), 0);
  CHECK(enumerate_dynamic(inst, batch, 0.1, all).status == SolveStatus::kInfeasible);
  CHECK_THROWS(no_good_cut_static(StaticPlan{}));
}

TEST_CASE("static decomposition with a single batch converges at once") {
  auto inst = oracle::random_instance(2, 2, 3, 20, 3, 34);
  auto r = solve_static(inst, small_config(1));
  auto best = oracle::best_plan(inst, 0.1);
  CHECK(r.iterations == 1);
  CHECK(r.converged);
  CHECK(r.lb == doctest::Approx(best.value).epsilon(1e-12));
  CHECK(r.ub - r.lb <= 1e-12);
  CHECK(r.incumbent == best.choice);
}

TEST_CASE("static decomposition on the desk instance") {
  // a=3, K=3 (two drugs plus the identity), N=4, |H|=200, P=8
  auto inst = oracle::random_instance(3, 2, 4, 200, 4, 35);
  auto cfg = small_config(8, 100);
  cfg.batch_tail = TailPolicy::kFractional;
  auto r = solve_static(inst, cfg);
  auto best = oracle::best_plan(inst, 0.1);
  REQUIRE(r.error.empty());
  CHECK(r.converged);
  CHECK(r.ub - r.lb <= cfg.epsilon);
  CHECK(r.lb >= best.value - cfg.epsilon);
  check_sandwich(r, best.value);
  // LB is the full-sample value of the incumbent
  CHECK(std::abs(oracle::cvar_sorted(oracle::plan_values(r.incumbent, inst), 0.1) - r.lb) <= 1e-9);
}

TEST_CASE("sandwich property on random instances") {
  for (int seed = 0; seed < 12; ++seed) {
    auto inst = oracle::random_instance(2, 3, 3, 40, 3, 100 + seed);
    auto cfg = small_config(4, 5);
    cfg.enhancements.regroup = seed % 2 == 1;
    auto r = solve_static(inst, cfg);
    REQUIRE(r.error.empty());
    const double z = oracle::best_plan(inst, 0.1).value;
    check_sandwich(r, z);
    CHECK(r.iterations <= 5);
    CHECK(std::abs(oracle::cvar_sorted(oracle::plan_values(r.incumbent, inst), 0.1) - r.lb) <= 1e-9);
    // every removed point was scored
    for (const auto& c : r.cuts) {
      if (c.kind != CutKind::kNoGoodStatic) continue;
      std::vector<int> p(3);
      for (const auto& t : c.terms) p[t.slot] = t.antibiotic;
      CHECK(r.evaluated.count(p) == 1u);
      CHECK(r.evaluated.at(p) <= r.lb + 1e-15);
    }
  }
}

TEST_CASE("iteration cap and non-convergence reporting") {
  auto inst = oracle::random_instance(3, 3, 4, 40, 3, 40);
  auto cfg = small_config(4, 1);
  cfg.epsilon = 0.0;
  auto r = solve_static(inst, cfg);
  CHECK(r.iterations == 1);
  for (const auto& row : r.history) CHECK(row.t == 1);
  if (r.ub - r.lb > 0.0) CHECK_FALSE(r.converged);
  cfg.max_iterations = 5;
  auto r5 = solve_static(inst, cfg);
  CHECK(r5.iterations <= 5);
  int max_t = 0;
  for (const auto& row : r5.history) max_t = std::max(max_t, row.t);
  CHECK(max_t == r5.iterations);
  cfg.max_iterations = 0;
  CHECK_THROWS(solve_static(inst, cfg));
}

TEST_CASE("decomposition is deterministic across thread counts") {
  auto inst = oracle::random_instance(3, 3, 4, 80, 3, 41);
  auto cfg = small_config(8, 5);
  cfg.enhancements = ablation_setting(5);
  cfg.enhancements.warm_start = false;
  cfg.batch_tail = TailPolicy::kFractional;
  auto a = solve_static(inst, cfg);
  auto b = solve_static(inst, cfg);
  cfg.threads = 4;
  auto c = solve_static(inst, cfg);
  CHECK(history_text(a) == history_text(b));
  CHECK(history_text(a) == history_text(c));
  CHECK(a.incumbent == c.incumbent);
  CHECK(a.lb == c.lb);
  CHECK(a.ub == c.ub);
}

TEST_CASE("dynamic decomposition") {
  SUBCASE("a=2 K=2 matches the policy oracle") {
    for (int seed = 0; seed < 5; ++seed) {
      auto inst = oracle::random_instance(2, 2, 3, 100, 3, 200 + seed, false);
      auto cfg = small_config(5, 50);
      cfg.epsilon = 1e-9;
      cfg.enhancements.irrelevant = false;
      auto r = solve_dynamic(inst, cfg);
      auto best = oracle::best_policy(inst, 0.1);
      REQUIRE(r.error.empty());
      CHECK(r.lb == doctest::Approx(best.value).epsilon(1e-12));
      check_sandwich(r, best.value);
    }
  }
  SUBCASE("everything pinned by the domains") {
    auto inst = oracle::random_instance(2, 2, 3, 20, 2, 210);
    auto cfg = small_config(2, 5);
    auto r = solve_dynamic(inst, cfg, SlotDomains{{1}, {0}, {2}, {1}});
    CHECK(r.iterations == 1);
    CHECK(r.converged);
    CHECK(r.evaluated.size() == 1u);
    CHECK(r.incumbent == std::vector<int>{1, 0, 2, 1});
  }
  SUBCASE("irrelevant genotypes fixed to the identity keep the optimum") {
    for (int seed = 0; seed < 4; ++seed) {
      // N=2 from 011: every genotype carrying the first allele is off the way
      auto inst = oracle::random_instance(3, 2, 3, 20, 2, 220 + seed, true, 3);
      auto cfg = small_config(2, 50);
      cfg.epsilon = 1e-12;
      auto fixed = solve_dynamic(inst, cfg);
      cfg.enhancements.irrelevant = false;
      auto free = solve_dynamic(inst, cfg);
      CHECK(fixed.fixed == std::map<int, int>{{4, 2}, {5, 2}, {6, 2}, {7, 2}});
      CHECK(free.fixed.empty());
      CHECK(fixed.lb == doctest::Approx(free.lb).epsilon(1e-12));
      CHECK(fixed.lb == doctest::Approx(oracle::best_policy(inst, 0.1).value).epsilon(1e-12));
    }
  }
  SUBCASE("gap at the cap is reported") {
    auto inst = oracle::random_instance(3, 2, 4, 40, 3, 230);
    auto cfg = small_config(4, 1);
    cfg.epsilon = 0.0;
    auto r = solve_dynamic(inst, cfg);
    CHECK(r.iterations == 1);
    CHECK(r.ub >= r.lb);
    CHECK(r.converged == (r.ub - r.lb <= 0.0));
  }
}

TEST_CASE("all batches infeasible closes the gap") {
  auto inst = oracle::random_instance(2, 1, 3, 20, 2, 362, false);
  auto cfg = small_config(2, 10);
  cfg.epsilon = 0.0;
  auto r = solve_static(inst, cfg);
  // one antibiotic: the first cut empties every batch
  CHECK(r.error.empty());
  CHECK(r.converged);
  CHECK(r.lb == r.ub);
  CHECK(r.incumbent == std::vector<int>{0, 0});
  REQUIRE(r.history.size() == 4u);
  CHECK(r.history[2].choice.empty());
  std::ostringstream s;
  write_history(s, r.history);
  CHECK(s.str().find("2,0,infeasible,") != std::string::npos);
}

TEST_CASE("subproblem failures keep the partial history") {
  auto inst = oracle::random_instance(3, 3, 3, 20, 4, 250);
  auto cfg = small_config(2, 5);
  cfg.epsilon = 0.0;
  cfg.enumeration_budget = 300;  // 256 plans fit, so iteration 1 runs
  cfg.backend = Backend::kEnumeration;
  auto r = solve_static(inst, cfg, SlotDomains{{}, {}, {}, {}});
  CHECK(r.error.empty());
  cfg.enumeration_budget = 10;
  auto bad = solve_static(inst, cfg);
  CHECK_FALSE(bad.error.empty());
  CHECK_FALSE(bad.converged);
  CHECK(bad.history.empty());
}

TEST_CASE("history rows") {
  std::vector<IterationRecord> h{{1, 0, {0, 2}, 0.5, 0.25, 0.75, 1.5}, {1, 1, {}, 0.25, 0.25, 0.75, 0.0}};
  std::ostringstream s;
  write_history(s, h);
  CHECK(s.str() == "t,batch,plan,batch_obj,LB,UB,wall_ms\n1,0,0-2,0.5,0.25,0.75,1.500\n1,1,infeasible,0.25,0.25,0.75,0.000\n");
  std::ostringstream bare;
  write_history(bare, h, false, false);
  CHECK(bare.str() == "1,0,0-2,0.5,0.25,0.75\n1,1,infeasible,0.25,0.25,0.75\n");
}

TEST_CASE("ablation settings") {
  auto s0 = ablation_setting(0);
  CHECK_FALSE(s0.cartesian);
  CHECK_FALSE(s0.symmetry);
  CHECK_FALSE(s0.regroup);
  CHECK_FALSE(s0.warm_start);
  auto s5 = ablation_setting(5);
  CHECK((s5.cartesian && s5.symmetry && s5.regroup && s5.warm_start));
  CHECK_FALSE(ablation_setting(1).cartesian);
  CHECK(ablation_setting(1).symmetry);
  CHECK_FALSE(ablation_setting(2).symmetry);
  CHECK_FALSE(ablation_setting(3).regroup);
  CHECK_FALSE(ablation_setting(4).warm_start);
  CHECK_THROWS(ablation_setting(6));
}

TEST_CASE("parallel_for visits every index once and rethrows") {
  std::vector<int> hits(100, 0);
  parallel_for(100, 7, [&](int i) { hits[i] += 1; });
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  CHECK_THROWS_WITH(parallel_for(10, 3, [](int i) { if (i == 4) throw std::runtime_error("boom"); }), "boom");
  parallel_for(0, 4, [](int) { FAIL("called"); });
}
