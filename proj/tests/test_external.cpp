// Cross-checks against the external MILP solver. Exits with 77 (skipped)
// when the solver command is not usable.
#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "atm/milp.hpp"
#include "oracles.hpp"

using namespace atm;

namespace {

std::vector<int> iota_batch(int n) {
  std::vector<int> b(n);
  std::iota(b.begin(), b.end(), 0);
  return b;
}

SolveLimits exact() {
  SolveLimits l;
  l.abs_gap = 1e-9;
  l.time_limit = 60;
  return l;
}

}  // namespace

TEST_CASE("external solver agrees with enumeration on small static instances") {
  for (int seed = 0; seed < 40; ++seed) {
    const bool ra = seed % 2 == 0;
    auto inst = oracle::random_instance(2, 2, 3, 10, 2 + seed % 2, 900 + seed);
    auto model = ra ? build_static_ra(inst, iota_batch(10), 0.1) : build_static_rn(inst, iota_batch(10));
    auto ext = solve(model, Backend::kExternal, exact());
    auto en = solve(model, Backend::kEnumeration);
    REQUIRE(ext.status == SolveStatus::kOptimal);
    CHECK(std::abs(ext.objective - en.objective) <= 1e-6);
    // the plan it returns scores its reported value
    auto vals = oracle::plan_values(ext.choice, inst);
    CHECK(std::abs(oracle::cvar_sorted(vals, ra ? 0.1 : 1.0) - ext.objective) <= 1e-6);
  }
}

TEST_CASE("external solver agrees with enumeration on small dynamic instances") {
  for (int seed = 0; seed < 10; ++seed) {
    auto inst = oracle::random_instance(2, 2, 3, 10, 3, 950 + seed);
    auto model = build_dynamic_ra(inst, iota_batch(10), 0.1);
    auto ext = solve(model, Backend::kExternal, exact());
    auto en = solve(model, Backend::kEnumeration);
    REQUIRE(ext.status == SolveStatus::kOptimal);
    CHECK(std::abs(ext.objective - en.objective) <= 1e-6);
  }
}

TEST_CASE("LP with the plan pinned returns the empirical CVaR") {
  for (int seed = 0; seed < 5; ++seed) {
    auto inst = oracle::random_instance(2, 3, 3, 10, 3, 970 + seed);
    auto model = build_static_ra(inst, iota_batch(10), 0.1);
    const std::vector<int> plan{seed % 4, (seed + 1) % 4, (seed + 2) % 4};
    for (int n = 0; n < 3; ++n)
      for (int k = 0; k < 4; ++k) {
        auto& v = model.variables()[model.at(MilpModel::selection_tag(SelectionSpace::kStatic, n, k))];
        v.lower = v.upper = k == plan[n] ? 1.0 : 0.0;
      }
    auto ext = solve(model, Backend::kExternal, exact());
    REQUIRE(ext.status == SolveStatus::kOptimal);
    CHECK(std::abs(ext.objective - oracle::cvar_sorted(oracle::plan_values(plan, inst), 0.1)) <= 1e-9);
  }
}

TEST_CASE("cuts and infeasibility through the external solver") {
  auto inst = oracle::random_instance(2, 1, 3, 10, 2, 990);
  auto model = build_static_ra(inst, iota_batch(10), 0.1);
  std::vector<Cut> all;
  oracle::for_each_product(oracle::full_lists(2, 2), [&](const std::vector<int>& p) {
    Cut c;
    for (int n = 0; n < 2; ++n) c.terms.push_back({n, p[n], 1.0});
    c.rhs = 1;
    all.push_back(c);
  });
  auto three = add_cuts(model, {all.begin(), all.end() - 1});
  auto sol = solve(three, Backend::kExternal, exact());
  REQUIRE(sol.status == SolveStatus::kOptimal);
  CHECK(sol.choice == std::vector<int>{1, 1});
  CHECK(solve(add_cuts(model, all), Backend::kExternal, exact()).status == SolveStatus::kInfeasible);
}

TEST_CASE("MPS files load in the external solver unchanged") {
  auto inst = oracle::random_instance(2, 2, 3, 5, 2, 991);
  auto model = build_static_rn(inst, iota_batch(5));
  auto path = std::filesystem::temp_directory_path() / "atm_ext_model.mps";
  write_interchange(model, path);
  const std::string cmd = default_external_command() + " \"" + path.string() + "\" --abs-gap 0 --time-limit 30 --solution \"" +
                          path.string() + ".sol\" > \"" +
                          path.string() + ".log\" 2>&1";
  CHECK(std::system(cmd.c_str()) == 0);
  std::ifstream log(path.string() + ".log");
  std::string text((std::istreambuf_iterator<char>(log)), {});
  CHECK(text.find("status=Optimal") != std::string::npos);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".log");
  std::filesystem::remove(path.string() + ".sol");
}

int main(int argc, char** argv) {
  if (!external_solver_available()) {
    std::printf("external MILP solver not available; skipping\n");
    return 77;
  }
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
