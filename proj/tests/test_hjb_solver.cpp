#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "rsmf/errors.hpp"
#include "rsmf/hjb_solver.hpp"
#include "test_support.hpp"

using namespace rsmf;
using rsmf::testing::two_state;

namespace {

struct Instance {
  CostModel model;
  SimplexGrid grid;
  TargetSet target;
};

Instance half_space_instance(int n, const CostSpec& cost = PowerFamily{1, 1}) {
  CostModel model = two_state(cost);
  SimplexGrid grid(n, model.edges());
  TargetSet target(grid, HalfSpace{0, 0.75, true});
  return {std::move(model), std::move(grid), std::move(target)};
}

double bisect(const std::function<double(double)>& f, double lo, double hi) {
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("single agent chain matches the scalar equation") {
  // One free state (1, 0); the only active edge jumps into the target, so
  // gamma C*(1 - e^V) + R = 0 with C*(z) = 2 - 2 sqrt(1 - z) for this cost.
  CostModel model = two_state(PowerFamily{1, 1}, 1.0, 1.0, RewardSpec(ConstantReward{1.0}));
  SimplexGrid grid(1, model.edges());
  TargetSet target(grid, HalfSpace{1, 1.0, true});
  const auto r = solve_V(grid, target, model);
  // The left side decreases in v, so bisect its negation.
  const double root = bisect([](double v) { return -(2.0 - 2.0 * std::exp(0.5 * v) + 1.0); }, 0.0, 10.0);
  CHECK(r.field.values[0] == doctest::Approx(root).epsilon(1e-9));
  CHECK(r.field.values[0] == doctest::Approx(2.0 * std::log(1.5)).epsilon(1e-9));
  CHECK(r.field.values[1] == 0.0);
  const auto w = solve_W(grid, target, model);
  CHECK(-w.field.log_values[0] == doctest::Approx(root).epsilon(1e-9));
}

TEST_CASE("acceptance instance: residual, bounds and equivalence") {
  auto inst = half_space_instance(4);
  std::vector<double> prev(inst.grid.size(), 0.0);
  bool monotone = true;
  SolveVOptions opts;
  opts.on_sweep = [&](const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) monotone = monotone && v[i] >= prev[i] - 1e-13;
    prev = v;
  };
  const auto r = solve_V(inst.grid, inst.target, inst.model, opts);
  CHECK(monotone);
  CHECK(r.stats.clamped_states.empty());
  CHECK(r.stats.residual_sup <= 1e-6);
  for (std::size_t i : inst.target.ordinals()) CHECK(r.field.values[i] == 0.0);
  for (double v : r.field.values) CHECK(v >= 0.0);

  const auto res = residual_V(inst.grid, inst.target, inst.model, r.field.values);
  CHECK(res.sup <= 1e-6);

  // Nominal policy gives an upper bound.
  const auto nominal = evaluate_policy(inst.grid, inst.target, inst.model, nominal_policy(inst.grid, inst.model));
  for (std::size_t i = 0; i < nominal.size(); ++i) CHECK(r.field.values[i] <= nominal[i] + 1e-10);

  // The extracted policy reproduces V by a linear solve.
  const auto own = evaluate_policy(inst.grid, inst.target, inst.model, r.policy);
  for (std::size_t i = 0; i < own.size(); ++i) CHECK(own[i] == doctest::Approx(r.field.values[i]).epsilon(1e-8));

  const auto w = solve_W(inst.grid, inst.target, inst.model);
  double gap = 0.0;
  for (std::size_t i = 0; i < inst.grid.size(); ++i) {
    CHECK(w.field.values[i] > 0.0);
    CHECK(w.field.values[i] <= 1.0);
    gap = std::max(gap, std::abs(r.field.values[i] + w.field.log_values[i] / inst.grid.n()));
  }
  CHECK(gap <= 1e-5);

  // W transformed back to a V-type field solves the V equation.
  std::vector<double> from_w(inst.grid.size());
  for (std::size_t i = 0; i < from_w.size(); ++i) from_w[i] = -w.field.log_values[i] / inst.grid.n();
  CHECK(residual_V(inst.grid, inst.target, inst.model, from_w).sup <= 1e-6);
}

TEST_CASE("perturbation moves the residual in the monotone direction") {
  auto inst = half_space_instance(8);
  const auto r = solve_V(inst.grid, inst.target, inst.model);
  std::size_t i = 0;
  while (inst.target.contains(i)) ++i;
  ++i;  // an interior state with two active edges
  REQUIRE_FALSE(inst.target.contains(i));
  auto v = r.field.values;
  v[i] += 1e-3;
  const auto res = residual_V(inst.grid, inst.target, inst.model, v);
  CHECK(res.per_state[i] < -1e-6);
  const auto g = discrete_gradient(inst.grid, v, i);
  for (std::size_t e = 0; e < g.size(); ++e) {
    const auto j = inst.grid.neighbor(i, e);
    if (j == kOutOfLattice || inst.target.contains(static_cast<std::size_t>(j))) continue;
    CHECK(res.per_state[static_cast<std::size_t>(j)] > 1e-6);
  }
}

TEST_CASE("discrete gradient antisymmetry") {
  auto inst = half_space_instance(6);
  const auto r = solve_V(inst.grid, inst.target, inst.model);
  for (std::size_t i = 0; i < inst.grid.size(); ++i) {
    const auto g = discrete_gradient(inst.grid, r.field.values, i);
    for (std::size_t e = 0; e < g.size(); ++e) {
      if (!g[e]) continue;
      const auto j = static_cast<std::size_t>(inst.grid.neighbor(i, e));
      const int rev = inst.model.edges().index_of(inst.model.edges()[e].to, inst.model.edges()[e].from);
      CHECK(*g[e] == doctest::Approx(-*discrete_gradient(inst.grid, r.field.values, j)[rev]));
    }
  }
}

TEST_CASE("policy extraction") {
  auto inst = half_space_instance(4);
  const auto r = solve_V(inst.grid, inst.target, inst.model);
  for (std::size_t i = 0; i < inst.grid.size(); ++i) {
    const auto g = discrete_gradient(inst.grid, r.field.values, i);
    for (std::size_t e = 0; e < 2; ++e) {
      if (!g[e]) {
        CHECK(r.policy.rate(i, e) == 0.0);
        continue;
      }
      if (inst.target.contains(i)) {
        CHECK(r.policy.rate(i, e) == inst.model.gamma(e));
        continue;
      }
      const auto pair = optimal_pair(inst.model, e, *g[e]);
      CHECK(r.policy.rate(i, e) == doctest::Approx(pair.q).epsilon(1e-10));
      CHECK(r.policy.u_rate(i, e) == doctest::Approx(pair.u).epsilon(1e-10));
    }
  }
  // A flat field gives nominal rates.
  std::vector<double> flat(inst.grid.size(), 0.0);
  const auto p = extract_policy(inst.grid, inst.target, inst.model, flat, ControlBox::defaults(inst.model));
  CHECK(p.rate(2, 0) == doctest::Approx(1.0));
}

TEST_CASE("three-state ball target equivalence") {
  CostModel model = rsmf::testing::three_state_complete(PowerFamily{2, 2}, RewardSpec(AffineReward{{0.5, 1.0, 1.5}, 0.2}));
  SimplexGrid grid(6, model.edges());
  TargetSet target(grid, Ball{{0.1, 0.1, 0.8}, 0.25});
  const auto v = solve_V(grid, target, model);
  const auto w = solve_W(grid, target, model);
  CHECK(v.stats.residual_sup <= 1e-6);
  double gap = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i)
    gap = std::max(gap, std::abs(v.field.values[i] + w.field.log_values[i] / grid.n()));
  CHECK(gap <= 1e-5);
}

TEST_CASE("degenerate whole-grid target") {
  CostModel model = two_state(PowerFamily{1, 1}, 1.0, 1.0, RewardSpec(ConstantReward{0.0}));
  SimplexGrid grid(5, model.edges());
  TargetSet all(grid, HalfSpace{0, 0.0, true});
  const auto w = solve_W(grid, all, model);
  for (double x : w.field.values) CHECK(x == 1.0);
  const auto v = solve_V(grid, all, model);
  for (double x : v.field.values) CHECK(x == 0.0);
}

TEST_CASE("zero reward off the target is reported") {
  CostModel model = two_state(PowerFamily{1, 1}, 1.0, 1.0, RewardSpec(AffineReward{{1.0, 0.0}, 0.0}));
  SimplexGrid grid(3, model.edges());
  TargetSet target(grid, HalfSpace{0, 2.0 / 3, true});
  const auto v = solve_V(grid, target, model);
  CHECK_FALSE(v.stats.warnings.empty());
}

TEST_CASE("bad box and iteration limit") {
  auto inst = half_space_instance(4);
  SolveVOptions bad;
  bad.box = ControlBox{2.0, 10.0};
  CHECK_THROWS_AS(solve_V(inst.grid, inst.target, inst.model, bad), ArgumentError);
  SolveVOptions short_run;
  short_run.max_sweeps = 1;
  short_run.tol = 1e-30;
  CHECK_THROWS_AS(solve_V(inst.grid, inst.target, inst.model, short_run), IterationLimitError);
}

TEST_CASE("product space agrees with the lattice") {
  CostModel model = two_state(PowerFamily{1, 1});
  const ProductPredicate all_in_one = [](const AgentConfig& c) {
    return std::all_of(c.states.begin(), c.states.end(), [](int s) { return s == 1; });
  };
  SimplexGrid grid(3, model.edges());
  TargetSet target(grid, HalfSpace{1, 1.0, true});
  const auto lattice = solve_V(grid, target, model);
  const auto prod = solve_product_space(3, model, all_in_one);
  REQUIRE(prod.values.size() == 8);
  double gap = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    const AgentConfig x = product_config(i, 3, 2);
    const auto k = empirical_counts(x, 2);
    gap = std::max(gap, std::abs(prod.values[i] - lattice.field.values[grid.index(k)]));
    for (std::size_t j = 0; j < 8; ++j) {
      if (empirical_counts(product_config(j, 3, 2), 2) == k)
        CHECK(prod.values[i] == doctest::Approx(prod.values[j]).epsilon(1e-12));
    }
  }
  CHECK(gap <= 1e-5);

  SimplexGrid g1(1, model.edges());
  TargetSet t1(g1, HalfSpace{1, 1.0, true});
  const auto l1 = solve_V(g1, t1, model);
  const auto p1 = solve_product_space(1, model, all_in_one);
  CHECK(p1.values[0] == l1.field.values[g1.index(std::vector<int>{1, 0})]);

  const ProductPredicate first_agent = [](const AgentConfig& c) { return c.states[0] == 1; };
  CHECK_THROWS_AS(solve_product_space(3, model, first_agent), PreconditionError);
  CHECK_THROWS_AS(solve_product_space(20, model, all_in_one), CapacityError);
}
