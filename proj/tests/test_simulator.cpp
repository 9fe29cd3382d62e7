#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "rsmf/errors.hpp"
#include "rsmf/simulator.hpp"
#include "test_support.hpp"

using namespace rsmf;
using rsmf::testing::two_state;

namespace {

// Asymptotic two-sample Kolmogorov-Smirnov p-value.
double ks_pvalue(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double D = 0.0;
  while (i < a.size() && j < b.size()) {
    const double t = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= t) ++i;
    while (j < b.size() && b[j] <= t) ++j;
    D = std::max(D, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  const double ne = static_cast<double>(a.size()) * b.size() / (a.size() + b.size());
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * D;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

Policy constant_policy(const SimplexGrid& grid, const CostModel& model, std::vector<double> rates) {
  Policy p = nominal_policy(grid, model);
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (std::size_t e = 0; e < p.num_edges; ++e)
      if (grid.neighbor(i, e) != kOutOfLattice) p.q[i * p.num_edges + e] = p.u[i * p.num_edges + e] = rates[e];
  return p;
}

}  // namespace

TEST_CASE("trial streams are keyed by seed and trial") {
  auto a = trial_rng(7, 3), b = trial_rng(7, 3), c = trial_rng(7, 4), d = trial_rng(8, 3);
  const auto x = a();
  CHECK(x == b());
  CHECK(x != c());
  CHECK(x != d());
}

TEST_CASE("pairwise sum and rounding helpers") {
  std::vector<double> v(1000, 0.1);
  CHECK(pairwise_sum(v) == doctest::Approx(100.0).epsilon(1e-14));
  CHECK(round_to_lattice(std::vector<double>{0.5, 0.5}, 3) == std::vector<int>{2, 1});
  CHECK(round_to_lattice(std::vector<double>{0.2, 0.3, 0.5}, 10) == std::vector<int>{2, 3, 5});
  const auto k = round_to_lattice(std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3}, 16);
  CHECK(k[0] + k[1] + k[2] == 16);
}

TEST_CASE("start inside the target") {
  CostModel model = two_state(PowerFamily{1, 1});
  SimplexGrid grid(4, model.edges());
  TargetSet target(grid, HalfSpace{0, 0.75, true});
  PolicyTables tab(grid, target, model, nominal_policy(grid, model), RateMode::q);
  const auto p = simulate_meanfield(tab, 0, 1, 0, 100.0, true);
  CHECK(p.exit_time == 0.0);
  CHECK(p.jumps == 0);
  CHECK(p.additive_cost == 0.0);
  MonteCarloOptions mc;
  mc.trials = 50;
  const auto j = estimate_J(tab, 0, mc);
  CHECK(j.estimate == 0.0);
  CHECK(j.stderr_ == 0.0);
  const auto i = estimate_I(tab, 0, mc);
  CHECK(i.estimate == 1.0);
}

TEST_CASE("single edge exit time is exponential") {
  CostModel model = two_state(PowerFamily{1, 1});
  SimplexGrid grid(1, model.edges());
  TargetSet target(grid, HalfSpace{1, 1.0, true});
  const double q = 2.5;
  PolicyTables tab(grid, target, model, constant_policy(grid, model, {q, 1.0}), RateMode::q);
  std::vector<double> times;
  for (std::size_t k = 0; k < 10000; ++k) times.push_back(simulate_meanfield(tab, 0, 42, k, 1e9).exit_time);
  const double mean = pairwise_sum(times) / times.size();
  double var = 0.0;
  for (double t : times) var += (t - mean) * (t - mean);
  const double se = std::sqrt(var / (times.size() - 1) / times.size());
  CHECK(std::abs(mean - 1.0 / q) <= 3.0 * se);
}

TEST_CASE("recorded paths: lattice steps and cost recomputation") {
  CostModel model = rsmf::testing::three_state_complete(PowerFamily{1, 2});
  SimplexGrid grid(6, model.edges());
  TargetSet target(grid, Ball{{0.0, 0.0, 1.0}, 0.3});
  const auto solved = solve_V(grid, target, model);
  PolicyTables tab(grid, target, model, solved.policy, RateMode::q);
  const std::size_t m0 = grid.index(std::vector<int>{4, 1, 1});
  for (std::uint64_t k = 0; k < 50; ++k) {
    const auto p = simulate_meanfield(tab, m0, 9, k, 1e6, true);
    REQUIRE(p.states.size() == p.jumps + 1);
    double recomputed = 0.0, prev = 0.0;
    for (std::size_t s = 0; s < p.jumps; ++s) {
      CHECK(grid.neighbor(p.states[s], static_cast<std::size_t>(p.fired[s])) ==
            static_cast<std::int64_t>(p.states[s + 1]));
      CHECK(tab.rate(p.states[s], static_cast<std::size_t>(p.fired[s])) > 0.0);
      recomputed += (p.times[s] - prev) * tab.additive_rate(p.states[s]);
      prev = p.times[s];
    }
    CHECK_FALSE(p.censored);
    CHECK(target.contains(p.states.back()));
    CHECK(p.additive_cost == doctest::Approx(recomputed).epsilon(1e-12));
    const auto again = simulate_meanfield(tab, m0, 9, k, 1e6, true);
    CHECK(again.times == p.times);
    CHECK(again.additive_cost == p.additive_cost);
  }
}

TEST_CASE("estimators are independent of the worker count") {
  CostModel model = two_state(PowerFamily{1, 1});
  SimplexGrid grid(4, model.edges());
  TargetSet target(grid, HalfSpace{0, 0.75, true});
  PolicyTables tab(grid, target, model, nominal_policy(grid, model), RateMode::q);
  MonteCarloOptions a;
  a.trials = 2000;
  a.workers = 1;
  MonteCarloOptions b = a;
  b.workers = 5;
  const auto ra = estimate_J(tab, 2, a), rb = estimate_J(tab, 2, b);
  CHECK(ra.estimate == rb.estimate);
  CHECK(ra.stderr_ == rb.stderr_);
}

TEST_CASE("Monte Carlo consistency with the solver") {
  CostModel model = two_state(PowerFamily{1, 1});
  SimplexGrid grid(4, model.edges());
  TargetSet target(grid, HalfSpace{0, 0.75, true});
  const auto solved = solve_V(grid, target, model);
  const std::size_t m0 = grid.index(std::vector<int>{2, 2});
  const double V = solved.field.values[m0];
  MonteCarloOptions mc;
  mc.trials = 10000;
  mc.seed = 2024;

  PolicyTables q_tab(grid, target, model, solved.policy, RateMode::q);
  const auto J = estimate_J(q_tab, m0, mc);
  CHECK(J.censored == 0);
  CHECK(std::abs(J.estimate - V) <= 3.0 * J.stderr_);

  PolicyTables nom(grid, target, model, nominal_policy(grid, model), RateMode::q);
  const auto Jn = estimate_J(nom, m0, mc);
  CHECK(Jn.estimate >= V - 3.0 * Jn.stderr_);

  PolicyTables u_tab(grid, target, model, solved.policy, RateMode::u);
  const auto I = estimate_I(u_tab, m0, mc);
  // Delta method: sd of -(1/n) log I is about relative_stderr / n.
  CHECK(std::abs(I.scaled_log - V) <= 3.0 * I.relative_stderr / grid.n());
}

TEST_CASE("risk-sensitive estimate is exactly one without cost") {
  CostModel model = two_state(PowerFamily{1, 1}, 1.0, 1.0, RewardSpec(ConstantReward{0.0}));
  SimplexGrid grid(4, model.edges());
  TargetSet target(grid, HalfSpace{0, 0.75, true});
  PolicyTables tab(grid, target, model, nominal_policy(grid, model), RateMode::u);
  MonteCarloOptions mc;
  mc.trials = 500;
  const auto I = estimate_I(tab, 4, mc);
  CHECK(I.estimate == 1.0);
  CHECK(I.log_estimate == 0.0);
}

TEST_CASE("censoring and stuck states") {
  CostModel model = two_state(PowerFamily{1, 1});
  SimplexGrid grid(4, model.edges());
  TargetSet target(grid, HalfSpace{0, 0.75, true});
  PolicyTables tab(grid, target, model, nominal_policy(grid, model), RateMode::q);
  MonteCarloOptions mc;
  mc.trials = 100;
  mc.t_max = 1e-9;
  CHECK_THROWS_AS(estimate_J(tab, 4, mc), EstimationError);
  const double horizon = pilot_t_max(tab, 4, 3);
  CHECK(horizon > 0.0);
  mc.t_max = horizon;
  mc.trials = 10000;
  const auto r = estimate_J(tab, 4, mc);
  CHECK(r.censored <= r.trials / 100);
  // a pilot that cannot finish must fail instead of running on
  CHECK_THROWS_AS(pilot_t_max(tab, 4, 3, 50.0, 20, 1e-9), CapacityError);

  Policy frozen = constant_policy(grid, model, {0.0, 0.0});
  PolicyTables stuck(grid, target, model, frozen, RateMode::q);
  CHECK_THROWS_AS(simulate_meanfield(stuck, 4, 1, 0, 10.0), StuckStateError);
}

TEST_CASE("agent simulator matches the mean-field simulator for one agent") {
  CostModel model = rsmf::testing::three_state_complete(PowerFamily{1, 1});
  SimplexGrid grid(1, model.edges());
  TargetSet target(grid, ExplicitList{{grid.index(std::vector<int>{0, 0, 1})}});
  const Policy nominal = nominal_policy(grid, model);
  PolicyTables tab(grid, target, model, nominal, RateMode::q);
  const ProductPredicate in_two = [](const AgentConfig& c) { return c.states[0] == 2; };
  const AgentPolicy agent = exchangeable_policy(grid, nominal);
  std::vector<double> mf, ag;
  for (std::size_t k = 0; k < 10000; ++k) {
    mf.push_back(simulate_meanfield(tab, grid.index(std::vector<int>{1, 0, 0}), 11, k, 1e9).exit_time);
    ag.push_back(simulate_agents(model, agent, in_two, AgentConfig{{0}}, 12, k, 1e9).exit_time);
  }
  CHECK(ks_pvalue(mf, ag) > 0.01);
}

TEST_CASE("agent simulator under an exchangeable policy") {
  CostModel model = two_state(PowerFamily{1, 1}, 0.7, 1.3);
  SimplexGrid grid(3, model.edges());
  TargetSet target(grid, HalfSpace{1, 1.0, true});
  const auto solved = solve_V(grid, target, model);
  PolicyTables tab(grid, target, model, solved.policy, RateMode::q);
  const AgentPolicy agent = exchangeable_policy(grid, solved.policy);
  const ProductPredicate all_one = [](const AgentConfig& c) {
    return std::all_of(c.states.begin(), c.states.end(), [](int s) { return s == 1; });
  };
  std::vector<double> mf, ag, ag_cost;
  for (std::size_t k = 0; k < 5000; ++k) {
    mf.push_back(simulate_meanfield(tab, 0, 21, k, 1e9).exit_time);
    const auto p = simulate_agents(model, agent, all_one, AgentConfig{{0, 0, 0}}, 22, k, 1e9);
    ag.push_back(p.exit_time);
    ag_cost.push_back(p.additive_cost);
    for (std::size_t s = 1; s < p.counts.size(); ++s) CHECK(grid.index(p.counts[s]) < grid.size());
  }
  const auto stats = [](const std::vector<double>& v) {
    const double m = pairwise_sum(v) / v.size();
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::pair{m, std::sqrt(s / (v.size() - 1) / v.size())};
  };
  const auto [m1, s1] = stats(mf);
  const auto [m2, s2] = stats(ag);
  CHECK(std::abs(m1 - m2) <= 3.0 * std::hypot(s1, s2));
  const auto [c, sc] = stats(ag_cost);
  CHECK(std::abs(c - solved.field.values[0]) <= 3.0 * sc);

  const auto immediate = simulate_agents(model, agent, all_one, AgentConfig{{1, 1, 1}}, 1, 0, 10.0);
  CHECK(immediate.exit_time == 0.0);
  CHECK(immediate.moves.empty());
}

TEST_CASE("nominal flow matches the two-state relaxation") {
  CostModel model = two_state(PowerFamily{1, 1}, 0.8, 1.7);
  const std::vector<double> m0{0.9, 0.1};
  const double T = 2.0;
  const std::size_t steps = 2000;  // h = 1e-3
  const auto flow = nominal_flow(model, m0, T, steps);
  const double s = 0.8 + 1.7, eq = 1.7 / s;
  for (std::size_t j = 0; j <= steps; j += 100) {
    const double t = T * j / steps;
    CHECK(std::abs(flow[j][0] - (eq + (m0[0] - eq) * std::exp(-s * t))) <= 1e-8);
    CHECK(flow[j][0] + flow[j][1] == doctest::Approx(1.0).epsilon(1e-13));
  }
}

TEST_CASE("law of large numbers deviation shrinks") {
  CostModel model = two_state(PowerFamily{1, 1}, 1.0, 2.0);
  const std::vector<int> ns{16, 64, 256};
  const auto r = lln_experiment(model, std::vector<double>{0.5, 0.5}, 2.0, ns, 300, 5, 0, 4000);
  REQUIRE(r.rows.size() == 3);
  CHECK(r.rows[0].median > r.rows[1].median);
  CHECK(r.rows[1].median > r.rows[2].median);
  for (const auto& row : r.rows) CHECK(row.p90 >= row.median);
  CHECK(r.slope < -0.3);
  CHECK(r.slope > -0.7);
}
