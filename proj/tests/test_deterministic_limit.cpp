#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "rsmf/deterministic_limit.hpp"
#include "rsmf/errors.hpp"
#include "test_support.hpp"

using namespace rsmf;
using rsmf::testing::grid_refine_min;
using rsmf::testing::three_state_complete;
using rsmf::testing::two_state;

namespace {

double ell(double q) { return q > 0.0 ? q * std::log(q) - q + 1.0 : 1.0; }

// Transformed cost of the (1, 1) power family at unit nominal rate.
double F11(double q) { return 2.0 * ell(q); }

// Two-state value with unit rates and R = 1: the optimal path is monotone in the first
// coordinate x, so V = int_{x0}^{theta} min_{a, b} running cost / speed dx.
double two_state_oracle(double x0, double theta) {
  const auto integrand = [](double x) {
    const auto over_a = [x](double a) {
      const auto over_b = [x, a](double b) {
        const double speed = (1 - x) * b - x * a;
        if (speed <= 0.0) return 1e300;
        return (x * F11(a) + (1 - x) * F11(b) + 1.0) / speed;
      };
      return grid_refine_min(over_b, 1e-3, 1e3, 400).second;
    };
    return grid_refine_min(over_a, 1e-4, 1e2, 300).second;
  };
  const int k = 20;  // Simpson panels
  const double h = (theta - x0) / k;
  double s = integrand(x0) + integrand(theta);
  for (int i = 1; i < k; ++i) s += (i % 2 ? 4.0 : 2.0) * integrand(x0 + i * h);
  return s * h / 3.0;
}

ControlPath constant_rates(std::vector<double> q) {
  return {{}, [q](double, std::size_t, std::span<double> out) { std::copy(q.begin(), q.end(), out.begin()); }};
}

const TargetKind kUpper = HalfSpace{0, 0.75, true};

}  // namespace

TEST_CASE("zero rates leave the measure in place") {
  const CostModel model = three_state_complete(PowerFamily{1, 1});
  const std::vector<double> m0{0.2, 0.3, 0.5};
  const Trajectory tr = integrate_path(model, m0, constant_rates(std::vector<double>(6, 0.0)), 2.0);
  for (const auto& m : tr.mu)
    for (int x = 0; x < 3; ++x) CHECK(m[x] == doctest::Approx(m0[x]).epsilon(1e-15));
}

TEST_CASE("two-state flow and running cost match the closed form") {
  const CostModel model = two_state(PowerFamily{1, 1});
  const double a = 0.7, b = 1.9, x0 = 0.2, T = 1.5;
  IntegrateOptions o;
  o.h = 1e-3;
  const Trajectory tr = integrate_path(model, std::vector<double>{x0, 1 - x0}, constant_rates({a, b}), T, o);
  const double s = a + b, xs = b / s;
  for (std::size_t i = 0; i < tr.t.size(); ++i) {
    const double x = xs + (x0 - xs) * std::exp(-s * tr.t[i]);
    CHECK(std::abs(tr.mu[i][0] - x) <= 1e-8);
  }
  const double int_x = xs * T + (x0 - xs) * (1 - std::exp(-s * T)) / s;
  const double cost = int_x * F11(a) + (T - int_x) * F11(b) + T;
  CHECK(std::abs(tr.running_cost - cost) <= 1e-8);
}

TEST_CASE("integration stops at the first entry into the target") {
  const CostModel model = two_state(PowerFamily{1, 1});
  // x(t) = 1 - 0.5 e^{-t} with rates (0, 1); x = 0.75 at t = ln 2.
  const Trajectory tr = integrate_path(model, std::vector<double>{0.5, 0.5}, constant_rates({0.0, 1.0}), 5.0,
                                       {1e-3, true, &kUpper, true});
  REQUIRE(tr.exited);
  CHECK(*tr.exit_time == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  CHECK(tr.mu.back()[0] == doctest::Approx(0.75).epsilon(1e-9));
}

TEST_CASE("straight-line control reaches its end point with rates above nominal") {
  const CostModel model = three_state_complete(PowerFamily{1, 1});
  std::mt19937_64 rng(7);
  std::gamma_distribution<double> g(1.0, 1.0);
  const auto draw = [&] {
    std::vector<double> m(3);
    double s = 0;
    for (auto& v : m) s += (v = g(rng) + 1e-3);
    for (auto& v : m) v /= s;
    return m;
  };
  for (int k = 0; k < 100; ++k) {
    const auto m = draw(), mt = draw();
    const StraightLine line = straight_line_control(model, m, mt);
    CHECK(line.residual <= 1e-10);
    IntegrateOptions o;
    o.h = line.duration / 2000;
    o.accumulate_cost = false;
    const Trajectory tr = integrate_path(model, m, line.path(), line.duration, o);
    for (int x = 0; x < 3; ++x) CHECK(std::abs(tr.mu.back()[x] - mt[x]) <= 1e-6);
    double below = 0.0, above = 0.0;
    for (std::size_t i = 0; i < tr.q.size(); ++i) {
      for (std::size_t e = 0; e < 6; ++e) {
        below = std::max(below, model.gamma(e) - tr.q[i][e]);
        above = std::max(above, tr.q[i][e] * tr.mu[i][line.sources[e]] - line.max_flux);
      }
    }
    CHECK(below <= 1e-9);
    CHECK(above <= 1e-9);
    if (k % 10 == 0) CHECK(straight_line_cost(model, line, 1e-2) >= 0.0);
  }
  CHECK_THROWS_AS(straight_line_control(model, std::vector<double>{0.0, 0.5, 0.5}, draw()), PreconditionError);
}

TEST_CASE("trajectory optimization agrees with the one-dimensional value") {
  const CostModel model = two_state(PowerFamily{1, 1});
  const std::vector<double> m0{0.5, 0.5};
  OptimizeOptions opts;
  opts.workers = 2;
  const OptimizeResult r = optimize_V(model, kUpper, m0, opts);
  REQUIRE(r.exited);
  for (const auto& s : r.restarts) CHECK(s.final_objective <= s.initial_objective);

  const double oracle = two_state_oracle(0.5, 0.75);
  CHECK(r.cost >= oracle * (1 - 1e-3));
  CHECK(r.cost <= oracle * 1.02);

  SimplexGrid grid(64, model.edges());
  TargetSet target(grid, kUpper);
  const double lattice = solve_V(grid, target, model).field.values[grid.index(std::vector<int>{32, 32})];
  CHECK(std::abs(r.cost - lattice) <= 0.05 * lattice);

  SUBCASE("refining a solution never makes it worse") {
    OptimizeOptions fine = opts;
    fine.segments = 16;
    fine.random_restarts = 0;
    fine.warm_start = r.control;
    CHECK(optimize_V(model, kUpper, m0, fine).cost <= r.cost + 1e-9);
  }
}

TEST_CASE("starting inside the target costs nothing") {
  const CostModel model = two_state(PowerFamily{1, 1});
  const OptimizeResult r = optimize_V(model, kUpper, std::vector<double>{0.8, 0.2});
  CHECK(r.exited);
  CHECK(r.cost == 0.0);
}

TEST_CASE("value vanishes continuously at the target boundary") {
  const CostModel model = three_state_complete(PowerFamily{1, 1});
  const TargetKind ball = Ball{{0.6, 0.2, 0.2}, 0.1};
  OptimizeOptions opts;
  opts.random_restarts = 1;
  std::vector<double> values;
  for (double dist : {0.2, 0.1, 0.05}) {
    // Move from the ball along (-1, 1, 0) / sqrt 2.
    const double r = 0.1 + dist;
    const std::vector<double> m{0.6 - r / std::sqrt(2.0), 0.2 + r / std::sqrt(2.0), 0.2};
    values.push_back(optimize_V(model, ball, m, opts).cost);
  }
  CHECK(values[0] > values[1]);
  CHECK(values[1] > values[2]);
  CHECK(values[2] < 0.6 * values[0]);
}

TEST_CASE("tracking the optimal path recovers the deterministic cost") {
  const CostModel model = two_state(PowerFamily{1, 1});
  OptimizeOptions opts;
  opts.random_restarts = 1;
  const std::vector<int> ns{32, 256};
  const TrackingResult t = tracking_experiment(model, kUpper, std::vector<double>{0.5, 0.5}, ns, 0.1, 400, 3, opts);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[1].tube_exit_fraction <= t.rows[0].tube_exit_fraction);
  CHECK(t.rows[1].tube_exit_fraction <= 0.1);
  CHECK(std::abs(t.rows[1].cost - t.deterministic_cost) <= 0.1 * t.deterministic_cost);
}

TEST_CASE("lattice values approach the deterministic limit") {
  const CostModel model = two_state(PowerFamily{1, 1});
  OptimizeOptions opts;
  opts.segments = 12;
  opts.random_restarts = 1;
  const std::vector<int> ns{4, 8, 16, 32};
  const ConvergenceResult c = convergence_study(model, kUpper, ns, opts);
  REQUIRE(c.rows.size() == 4);
  CHECK(c.decreasing);
  CHECK(c.final_over_initial <= 0.5);

  SUBCASE("whole simplex as target") {
    const ConvergenceResult all = convergence_study(model, HalfSpace{0, 0.0, true}, ns, opts);
    for (const auto& row : all.rows) CHECK(row.gap == 0.0);
  }
  SUBCASE("costs failing the growth gate are refused") {
    CHECK_THROWS_AS(convergence_study(two_state(LogCost{}), kUpper, ns, opts), PreconditionError);
  }
  SUBCASE("grid sizes must nest") {
    const std::vector<int> bad{4, 6};
    CHECK_THROWS_AS(convergence_study(model, kUpper, bad, opts), ArgumentError);
  }
}

TEST_CASE("straight-line cost shrinks with the distance covered") {
  const CostModel model = three_state_complete(PowerFamily{1, 1});
  const std::vector<double> m_tilde{0.5, 0.3, 0.2};
  std::vector<double> costs;
  for (double dist : {0.2, 0.1, 0.05}) {
    const std::vector<double> m{0.5 - dist / std::sqrt(2.0), 0.3 + dist / std::sqrt(2.0), 0.2};
    costs.push_back(straight_line_cost(model, straight_line_control(model, m, m_tilde), 1e-3));
  }
  CHECK(costs[0] > costs[1]);
  CHECK(costs[1] > costs[2]);

  const StraightLine same = straight_line_control(model, m_tilde, m_tilde);
  CHECK(same.duration == 0.0);
  CHECK(straight_line_cost(model, same) == 0.0);
}

TEST_CASE("a tube wider than the simplex never reverts") {
  const CostModel model = two_state(PowerFamily{1, 1});
  OptimizeOptions opts;
  opts.random_restarts = 0;
  const std::vector<int> ns{16};
  const TrackingResult t = tracking_experiment(model, kUpper, std::vector<double>{0.5, 0.5}, ns, 2.0, 200, 5, opts);
  CHECK(t.rows[0].tube_exit_fraction == 0.0);
}
