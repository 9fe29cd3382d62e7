#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "rsmf/errors.hpp"
#include "rsmf/simplex_lattice.hpp"

using namespace rsmf;

namespace {

std::uint64_t choose(int a, int b) {
  double r = 1.0;
  for (int i = 1; i <= b; ++i) r = r * (a - b + i) / i;
  return static_cast<std::uint64_t>(std::llround(r));
}

EdgeSet complete(int d) {
  std::vector<Edge> e;
  for (int x = 0; x < d; ++x)
    for (int y = 0; y < d; ++y)
      if (x != y) e.push_back({x, y});
  return EdgeSet(d, e);
}

}  // namespace

TEST_CASE("enumeration order and sizes") {
  SimplexGrid g(2, 2);
  REQUIRE(g.size() == 3);
  CHECK(g.counts(0)[0] == 2);
  CHECK(g.counts(1)[0] == 1);
  CHECK(g.counts(1)[1] == 1);
  CHECK(g.counts(2)[1] == 2);
  CHECK(SimplexGrid(3, 3).size() == 10);
  SimplexGrid v(1, 4);
  CHECK(v.size() == 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto c = v.counts(i);
    CHECK(std::count(c.begin(), c.end(), 1) == 1);
  }
}

TEST_CASE("point count, round trip and integer sums") {
  for (int d = 2; d <= 5; ++d) {
    for (int n = 1; n <= 12; ++n) {
      SimplexGrid g(n, d);
      CHECK(g.size() == choose(n + d - 1, d - 1));
      CHECK(lattice_size(n, d) == g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const auto c = g.counts(i);
        CHECK(std::accumulate(c.begin(), c.end(), 0) == n);
        CHECK(*std::min_element(c.begin(), c.end()) >= 0);
        CHECK(g.index(c) == i);
      }
    }
  }
}

TEST_CASE("colexicographic order is strict") {
  SimplexGrid g(5, 4);
  for (std::size_t i = 1; i < g.size(); ++i) {
    const auto a = g.counts(i - 1), b = g.counts(i);
    CHECK(std::lexicographical_compare(a.rbegin(), a.rend(), b.rbegin(), b.rend()));
  }
}

TEST_CASE("capacity cap") {
  CHECK_THROWS_AS(SimplexGrid(100, 6, 1000), CapacityError);
  CHECK_THROWS_AS(SimplexGrid(0, 2), ArgumentError);
  CHECK_THROWS_AS(SimplexGrid(3, 1), ArgumentError);
}

TEST_CASE("transitions and neighbor symmetry") {
  SimplexGrid g(2, EdgeSet(2, {{0, 1}, {1, 0}}));
  const std::vector<int> mid{1, 1}, right{0, 2};
  CHECK(g.neighbor(g.index(mid), 0) == static_cast<std::int64_t>(g.index(right)));
  CHECK(g.neighbor(g.index(right), 0) == kOutOfLattice);
  CHECK(g.transition(g.index(right), 0, 1) == kOutOfLattice);

  const EdgeSet edges = complete(3);
  SimplexGrid h(6, edges);
  for (std::size_t i = 0; i < h.size(); ++i) {
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto j = h.neighbor(i, e);
      CHECK(j == h.transition(i, edges[e].from, edges[e].to));
      if (j == kOutOfLattice) {
        CHECK(h.counts(i)[edges[e].from] == 0);
        continue;
      }
      const int rev = edges.index_of(edges[e].to, edges[e].from);
      CHECK(h.neighbor(static_cast<std::size_t>(j), rev) == static_cast<std::int64_t>(i));
    }
  }
}

TEST_CASE("target resolution") {
  SimplexGrid g(4, 2);
  TargetSet half(g, HalfSpace{0, 0.75, true});
  CHECK(half.size() == 2);  // counts (4,0) and (3,1)
  CHECK(half.contains(0));
  CHECK(half.contains(1));
  TargetSet ball(g, Ball{{0.5, 0.5}, 0.2});
  CHECK(ball.size() == 1);
  CHECK(ball.contains(2));
  CHECK_THROWS_AS(TargetSet(g, ExplicitList{}), PreconditionError);
  CHECK_THROWS_AS(TargetSet(g, HalfSpace{0, 1.5, true}), PreconditionError);
  CHECK(TargetSet::contains_point(HalfSpace{1, 0.3, false}, std::vector<double>{0.8, 0.2}).value());
  CHECK_FALSE(TargetSet::contains_point(ExplicitList{{0}}, std::vector<double>{1.0, 0.0}).has_value());
}

TEST_CASE("fattening") {
  SimplexGrid g(4, 2);
  TargetSet k(g, ExplicitList{{0}});
  CHECK(fatten(g, k, 0.0).ordinals() == k.ordinals());
  // Neighbor (3/4, 1/4) is at distance sqrt(2)/4 ~ 0.354.
  CHECK(fatten(g, k, 0.3).ordinals() == std::vector<std::size_t>{0});
  CHECK(fatten(g, k, 0.36).size() == 2);
  CHECK(fatten(g, k, std::sqrt(2.0)).size() == g.size());

  SimplexGrid h(6, 3);
  TargetSet b(h, Ball{{0.2, 0.3, 0.5}, 0.15});
  std::size_t prev = 0;
  for (double delta : {0.0, 0.05, 0.1, 0.2, 0.4, 0.8, 1.5}) {
    const auto f = fatten(h, b, delta);
    CHECK(f.size() >= prev);
    for (std::size_t i : b.ordinals()) CHECK(f.contains(i));
    prev = f.size();
  }
  CHECK(prev == h.size());
}

TEST_CASE("empirical projection") {
  const auto m = project_empirical(AgentConfig{{0, 0, 1}}, 2);
  CHECK(m[0] == doctest::Approx(2.0 / 3));
  CHECK(m[1] == doctest::Approx(1.0 / 3));
  const auto v = project_empirical(AgentConfig{{0, 0, 0, 0}}, 3);
  CHECK(v == std::vector<double>{1.0, 0.0, 0.0});
  CHECK(project_empirical(AgentConfig{{2, 0, 1, 1}}, 3) == project_empirical(AgentConfig{{1, 1, 0, 2}}, 3));
  CHECK_THROWS_AS(empirical_counts(AgentConfig{{0, 3}}, 2), ArgumentError);
}

TEST_CASE("permutation invariance") {
  const ProductPredicate half = [](const AgentConfig& c) {
    return 2 * std::count(c.states.begin(), c.states.end(), 0) >= static_cast<long>(c.states.size());
  };
  const ProductPredicate first = [](const AgentConfig& c) { return c.states[0] == 0; };
  CHECK(check_permutation_invariance(half, 5, 3).invariant);
  const auto bad = check_permutation_invariance(first, 4, 2);
  CHECK_FALSE(bad.invariant);
  CHECK(bad.counterexample.has_value());
  // Exhaustive and sampled verdicts agree on a small instance.
  for (const auto& pred : {half, first}) {
    const auto ex = check_permutation_invariance_exhaustive(pred, 3, 2);
    const auto sa = check_permutation_invariance_sampled(pred, 3, 2, 2000, 5);
    CHECK(ex.exhaustive);
    CHECK(ex.invariant == sa.invariant);
  }
  // Large configuration spaces fall back to sampling.
  const auto big = check_permutation_invariance(half, 30, 3, 500, 3);
  CHECK_FALSE(big.exhaustive);
  CHECK(big.invariant);
}
