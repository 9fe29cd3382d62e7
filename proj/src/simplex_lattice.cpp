#include "rsmf/simplex_lattice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include "rsmf/errors.hpp"

namespace rsmf {

namespace {

constexpr std::uint64_t kSat = std::numeric_limits<std::uint64_t>::max();

std::uint64_t sat_add(std::uint64_t a, std::uint64_t b) { return a > kSat - b ? kSat : a + b; }

std::vector<std::vector<std::uint64_t>> binomial_table(int rows, int cols) {
  std::vector<std::vector<std::uint64_t>> t(rows + 1, std::vector<std::uint64_t>(cols + 1, 0));
  for (int a = 0; a <= rows; ++a) {
    t[a][0] = 1;
    for (int b = 1; b <= std::min(a, cols); ++b) t[a][b] = sat_add(t[a - 1][b - 1], b <= a - 1 ? t[a - 1][b] : 0);
  }
  return t;
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

std::uint64_t lattice_size(int n, int d) {
  if (n < 0 || d < 1) return 0;
  const auto t = binomial_table(n + d - 1, d - 1);
  return t[n + d - 1][d - 1];
}

SimplexGrid::SimplexGrid(int n, int d, std::size_t cap) : n_(n), d_(d) {
  if (n < 1) throw ArgumentError("lattice needs n >= 1");
  if (d < 2) throw ArgumentError("lattice needs d >= 2");
  enumerate(cap);
}

SimplexGrid::SimplexGrid(int n, const EdgeSet& edges, std::size_t cap)
    : SimplexGrid(n, edges.num_states(), cap) {
  edges_.assign(edges.edges().begin(), edges.edges().end());
  build_neighbors();
}

void SimplexGrid::enumerate(std::size_t cap) {
  binom_ = binomial_table(n_ + d_, d_);
  const std::uint64_t count = binom_[n_ + d_ - 1][d_ - 1];
  if (count > cap) {
    throw CapacityError("lattice with n=" + std::to_string(n_) + ", d=" + std::to_string(d_) + " has " +
                        (count == kSat ? std::string("too many") : std::to_string(count)) +
                        " points, above the cap " + std::to_string(cap));
  }
  size_ = static_cast<std::size_t>(count);
  counts_.resize(size_ * d_);
  std::vector<int> k(d_, 0);
  k[0] = n_;
  for (std::size_t i = 0; i < size_; ++i) {
    std::copy(k.begin(), k.end(), counts_.begin() + i * d_);
    if (i + 1 == size_) break;
    int prefix = 0;
    int j = 1;
    for (; j < d_; ++j) {
      prefix += k[j - 1];
      if (prefix > 0) break;
    }
    ++k[j];
    std::fill(k.begin(), k.begin() + j, 0);
    k[0] = prefix - 1;
  }
}

void SimplexGrid::build_neighbors() {
  const std::size_t ne = edges_.size();
  neighbors_.assign(size_ * ne, kOutOfLattice);
  std::vector<int> k(d_);
  for (std::size_t i = 0; i < size_; ++i) {
    for (std::size_t e = 0; e < ne; ++e) {
      const auto [x, y] = edges_[e];
      const auto c = counts(i);
      if (c[x] == 0) continue;
      std::copy(c.begin(), c.end(), k.begin());
      --k[x];
      ++k[y];
      neighbors_[i * ne + e] = static_cast<std::int64_t>(index(k));
    }
  }
}

std::vector<double> SimplexGrid::point(std::size_t i) const {
  std::vector<double> m(d_);
  for (int x = 0; x < d_; ++x) m[x] = coord(i, x);
  return m;
}

std::size_t SimplexGrid::index(std::span<const int> k) const {
  if (static_cast<int>(k.size()) != d_) throw ArgumentError("count vector has the wrong dimension");
  long total = 0;
  for (int v : k) {
    if (v < 0) throw ArgumentError("negative count");
    total += v;
  }
  if (total != n_) throw ArgumentError("counts do not sum to n");
  // Points preceding k share its higher coordinates and have a smaller value at
  // position j; summing compositions of the remainder gives a hockey-stick difference.
  std::uint64_t rank = 0;
  int s = n_;
  for (int j = d_ - 1; j >= 1; --j) {
    rank += binom_[s + j][j] - binom_[s - k[j] + j][j];
    s -= k[j];
  }
  return static_cast<std::size_t>(rank);
}

std::int64_t SimplexGrid::transition(std::size_t i, int x, int y) const {
  if (x < 0 || y < 0 || x >= d_ || y >= d_ || x == y) throw ArgumentError("invalid transition");
  const auto c = counts(i);
  if (c[x] == 0) return kOutOfLattice;
  std::vector<int> k(c.begin(), c.end());
  --k[x];
  ++k[y];
  return static_cast<std::int64_t>(index(k));
}

std::optional<bool> TargetSet::contains_point(const TargetKind& kind, std::span<const double> m) {
  if (const auto* h = std::get_if<HalfSpace>(&kind)) {
    const double v = m[h->coordinate];
    return h->at_least ? v >= h->threshold - 1e-12 : v <= h->threshold + 1e-12;
  }
  if (const auto* b = std::get_if<Ball>(&kind)) return distance(m, b->center) <= b->radius + 1e-12;
  return std::nullopt;
}

TargetSet::TargetSet(const SimplexGrid& grid, TargetKind kind) : kind_(std::move(kind)), mask_(grid.size(), 0) {
  const int n = grid.n();
  if (const auto* list = std::get_if<ExplicitList>(&kind_)) {
    for (std::size_t i : list->ordinals) {
      if (i >= grid.size()) throw ArgumentError("target ordinal outside the lattice");
      mask_[i] = 1;
    }
  } else if (const auto* h = std::get_if<HalfSpace>(&kind_)) {
    if (h->coordinate < 0 || h->coordinate >= grid.d()) throw ArgumentError("half-space coordinate out of range");
    // Compare integer counts against threshold * n to avoid rounding at lattice points.
    const double level = h->threshold * n;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const int k = grid.counts(i)[h->coordinate];
      mask_[i] = h->at_least ? k >= level - 1e-9 : k <= level + 1e-9;
    }
  } else {
    const auto& b = std::get<Ball>(kind_);
    if (static_cast<int>(b.center.size()) != grid.d()) throw ArgumentError("ball center has the wrong dimension");
    if (!(b.radius >= 0.0)) throw ArgumentError("ball radius must be nonnegative");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto m = grid.point(i);
      mask_[i] = distance(m, b.center) <= b.radius + 1e-12;
    }
  }
  for (std::size_t i = 0; i < mask_.size(); ++i) {
    if (mask_[i]) ordinals_.push_back(i);
  }
  if (ordinals_.empty()) throw PreconditionError("target set is empty on the lattice");
}

TargetSet fatten(const SimplexGrid& grid, const TargetSet& target, double delta) {
  if (!(delta >= 0.0)) throw ArgumentError("fattening radius must be nonnegative");
  std::vector<std::vector<double>> inside;
  inside.reserve(target.size());
  for (std::size_t i : target.ordinals()) inside.push_back(grid.point(i));
  ExplicitList out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (target.contains(i)) {
      out.ordinals.push_back(i);
      continue;
    }
    const auto m = grid.point(i);
    for (const auto& k : inside) {
      if (distance(m, k) <= delta + 1e-12) {
        out.ordinals.push_back(i);
        break;
      }
    }
  }
  return TargetSet(grid, std::move(out));
}

std::vector<int> empirical_counts(const AgentConfig& config, int d) {
  std::vector<int> k(d, 0);
  for (int s : config.states) {
    if (s < 0 || s >= d) throw ArgumentError("agent state out of range");
    ++k[s];
  }
  return k;
}

std::vector<double> project_empirical(const AgentConfig& config, int d) {
  const auto k = empirical_counts(config, d);
  const double n = static_cast<double>(config.states.size());
  std::vector<double> m(d);
  for (int x = 0; x < d; ++x) m[x] = k[x] / n;
  return m;
}

PermutationVerdict check_permutation_invariance_exhaustive(const ProductPredicate& member, int n, int d) {
  PermutationVerdict v;
  v.exhaustive = true;
  std::map<std::vector<int>, std::pair<bool, AgentConfig>> seen;
  AgentConfig c{std::vector<int>(n, 0)};
  for (;;) {
    const bool in = member(c);
    ++v.checked;
    auto key = empirical_counts(c, d);
    auto [it, fresh] = seen.try_emplace(std::move(key), in, c);
    if (!fresh && it->second.first != in) {
      v.invariant = false;
      v.counterexample = c;
      return v;
    }
    int i = 0;
    while (i < n && ++c.states[i] == d) c.states[i++] = 0;
    if (i == n) break;
  }
  return v;
}

PermutationVerdict check_permutation_invariance_sampled(const ProductPredicate& member, int n, int d,
                                                        std::size_t samples, std::uint64_t seed) {
  PermutationVerdict v;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> state(0, d - 1);
  AgentConfig c{std::vector<int>(n)};
  for (std::size_t s = 0; s < samples; ++s) {
    for (auto& x : c.states) x = state(rng);
    AgentConfig p = c;
    std::shuffle(p.states.begin(), p.states.end(), rng);
    ++v.checked;
    if (member(c) != member(p)) {
      v.invariant = false;
      v.counterexample = c;
      return v;
    }
  }
  return v;
}

PermutationVerdict check_permutation_invariance(const ProductPredicate& member, int n, int d, std::size_t samples,
                                                std::uint64_t seed) {
  if (n < 1 || d < 1) throw ArgumentError("permutation check needs n, d >= 1");
  const double configs = std::pow(static_cast<double>(d), n);
  if (configs <= 1e6) return check_permutation_invariance_exhaustive(member, n, d);
  return check_permutation_invariance_sampled(member, n, d, samples, seed);
}

}  // namespace rsmf
