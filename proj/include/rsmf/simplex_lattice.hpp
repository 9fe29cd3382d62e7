#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "rsmf/cost_models.hpp"

namespace rsmf {

inline constexpr std::int64_t kOutOfLattice = -1;
inline constexpr std::size_t kDefaultPointCap = 10'000'000;

/// Lattice of count vectors (k_0..k_{d-1}), sum n, in colexicographic order
/// (last coordinate most significant), with a neighbor table over an edge set.
class SimplexGrid {
 public:
  /// Enumeration only, no neighbor table.
  SimplexGrid(int n, int d, std::size_t cap = kDefaultPointCap);
  /// Enumeration plus neighbor table for the given edges.
  SimplexGrid(int n, const EdgeSet& edges, std::size_t cap = kDefaultPointCap);

  int n() const { return n_; }
  int d() const { return d_; }
  std::size_t size() const { return size_; }
  std::size_t num_edges() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }

  std::span<const int> counts(std::size_t i) const { return {counts_.data() + i * d_, static_cast<std::size_t>(d_)}; }
  std::vector<double> point(std::size_t i) const;
  double coord(std::size_t i, int x) const { return counts_[i * d_ + x] / static_cast<double>(n_); }

  /// Ordinal of a count vector; throws ArgumentError if it is not on the lattice.
  std::size_t index(std::span<const int> counts) const;

  /// Ordinal after moving one unit along edge e, or kOutOfLattice if the source is empty.
  std::int64_t neighbor(std::size_t i, std::size_t e) const { return neighbors_[i * edges_.size() + e]; }

  /// Same as neighbor() for an arbitrary (x, y) pair, computed without the table.
  std::int64_t transition(std::size_t i, int x, int y) const;

 private:
  void enumerate(std::size_t cap);
  void build_neighbors();

  int n_;
  int d_;
  std::size_t size_ = 0;
  std::vector<Edge> edges_;
  std::vector<int> counts_;
  std::vector<std::int64_t> neighbors_;
  std::vector<std::vector<std::uint64_t>> binom_;  // binom_[a][b] = C(a, b)
};

/// Number of compositions of n into d nonnegative parts; saturates at UINT64_MAX.
std::uint64_t lattice_size(int n, int d);

struct ExplicitList {
  std::vector<std::size_t> ordinals;
};

/// { m : m_x >= threshold } (or <= with at_least = false).
struct HalfSpace {
  int coordinate = 0;
  double threshold = 0.0;
  bool at_least = true;
};

/// Euclidean ball { m : |m - center| <= radius }.
struct Ball {
  std::vector<double> center;
  double radius = 0.0;
};

using TargetKind = std::variant<ExplicitList, HalfSpace, Ball>;

/// Target set resolved on a grid. Resolution throws PreconditionError if nothing is selected.
class TargetSet {
 public:
  TargetSet(const SimplexGrid& grid, TargetKind kind);

  const TargetKind& kind() const { return kind_; }
  bool contains(std::size_t i) const { return mask_[i] != 0; }
  const std::vector<std::size_t>& ordinals() const { return ordinals_; }
  std::size_t size() const { return ordinals_.size(); }
  std::size_t grid_size() const { return mask_.size(); }

  /// Membership for an arbitrary simplex point. Only HalfSpace and Ball have one;
  /// ExplicitList targets return nullopt.
  static std::optional<bool> contains_point(const TargetKind& kind, std::span<const double> m);

 private:
  TargetKind kind_;
  std::vector<std::uint8_t> mask_;
  std::vector<std::size_t> ordinals_;
};

/// Grid points within Euclidean distance delta of the resolved target.
TargetSet fatten(const SimplexGrid& grid, const TargetSet& target, double delta);

struct AgentConfig {
  std::vector<int> states;
};

/// Integer occupation counts of a configuration.
std::vector<int> empirical_counts(const AgentConfig& config, int d);

/// Empirical measure (counts / n).
std::vector<double> project_empirical(const AgentConfig& config, int d);

struct PermutationVerdict {
  bool invariant = true;
  bool exhaustive = false;
  std::size_t checked = 0;
  std::optional<AgentConfig> counterexample;
};

using ProductPredicate = std::function<bool(const AgentConfig&)>;

/// Checks that membership depends only on the empirical measure. Exhaustive when
/// d^n <= 1e6, otherwise random permutations of random configurations.
PermutationVerdict check_permutation_invariance(const ProductPredicate& member, int n, int d,
                                                std::size_t samples = 10000, std::uint64_t seed = 1);

/// Forces enumeration or sampling regardless of size.
PermutationVerdict check_permutation_invariance_exhaustive(const ProductPredicate& member, int n, int d);
PermutationVerdict check_permutation_invariance_sampled(const ProductPredicate& member, int n, int d,
                                                        std::size_t samples, std::uint64_t seed);

}  // namespace rsmf
