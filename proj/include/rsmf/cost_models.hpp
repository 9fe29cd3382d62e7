#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rsmf/scalar_search.hpp"

namespace rsmf {

struct Edge {
  int from = 0;
  int to = 0;
  bool operator==(const Edge&) const = default;
};

/// Allowed transitions Z over states {0..d-1}. The edge graph must be strongly
/// connected (the nominal chain is ergodic); construction throws ArgumentError otherwise.
class EdgeSet {
 public:
  EdgeSet(int num_states, std::vector<Edge> edges);

  /// Edges are the off-diagonal positive entries, in row-major order.
  static EdgeSet from_rate_matrix(const std::vector<std::vector<double>>& gamma);

  int num_states() const noexcept { return d_; }
  std::size_t size() const noexcept { return edges_.size(); }
  const Edge& operator[](std::size_t e) const { return edges_[e]; }
  std::span<const Edge> edges() const noexcept { return edges_; }

  /// Index of (x, y) or -1 when the transition is not allowed.
  int index_of(int x, int y) const;

  /// Edge indices of a directed cycle whose first edge is `e` (length <= d).
  std::vector<std::size_t> cycle_through(std::size_t e) const;

 private:
  int d_;
  std::vector<Edge> edges_;
  std::vector<int> lookup_;
};

bool strongly_connected(int num_states, std::span<const Edge> edges);

// Cost descriptors. C(u) measures the price of running an edge at u times its nominal rate.

/// C(u) = 1/(p u^p) + u^q/q - (p+q)/(pq), p, q >= 1.
struct PowerFamily {
  double p = 1.0;
  double q = 1.0;
};

/// C(u) = -log u + u - 1.
struct LogCost {};

/// Samples (u_i, C(u_i)) with strictly increasing u; linear interpolation inside the
/// sample range and +infinity outside it.
struct Tabulated {
  std::vector<double> u;
  std::vector<double> c;
};

using CostSpec = std::variant<PowerFamily, LogCost, Tabulated>;

class CostFunction {
 public:
  explicit CostFunction(CostSpec spec);

  double operator()(double u) const;
  /// Analytic for the parametric families; central differences for tabulated costs.
  double derivative(double u) const;
  /// Only available for the parametric families.
  std::optional<double> second_derivative(double u) const;
  /// Open interval on which C is finite.
  std::pair<double, double> finite_interval() const;

  const CostSpec& spec() const noexcept { return spec_; }
  std::string name() const;

 private:
  CostSpec spec_;
};

struct ConstantReward {
  double value = 0.0;
};

/// R(m) = offset + sum_x weights[x] m_x.
struct AffineReward {
  std::vector<double> weights;
  double offset = 0.0;
};

/// R(m) = scale * |m - center| (Euclidean).
struct RadialReward {
  std::vector<double> center;
  double scale = 1.0;
};

class RewardSpec {
 public:
  using Kind = std::variant<ConstantReward, AffineReward, RadialReward>;

  RewardSpec() : kind_(ConstantReward{0.0}) {}
  explicit RewardSpec(Kind kind) : kind_(std::move(kind)) {}

  double operator()(std::span<const double> m) const;

  /// Throws ArgumentError when R could be negative somewhere on the simplex or the
  /// parameters do not match the dimension.
  void validate(int d) const;
  /// Upper bound of R over the simplex (exact for every kind: the maximum of an affine
  /// or convex function sits at a vertex).
  double max_over_simplex(int d) const;

  const Kind& kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class CostModel {
 public:
  CostModel(EdgeSet edges, std::vector<double> gamma, std::vector<CostFunction> costs,
            RewardSpec reward, std::optional<double> tail_exponent_p = std::nullopt);

  /// Same cost descriptor on every edge.
  static CostModel uniform(EdgeSet edges, std::vector<double> gamma, const CostSpec& cost,
                           RewardSpec reward, std::optional<double> tail_exponent_p = std::nullopt);

  const EdgeSet& edges() const noexcept { return edges_; }
  int num_states() const noexcept { return edges_.num_states(); }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  double gamma(std::size_t e) const { return gamma_[e]; }
  std::span<const double> gammas() const noexcept { return gamma_; }
  double gamma_min() const;
  double gamma_max() const;
  const CostFunction& cost(std::size_t e) const { return costs_[e]; }
  const RewardSpec& reward() const noexcept { return reward_; }
  double reward_at(std::span<const double> m) const { return reward_(m); }
  std::optional<double> tail_exponent_p() const noexcept { return tail_p_; }

  CostModel with_reward(RewardSpec reward) const;

 private:
  EdgeSet edges_;
  std::vector<double> gamma_;
  std::vector<CostFunction> costs_;
  RewardSpec reward_;
  std::optional<double> tail_p_;
};

/// q log q - q + 1 with the continuous extension 1 at q = 0.
double entropy_integrand(double q);

struct DualGradientSample {
  double z = 0.0;
  double value = 0.0;      ///< C*(z) = sup_{u>0} [z u - C(u)]
  double maximizer = 1.0;  ///< u*(z)
  Attainment status = Attainment::interior;
  bool unbounded() const { return status == Attainment::divergent; }
};

/// Convex conjugate of the edge cost on (-inf, 1). Throws DomainError for z >= 1.
DualGradientSample legendre_dual(const CostModel& model, std::size_t edge, double z);

/// u * l(q/u) - gamma * C(u/gamma).
double transformed_cost_integrand(const CostModel& model, std::size_t edge, double u, double q);

struct TransformedCost {
  double value = 0.0;      ///< +inf when divergent
  double maximizer = 0.0;  ///< u attaining (or approaching) the supremum
  Attainment status = Attainment::interior;
  bool finite() const { return status != Attainment::divergent; }
};

/// sup_u of the integrand above; the running cost of the equivalent ordinary control problem.
TransformedCost transformed_cost(const CostModel& model, std::size_t edge, double q);

/// sum_{(x,y)} m_x gamma_xy C*_xy(1 - exp(-xi_xy)); +inf if any weighted dual is unbounded.
double hamiltonian(const CostModel& model, std::span<const double> m, std::span<const double> xi);

struct OptimalPair {
  double u = 0.0;
  double q = 0.0;
  Attainment status = Attainment::interior;
};

/// Saddle point of q xi + u l(q/u) - gamma C(u/gamma): u* = gamma (C')^-1(1 - e^-xi),
/// q* = u* e^-xi.
OptimalPair optimal_pair(const CostModel& model, std::size_t edge, double xi);

}  // namespace rsmf
