#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rsmf/cost_models.hpp"
#include "rsmf/simplex_lattice.hpp"

namespace rsmf {

enum class FieldKind { V, W };

/// One value per lattice point. W-type fields also carry log W, which stays finite
/// when W itself underflows.
struct ValueField {
  FieldKind kind = FieldKind::V;
  std::vector<double> values;
  std::vector<double> log_values;  ///< W-type only
};

struct ControlBox {
  double q_min = 0.0;
  double q_max = 0.0;
  /// 1e-3 * gamma_min .. 1e3 * gamma_max.
  static ControlBox defaults(const CostModel& model);
};

struct SolveVOptions {
  std::optional<ControlBox> box;
  double tol = 1e-10;
  std::size_t max_sweeps = 200000;
  std::function<void(const std::vector<double>&)> on_sweep;  ///< called with the iterate after each sweep
};

struct SolveStats {
  std::size_t sweeps = 0;
  double last_update = 0.0;
  double residual_sup = 0.0;              ///< over non-target states with no active clamp
  std::vector<std::size_t> clamped_states;  ///< states where a box bound binds in the final policy
  std::vector<std::string> warnings;
};

/// Per-state, per-edge controlled rates on a lattice. Absent edges (empty source) carry 0.
/// On the target set the nominal rates are emitted.
struct Policy {
  std::size_t num_edges = 0;
  std::vector<double> q;  ///< state-major, q[i * num_edges + e]
  std::vector<double> u;  ///< matching risk-sensitive rates
  ControlBox box;
  std::vector<std::uint8_t> clamped;  ///< per state
  double rate(std::size_t i, std::size_t e) const { return q[i * num_edges + e]; }
  double u_rate(std::size_t i, std::size_t e) const { return u[i * num_edges + e]; }
};

struct SolveVResult {
  ValueField field;
  Policy policy;  ///< extracted at the final iterate with the same box
  SolveStats stats;
};

/// Nominal policy q = u = gamma everywhere.
Policy nominal_policy(const SimplexGrid& grid, const CostModel& model);

/// Gauss-Seidel value iteration for H(m, Delta V) + R = 0 off the target, V = 0 on it.
/// Each state update minimizes the ratio (running cost + sum rate * V_next) / sum rate over
/// box-constrained rates, solved by a Dinkelbach iteration whose inner problem is the
/// closed-form optimal pair. Throws IterationLimitError after max_sweeps.
SolveVResult solve_V(const SimplexGrid& grid, const TargetSet& target, const CostModel& model,
                     const SolveVOptions& opts = {});

struct SolveWOptions {
  double tol = 1e-10;  ///< on log W
  std::size_t max_sweeps = 200000;
  double log_w_floor = -700.0;
};

struct SolveWResult {
  ValueField field;
  SolveStats stats;
};

/// Gauss-Seidel root finding for sum m_x gamma C*(1 - W_next / W) + R = 0 in log W,
/// W = 1 on the target. Independent of solve_V. Throws BracketError if a state has no
/// root above the floor.
SolveWResult solve_W(const SimplexGrid& grid, const TargetSet& target, const CostModel& model,
                     const SolveWOptions& opts = {});

/// Per-edge n (V(m + v/n) - V(m)); nullopt for edges leaving the lattice.
std::vector<std::optional<double>> discrete_gradient(const SimplexGrid& grid, const std::vector<double>& values,
                                                     std::size_t i);

struct ResidualReport {
  std::vector<double> per_state;  ///< 0 on the target
  double sup = 0.0;
};

/// H(m, Delta V(m)) + R(m) at every non-target state via the closed-form Hamiltonian.
ResidualReport residual_V(const SimplexGrid& grid, const TargetSet& target, const CostModel& model,
                          const std::vector<double>& values);

/// Feedback rates from a V-type field: q* and u* from optimal_pair at xi = Delta V, with q
/// clamped to the box (u is rescaled to keep q = u e^-xi).
Policy extract_policy(const SimplexGrid& grid, const TargetSet& target, const CostModel& model,
                      const std::vector<double>& values, const ControlBox& box);

/// Expected additive exit cost of a stationary policy, by a sparse linear solve on the
/// non-target states. Entries are +inf where F is infinite along the policy.
std::vector<double> evaluate_policy(const SimplexGrid& grid, const TargetSet& target, const CostModel& model,
                                    const Policy& policy);

inline constexpr std::size_t kProductStateCap = 100000;

struct ProductField {
  int n = 0;
  int d = 0;
  std::vector<double> values;  ///< indexed by sum_i state_i d^i
  SolveStats stats;
  double value(const AgentConfig& c) const;
};

/// Configuration with index `i` (agent i is digit i in base d).
AgentConfig product_config(std::size_t i, int n, int d);

/// Value iteration on X^n with per-agent controls. The target predicate must be
/// permutation invariant (checked; PreconditionError otherwise); d^n is capped at 1e5.
ProductField solve_product_space(int n, const CostModel& model, const ProductPredicate& target,
                                 const SolveVOptions& opts = {});

}  // namespace rsmf
