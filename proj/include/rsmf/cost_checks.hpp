#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rsmf/cost_models.hpp"

namespace rsmf {

struct EdgeAdmissibility {
  std::size_t edge = 0;
  bool convex = true;
  bool vanishes_at_one = true;
  bool slope_monotone = true;   ///< u C'(u) - u nondecreasing on the grid
  bool slope_constant = false;  ///< ... and flat everywhere (weakly increasing only)
  std::optional<double> first_violation;  ///< first grid u where a check fails
  std::string violation;                  ///< which check failed first
  double violation_lo = 0.0;              ///< extent of the decreasing stretch of u C' - u
  double violation_hi = 0.0;
  bool pass() const { return convex && vanishes_at_one && slope_monotone; }
};

struct AdmissibilityReport {
  bool pass = true;
  std::vector<EdgeAdmissibility> edges;
};

/// Grid audit of the standing cost assumption: convexity (nondecreasing chord slopes),
/// C(1) = 0, and monotonicity of u C'(u) - u. Throws ArgumentError for < 3 grid points.
AdmissibilityReport check_cost_admissibility(const CostModel& model, std::span<const double> u_grid);

struct IsaacsReport {
  std::size_t edge = 0;
  double xi = 0.0;
  double inf_sup = 0.0;  ///< inf_q sup_u L after refinement
  double sup_inf = 0.0;  ///< sup_u inf_q L after refinement
  double gap = 0.0;      ///< inf_sup - sup_inf
  double closed_form = 0.0;  ///< gamma C*(1 - e^-xi)
  double inner_closed_form_error = 0.0;  ///< max |inf_q L(u, .) - (u(1-e^-xi) - gamma C(u/gamma))|
  std::size_t inner_checked = 0;         ///< grid u values whose inner optimum lies inside the q grid
};

/// Minimax audit of L(u,q) = q xi + u l(q/u) - gamma C(u/gamma) over the two grids,
/// refined around the grid optima.
IsaacsReport check_isaacs(const CostModel& model, std::size_t edge, double xi,
                          std::span<const double> u_grid, std::span<const double> q_grid);

struct FBoundsReport {
  std::size_t edge = 0;
  double p = 0.0;
  double epsilon = 0.0;
  double M = 0.0;      ///< uniform cap below which the integrand increases in u
  double M_bar = 0.0;  ///< additive constant of the upper bound at epsilon
  std::size_t points = 0;
  bool lower_ok = true;
  bool upper_ok = true;
  bool convex_ok = true;
  double F_at_gamma = 0.0;
  double min_lower_slack = 0.0;  ///< min over grid of F - gamma l(q/gamma)
  double min_upper_slack = 0.0;  ///< min over grid of bound - F
  std::optional<double> first_violation;
  bool pass() const { return lower_ok && upper_ok && convex_ok; }
};

/// Checks gamma l(q/gamma) <= F(q) <= q log(q / min{gamma (gamma/q)^(1/p), M}) + M_bar(eps)
/// on the grid and midpoint convexity on random grid pairs. The constants are built from
/// the maximizers of the integrand. Throws UnsupportedCheckError without a tail exponent.
FBoundsReport check_transformed_cost_bounds(const CostModel& model, std::size_t edge, double epsilon,
                                            std::span<const double> q_grid, std::size_t convexity_pairs = 100,
                                            std::uint64_t seed = 1);

struct EdgeGrowthReport {
  std::size_t edge = 0;
  bool growth_at_zero = false;          ///< u^(p+1) C'(u) -> -inf for some probed p
  std::optional<double> p_used;
  std::vector<double> zero_probe;       ///< u^(p+1) C'(u) at u = 1e-2 .. 1e-10 for p_used (or the model p)
  double tail_literal = 0.0;            ///< u C'(u) - u at the largest probe
  double tail_scaled = 0.0;             ///< same for the rate-scaled argument u/gamma
  bool tail_ok = false;
  std::string diagnostic;
  bool pass() const { return growth_at_zero && tail_ok; }
};

struct GrowthReport {
  bool pass = true;
  std::vector<EdgeGrowthReport> edges;
};

/// Controllability gate required before convergence experiments: growth of
/// u^(p+1) C'(u) to -inf at 0 and liminf (u C'(u) - u) >= 0 at infinity.
GrowthReport check_growth_conditions(const CostModel& model);

/// Log-spaced grid [lo, hi] with `count` points.
std::vector<double> log_grid(double lo, double hi, std::size_t count);

}  // namespace rsmf
