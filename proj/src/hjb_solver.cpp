#include "rsmf/hjb_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <boost/math/tools/roots.hpp>

#include "rsmf/errors.hpp"
#include "rsmf/scalar_search.hpp"

namespace rsmf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Embedded jump chain shared by the lattice and product-space solvers. A transition
// fires at rate weight * q and contributes weight / n * F(q) to the running cost.
struct Transition {
  std::size_t target;
  std::size_t edge;
  double weight;
};

struct Chain {
  int n = 1;
  std::vector<std::size_t> offsets;
  std::vector<Transition> transitions;
  std::vector<double> reward;
  std::vector<std::uint8_t> terminal;
  std::size_t size() const { return reward.size(); }
};

Chain lattice_chain(const SimplexGrid& grid, const TargetSet& target, const CostModel& model) {
  if (grid.num_edges() != model.num_edges()) throw ArgumentError("grid and model have different edge sets");
  if (target.grid_size() != grid.size()) throw ArgumentError("target resolved on a different grid");
  Chain c;
  c.n = grid.n();
  c.offsets.reserve(grid.size() + 1);
  c.offsets.push_back(0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    c.reward.push_back(model.reward_at(grid.point(i)));
    c.terminal.push_back(target.contains(i) ? 1 : 0);
    for (std::size_t e = 0; e < grid.num_edges(); ++e) {
      const auto j = grid.neighbor(i, e);
      if (j == kOutOfLattice) continue;
      c.transitions.push_back({static_cast<std::size_t>(j), e, static_cast<double>(grid.counts(i)[grid.edges()[e].from])});
    }
    c.offsets.push_back(c.transitions.size());
  }
  return c;
}

struct EdgeChoice {
  double q;
  double F;
  bool clamped;
};

// Box minimizer of q xi + F(q). The objective is convex in q, so an unconstrained
// optimum outside the box is replaced by the nearest bound.
EdgeChoice best_rate(const CostModel& model, std::size_t e, double xi, const ControlBox& box) {
  const double g = model.gamma(e);
  const double z = -std::expm1(-xi);
  double q_free = std::numeric_limits<double>::quiet_NaN();
  if (z < 1.0) {
    const DualGradientSample dual = legendre_dual(model, e, z);
    if (dual.status == Attainment::interior) {
      const double q = g * dual.maximizer * std::exp(-xi);
      if (q >= box.q_min && q <= box.q_max) return {q, g * dual.value - q * xi, false};
      q_free = q;
    } else if (dual.status == Attainment::at_zero) {
      q_free = 0.0;
    } else {
      q_free = kInf;
    }
  }
  if (!std::isnan(q_free)) {
    const double q = std::clamp(q_free, box.q_min, box.q_max);
    return {q, transformed_cost(model, e, q).value, true};
  }
  // Gradient so large that 1 - e^-xi rounds to 1: minimize directly over log q.
  const auto obj = [&](double t) {
    const double q = std::exp(t);
    return q * xi + transformed_cost(model, e, q).value;
  };
  const auto [t, v] = minimize_on_interval(obj, std::log(box.q_min), std::log(box.q_max));
  const double q = std::exp(t);
  (void)v;
  return {q, transformed_cost(model, e, q).value, true};
}

struct RatioUpdate {
  double value;
  bool clamped;
};

// min over rates of (sum w/n F(q) + R + sum w q V_next) / sum w q, by Dinkelbach.
RatioUpdate ratio_update(const Chain& c, const CostModel& model, const ControlBox& box,
                         const std::vector<double>& V, std::size_t i) {
  const double nd = c.n;
  double lambda = V[i];
  bool clamped = false;
  for (int it = 0; it < 200; ++it) {
    double A = c.reward[i];
    double B = 0.0;
    clamped = false;
    for (std::size_t k = c.offsets[i]; k < c.offsets[i + 1]; ++k) {
      const Transition& t = c.transitions[k];
      const EdgeChoice ch = best_rate(model, t.edge, nd * (V[t.target] - lambda), box);
      clamped = clamped || ch.clamped;
      A += t.weight / nd * ch.F + t.weight * ch.q * V[t.target];
      B += t.weight * ch.q;
    }
    if (!(B > 0.0)) throw StuckStateError("state " + std::to_string(i) + " has no outgoing transition");
    const double next = A / B;
    const bool done = std::abs(next - lambda) <= 1e-15 * std::max(1.0, std::abs(next));
    lambda = next;
    if (done) break;
  }
  return {lambda, clamped};
}

std::vector<double> gauss_seidel_ratio(const Chain& c, const CostModel& model, const ControlBox& box,
                                       const SolveVOptions& opts, SolveStats& stats) {
  const double tol = opts.tol;
  const std::size_t max_sweeps = opts.max_sweeps;
  std::vector<double> V(c.size(), 0.0);
  bool zero_reward = false;
  for (std::size_t i = 0; i < c.size(); ++i) zero_reward = zero_reward || (!c.terminal[i] && c.reward[i] <= 0.0);
  if (zero_reward) stats.warnings.push_back("reward vanishes at some state outside the target; values may be unreliable");

  const std::size_t N = c.size();
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double update = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
      const std::size_t i = sweep % 2 == 0 ? k : N - 1 - k;
      if (c.terminal[i]) continue;
      const double next = ratio_update(c, model, box, V, i).value;
      update = std::max(update, std::abs(next - V[i]));
      V[i] = next;
    }
    stats.sweeps = sweep + 1;
    stats.last_update = update;
    if (opts.on_sweep) opts.on_sweep(V);
    if (update < tol) return V;
  }
  throw IterationLimitError("value iteration did not converge in " + std::to_string(max_sweeps) + " sweeps",
                            stats.last_update);
}

void validate_box(const ControlBox& box, const CostModel& model) {
  if (!(box.q_min > 0.0 && box.q_min <= model.gamma_min() && model.gamma_max() <= box.q_max))
    throw ArgumentError("control box must satisfy 0 < q_min <= gamma_min <= gamma_max <= q_max");
}

}  // namespace

ControlBox ControlBox::defaults(const CostModel& model) {
  return {1e-3 * model.gamma_min(), 1e3 * model.gamma_max()};
}

Policy nominal_policy(const SimplexGrid& grid, const CostModel& model) {
  Policy p;
  p.num_edges = grid.num_edges();
  p.box = ControlBox::defaults(model);
  p.q.assign(grid.size() * p.num_edges, 0.0);
  p.clamped.assign(grid.size(), 0);
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (std::size_t e = 0; e < p.num_edges; ++e)
      if (grid.neighbor(i, e) != kOutOfLattice) p.q[i * p.num_edges + e] = model.gamma(e);
  p.u = p.q;
  return p;
}

SolveVResult solve_V(const SimplexGrid& grid, const TargetSet& target, const CostModel& model,
                     const SolveVOptions& opts) {
  const ControlBox box = opts.box.value_or(ControlBox::defaults(model));
  validate_box(box, model);
  const Chain chain = lattice_chain(grid, target, model);
  SolveVResult r;
  r.field.kind = FieldKind::V;
  r.field.values = gauss_seidel_ratio(chain, model, box, opts, r.stats);
  r.policy = extract_policy(grid, target, model, r.field.values, box);

  const ResidualReport res = residual_V(grid, target, model, r.field.values);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (r.policy.clamped[i]) {
      r.stats.clamped_states.push_back(i);
    } else {
      r.stats.residual_sup = std::max(r.stats.residual_sup, std::abs(res.per_state[i]));
    }
  }
  if (!r.stats.clamped_states.empty()) {
    r.stats.warnings.push_back("control box binds at " + std::to_string(r.stats.clamped_states.size()) +
                               " states; consider widening it");
  }
  return r;
}

SolveWResult solve_W(const SimplexGrid& grid, const TargetSet& target, const CostModel& model,
                     const SolveWOptions& opts) {
  const Chain c = lattice_chain(grid, target, model);
  const double nd = c.n;
  const std::size_t N = c.size();
  SolveWResult r;
  r.field.kind = FieldKind::W;
  std::vector<double> lw(N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    if (!c.terminal[i] && c.reward[i] <= 0.0) {
      r.stats.warnings.push_back("reward vanishes at some state outside the target; values may be unreliable");
      break;
    }
  }

  // Phi is increasing in log W at the state: each dual argument 1 - W_next / W grows with W.
  const auto phi = [&](std::size_t i, double w) {
    double total = c.reward[i];
    for (std::size_t k = c.offsets[i]; k < c.offsets[i + 1]; ++k) {
      const Transition& t = c.transitions[k];
      const double z = -std::expm1(lw[t.target] - w);
      if (!(z < 1.0)) return kInf;
      const DualGradientSample dual = legendre_dual(model, t.edge, z);
      if (dual.unbounded()) return kInf;
      total += t.weight / nd * model.gamma(t.edge) * dual.value;
    }
    return total;
  };

  const auto solve_state = [&](std::size_t i) {
    double hi = lw[i];
    double f_hi = phi(i, hi);
    if (f_hi < 0.0) {
      hi = 0.0;
      f_hi = phi(i, hi);
    }
    if (f_hi == 0.0) return hi;
    if (f_hi < 0.0) throw BracketError("no sign change at W = 1", static_cast<long>(i));
    double step = 1.0;
    double lo = hi - step;
    double f_lo = phi(i, lo);
    while (f_lo >= 0.0) {
      if (lo <= opts.log_w_floor) throw BracketError("root of the W update lies below the floor; lower it", static_cast<long>(i));
      hi = lo;
      f_hi = f_lo;
      step *= 2.0;
      lo = std::max(lo - step, opts.log_w_floor);
      f_lo = phi(i, lo);
    }
    if (std::isinf(f_hi)) {
      // Bisect away the infinite end before handing over to the interpolating solver.
      while (std::isinf(f_hi) && hi - lo > 1e-14) {
        const double mid = 0.5 * (lo + hi);
        const double fm = phi(i, mid);
        if (fm < 0.0) {
          lo = mid;
          f_lo = fm;
        } else {
          hi = mid;
          f_hi = fm;
        }
      }
      if (std::isinf(f_hi)) return hi;
    }
    std::uintmax_t iters = 200;
    const auto tol = [](double a, double b) { return std::abs(b - a) <= 1e-14 * std::max(1.0, std::abs(a)); };
    const auto [a, b] = boost::math::tools::toms748_solve([&](double w) { return phi(i, w); }, lo, hi, f_lo,
                                                          f_hi, tol, iters);
    return 0.5 * (a + b);
  };

  for (std::size_t sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    double update = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
      const std::size_t i = sweep % 2 == 0 ? k : N - 1 - k;
      if (c.terminal[i]) continue;
      const double next = solve_state(i);
      update = std::max(update, std::abs(next - lw[i]));
      lw[i] = next;
    }
    r.stats.sweeps = sweep + 1;
    r.stats.last_update = update;
    if (update < opts.tol) {
      r.field.log_values = lw;
      r.field.values.resize(N);
      std::transform(lw.begin(), lw.end(), r.field.values.begin(), [](double v) { return std::exp(v); });
      for (std::size_t i = 0; i < N; ++i) {
        if (!c.terminal[i]) r.stats.residual_sup = std::max(r.stats.residual_sup, std::abs(phi(i, lw[i])));
      }
      return r;
    }
  }
  throw IterationLimitError("W iteration did not converge in " + std::to_string(opts.max_sweeps) + " sweeps",
                            r.stats.last_update);
}

std::vector<std::optional<double>> discrete_gradient(const SimplexGrid& grid, const std::vector<double>& values,
                                                     std::size_t i) {
  std::vector<std::optional<double>> xi(grid.num_edges());
  for (std::size_t e = 0; e < grid.num_edges(); ++e) {
    const auto j = grid.neighbor(i, e);
    if (j != kOutOfLattice) xi[e] = grid.n() * (values[static_cast<std::size_t>(j)] - values[i]);
  }
  return xi;
}

ResidualReport residual_V(const SimplexGrid& grid, const TargetSet& target, const CostModel& model,
                          const std::vector<double>& values) {
  ResidualReport r;
  r.per_state.assign(grid.size(), 0.0);
  std::vector<double> xi(grid.num_edges());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (target.contains(i)) continue;
    const auto g = discrete_gradient(grid, values, i);
    // Absent edges have an empty source, so their weight in H is zero.
    for (std::size_t e = 0; e < xi.size(); ++e) xi[e] = g[e].value_or(0.0);
    const auto m = grid.point(i);
    r.per_state[i] = hamiltonian(model, m, xi) + model.reward_at(m);
    r.sup = std::max(r.sup, std::abs(r.per_state[i]));
  }
  return r;
}

Policy extract_policy(const SimplexGrid& grid, const TargetSet& target, const CostModel& model,
                      const std::vector<double>& values, const ControlBox& box) {
  validate_box(box, model);
  Policy p = nominal_policy(grid, model);
  p.box = box;
  const std::size_t ne = p.num_edges;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (target.contains(i)) continue;
    const auto g = discrete_gradient(grid, values, i);
    for (std::size_t e = 0; e < ne; ++e) {
      if (!g[e]) continue;
      const EdgeChoice ch = best_rate(model, e, *g[e], box);
      p.q[i * ne + e] = ch.q;
      p.u[i * ne + e] = ch.q * std::exp(*g[e]);
      if (ch.clamped) p.clamped[i] = 1;
    }
  }
  return p;
}

std::vector<double> evaluate_policy(const SimplexGrid& grid, const TargetSet& target, const CostModel& model,
                                    const Policy& policy) {
  const Chain c = lattice_chain(grid, target, model);
  const std::size_t N = c.size();
  const double nd = c.n;
  std::vector<double> cost(N, 0.0), out(N, 0.0);
  std::vector<std::uint8_t> infinite(N, 0);
  for (std::size_t i = 0; i < N; ++i) {
    if (c.terminal[i]) continue;
    cost[i] = c.reward[i];
    for (std::size_t k = c.offsets[i]; k < c.offsets[i + 1]; ++k) {
      const Transition& t = c.transitions[k];
      const double q = policy.rate(i, t.edge);
      if (q > 0.0) cost[i] += t.weight / nd * transformed_cost(model, t.edge, q).value;
    }
    if (!std::isfinite(cost[i])) infinite[i] = 1;
  }
  // Anything that can reach an infinite-cost state before the target is infinite too.
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t i = 0; i < N; ++i) {
      if (c.terminal[i] || infinite[i]) continue;
      for (std::size_t k = c.offsets[i]; k < c.offsets[i + 1]; ++k) {
        const Transition& t = c.transitions[k];
        if (infinite[t.target] && policy.rate(i, t.edge) > 0.0) {
          infinite[i] = 1;
          changed = true;
          break;
        }
      }
    }
  }
  std::vector<std::int64_t> slot(N, -1);
  std::size_t unknowns = 0;
  for (std::size_t i = 0; i < N; ++i)
    if (!c.terminal[i] && !infinite[i]) slot[i] = static_cast<std::int64_t>(unknowns++);
  if (unknowns > 0) {
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(unknowns));
    for (std::size_t i = 0; i < N; ++i) {
      if (slot[i] < 0) continue;
      double diag = 0.0;
      for (std::size_t k = c.offsets[i]; k < c.offsets[i + 1]; ++k) {
        const Transition& t = c.transitions[k];
        const double rate = t.weight * policy.rate(i, t.edge);
        diag += rate;
        if (slot[t.target] >= 0) trip.emplace_back(slot[i], slot[t.target], -rate);
      }
      trip.emplace_back(slot[i], slot[i], diag);
      rhs[slot[i]] = cost[i];
    }
    Eigen::SparseMatrix<double> A(static_cast<Eigen::Index>(unknowns), static_cast<Eigen::Index>(unknowns));
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw PreconditionError("policy does not reach the target from every state");
    const Eigen::VectorXd x = lu.solve(rhs);
    for (std::size_t i = 0; i < N; ++i)
      if (slot[i] >= 0) out[i] = x[slot[i]];
  }
  for (std::size_t i = 0; i < N; ++i)
    if (infinite[i]) out[i] = kInf;
  return out;
}

AgentConfig product_config(std::size_t i, int n, int d) {
  AgentConfig c{std::vector<int>(n)};
  for (int a = 0; a < n; ++a) {
    c.states[a] = static_cast<int>(i % d);
    i /= d;
  }
  return c;
}

double ProductField::value(const AgentConfig& c) const {
  std::size_t idx = 0;
  for (int a = n - 1; a >= 0; --a) idx = idx * d + static_cast<std::size_t>(c.states[a]);
  return values.at(idx);
}

ProductField solve_product_space(int n, const CostModel& model, const ProductPredicate& target,
                                 const SolveVOptions& opts) {
  const int d = model.num_states();
  if (n < 1) throw ArgumentError("product space needs n >= 1");
  if (std::pow(static_cast<double>(d), n) > static_cast<double>(kProductStateCap))
    throw CapacityError("product space d^n exceeds " + std::to_string(kProductStateCap));
  if (!check_permutation_invariance(target, n, d).invariant)
    throw PreconditionError("product target set is not permutation invariant");
  const ControlBox box = opts.box.value_or(ControlBox::defaults(model));
  validate_box(box, model);

  std::size_t S = 1;
  for (int a = 0; a < n; ++a) S *= static_cast<std::size_t>(d);
  std::vector<std::size_t> place(n, 1);
  for (int a = 1; a < n; ++a) place[a] = place[a - 1] * d;

  Chain c;
  c.n = n;
  c.offsets.push_back(0);
  bool any_free = false;
  for (std::size_t i = 0; i < S; ++i) {
    const AgentConfig x = product_config(i, n, d);
    c.reward.push_back(model.reward_at(project_empirical(x, d)));
    const bool term = target(x);
    c.terminal.push_back(term ? 1 : 0);
    any_free = any_free || !term;
    for (int a = 0; a < n; ++a) {
      for (std::size_t e = 0; e < model.num_edges(); ++e) {
        const Edge& ed = model.edges()[e];
        if (ed.from != x.states[a]) continue;
        const std::size_t j = i + place[a] * static_cast<std::size_t>(ed.to) - place[a] * static_cast<std::size_t>(ed.from);
        c.transitions.push_back({j, e, 1.0});
      }
    }
    c.offsets.push_back(c.transitions.size());
  }
  bool any_target = false;
  for (auto t : c.terminal) any_target = any_target || t;
  if (!any_target) throw PreconditionError("product target set is empty");

  ProductField out;
  out.n = n;
  out.d = d;
  out.values = gauss_seidel_ratio(c, model, box, opts, out.stats);
  return out;
}

}  // namespace rsmf
