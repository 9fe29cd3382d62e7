#include "rsmf/cost_checks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "rsmf/errors.hpp"

namespace rsmf {

std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  if (count < 2 || !(lo > 0.0) || !(hi > lo)) throw ArgumentError("log_grid needs 0 < lo < hi and >= 2 points");
  std::vector<double> g(count);
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t i = 0; i < count; ++i) g[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  g.front() = lo;
  g.back() = hi;
  return g;
}

namespace {

void require_increasing(std::span<const double> grid, const char* what) {
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw ArgumentError(std::string(what) + " must be strictly increasing");
  }
}

}  // namespace

AdmissibilityReport check_cost_admissibility(const CostModel& model, std::span<const double> u_grid) {
  if (u_grid.size() < 3) throw ArgumentError("admissibility check needs at least 3 grid points");
  require_increasing(u_grid, "u grid");
  if (!(u_grid.front() > 0.0)) throw ArgumentError("u grid must be positive");

  AdmissibilityReport report;
  const std::size_t n = u_grid.size();
  for (std::size_t e = 0; e < model.num_edges(); ++e) {
    const CostFunction& c = model.cost(e);
    EdgeAdmissibility r;
    r.edge = e;

    std::vector<double> val(n), h(n);
    for (std::size_t i = 0; i < n; ++i) {
      val[i] = c(u_grid[i]);
      h[i] = u_grid[i] * c.derivative(u_grid[i]) - u_grid[i];
    }
    auto flag = [&](double u, const char* what) {
      if (!r.first_violation || u < *r.first_violation) {
        r.first_violation = u;
        r.violation = what;
      }
    };

    r.vanishes_at_one = std::abs(c(1.0)) <= 1e-14;
    if (!r.vanishes_at_one) flag(1.0, "C(1) != 0");

    // Convexity: chord slopes nondecreasing.
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double s0 = (val[i] - val[i - 1]) / (u_grid[i] - u_grid[i - 1]);
      const double s1 = (val[i + 1] - val[i]) / (u_grid[i + 1] - u_grid[i]);
      if (s1 - s0 < -1e-9 * (1.0 + std::abs(s0) + std::abs(s1))) {
        r.convex = false;
        flag(u_grid[i], "not convex");
        break;
      }
    }

    bool flat = true;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const double tol = 1e-8 * (1.0 + std::abs(h[i]) + std::abs(h[i + 1]));
      const double dh = h[i + 1] - h[i];
      if (std::abs(dh) > tol) flat = false;
      if (dh < -tol && r.slope_monotone) {
        r.slope_monotone = false;
        flag(u_grid[i], "u C'(u) - u decreasing");
        r.violation_lo = u_grid[i];
        std::size_t j = i;
        while (j + 1 < n && h[j + 1] - h[j] < -1e-8 * (1.0 + std::abs(h[j]) + std::abs(h[j + 1]))) ++j;
        r.violation_hi = u_grid[j];
      }
    }
    r.slope_constant = r.slope_monotone && flat;

    report.pass = report.pass && r.pass();
    report.edges.push_back(std::move(r));
  }
  return report;
}

IsaacsReport check_isaacs(const CostModel& model, std::size_t edge, double xi,
                          std::span<const double> u_grid, std::span<const double> q_grid) {
  if (u_grid.size() < 3 || q_grid.size() < 3) throw ArgumentError("minimax check needs grids of >= 3 points");
  require_increasing(u_grid, "u grid");
  require_increasing(q_grid, "q grid");

  const double g = model.gamma(edge);
  const CostFunction& c = model.cost(edge);
  const auto L = [&](double u, double q) { return q * xi + transformed_cost_integrand(model, edge, u, q); };

  const std::size_t nu = u_grid.size();
  const std::size_t nq = q_grid.size();
  std::vector<double> table(nu * nq);
  for (std::size_t j = 0; j < nu; ++j) {
    for (std::size_t i = 0; i < nq; ++i) table[j * nq + i] = L(u_grid[j], q_grid[i]);
  }

  // inf over q of the grid sup over u.
  std::size_t best_q = 0;
  double best_sup = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < nq; ++i) {
    double s = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < nu; ++j) s = std::max(s, table[j * nq + i]);
    if (s < best_sup) {
      best_sup = s;
      best_q = i;
    }
  }
  // sup over u of the grid inf over q.
  std::size_t best_u = 0;
  double best_inf = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < nu; ++j) {
    double s = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < nq; ++i) s = std::min(s, table[j * nq + i]);
    if (s > best_inf) {
      best_inf = s;
      best_u = j;
    }
  }

  // Refined inner problems.
  const auto refined_sup_u = [&](double q) {
    const TransformedCost f = transformed_cost(model, edge, q);
    return q * xi + f.value;
  };
  const auto refined_inf_q = [&](double u) {
    std::size_t k = 0;
    double v = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < nq; ++i) {
      const double w = L(u, q_grid[i]);
      if (w < v) {
        v = w;
        k = i;
      }
    }
    const double lo = k == 0 ? 0.0 : q_grid[k - 1];
    const double hi = k + 1 == nq ? q_grid[k] : q_grid[k + 1];
    const auto [qs, vs] = minimize_on_interval([&](double q) { return L(u, q); }, lo, hi);
    (void)qs;
    return std::min(v, vs);
  };

  IsaacsReport report;
  report.edge = edge;
  report.xi = xi;
  {
    const double lo = q_grid[best_q == 0 ? 0 : best_q - 1];
    const double hi = q_grid[std::min(best_q + 1, nq - 1)];
    const auto [qs, vs] = minimize_on_interval(refined_sup_u, lo, hi);
    (void)qs;
    report.inf_sup = std::min(vs, refined_sup_u(q_grid[best_q]));
  }
  {
    const double lo = u_grid[best_u == 0 ? 0 : best_u - 1];
    const double hi = u_grid[std::min(best_u + 1, nu - 1)];
    const auto [us, vs] = minimize_on_interval([&](double u) { return -refined_inf_q(u); }, lo, hi);
    (void)us;
    report.sup_inf = std::max(-vs, refined_inf_q(u_grid[best_u]));
  }
  report.gap = report.inf_sup - report.sup_inf;

  const double z = -std::expm1(-xi);
  const DualGradientSample dual = legendre_dual(model, edge, z);
  report.closed_form = dual.unbounded() ? std::numeric_limits<double>::infinity() : g * dual.value;

  for (std::size_t j = 0; j < nu; ++j) {
    const double u = u_grid[j];
    const double q_opt = u * std::exp(-xi);
    if (!(q_opt > q_grid.front() && q_opt < q_grid.back())) continue;
    const double closed = u * z - g * c(u / g);
    report.inner_closed_form_error = std::max(report.inner_closed_form_error, std::abs(refined_inf_q(u) - closed));
    ++report.inner_checked;
  }
  return report;
}

namespace {

// Maximizer of the integrand in u for a given q; decreasing in q for admissible costs.
double integrand_argmax(const CostModel& model, std::size_t e, double q) {
  return transformed_cost(model, e, q).maximizer;
}

}  // namespace

FBoundsReport check_transformed_cost_bounds(const CostModel& model, std::size_t edge, double epsilon,
                                            std::span<const double> q_grid, std::size_t convexity_pairs,
                                            std::uint64_t seed) {
  if (!model.tail_exponent_p()) throw UnsupportedCheckError("F bound check needs the model's tail exponent p");
  if (!(epsilon > 0.0)) throw ArgumentError("epsilon must be positive");
  if (q_grid.empty()) throw ArgumentError("empty q grid");
  for (double q : q_grid) {
    if (q < epsilon) throw ArgumentError("q grid must lie in [epsilon, inf)");
  }
  const double p = *model.tail_exponent_p();

  const auto cap = [&](std::size_t e, double q) {
    const double g = model.gamma(e);
    return g * std::pow(g / q, 1.0 / p);
  };

  // M: uniform over edges, no larger than the integrand's maximizer wherever the
  // power-law cap would overshoot it.
  std::vector<double> scan = log_grid(1e-6 * model.gamma_min(), 1e6 * model.gamma_max(), 241);
  scan.insert(scan.end(), q_grid.begin(), q_grid.end());
  double M = std::numeric_limits<double>::infinity();
  double largest_argmax = 0.0;
  for (std::size_t e = 0; e < model.num_edges(); ++e) {
    for (double q : scan) {
      const double us = integrand_argmax(model, e, q);
      largest_argmax = std::max(largest_argmax, us);
      if (cap(e, q) > us) M = std::min(M, us);
    }
  }
  if (!std::isfinite(M)) M = largest_argmax;

  const auto m1 = [&](std::size_t e, double q) { return std::min(cap(e, q), M); };
  double M_bar = 0.0;
  for (std::size_t e = 0; e < model.num_edges(); ++e) {
    M_bar = std::max({M_bar, m1(e, epsilon), integrand_argmax(model, e, epsilon)});
  }

  FBoundsReport r;
  r.edge = edge;
  r.p = p;
  r.epsilon = epsilon;
  r.M = M;
  r.M_bar = M_bar;
  r.points = q_grid.size();
  r.min_lower_slack = std::numeric_limits<double>::infinity();
  r.min_upper_slack = std::numeric_limits<double>::infinity();
  const double g = model.gamma(edge);

  std::vector<double> F(q_grid.size());
  for (std::size_t i = 0; i < q_grid.size(); ++i) {
    const double q = q_grid[i];
    F[i] = transformed_cost(model, edge, q).value;
    const double tol = 1e-9 * (1.0 + std::abs(F[i]));
    const double lower = g * entropy_integrand(q / g);
    const double upper = q * std::log(q / m1(edge, q)) + M_bar;
    r.min_lower_slack = std::min(r.min_lower_slack, F[i] - lower);
    r.min_upper_slack = std::min(r.min_upper_slack, upper - F[i]);
    if (F[i] < lower - tol) {
      r.lower_ok = false;
      if (!r.first_violation) r.first_violation = q;
    }
    if (F[i] > upper + tol) {
      r.upper_ok = false;
      if (!r.first_violation) r.first_violation = q;
    }
  }
  r.F_at_gamma = transformed_cost(model, edge, g).value;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, q_grid.size() - 1);
  for (std::size_t k = 0; k < convexity_pairs; ++k) {
    const std::size_t a = pick(rng);
    const std::size_t b = pick(rng);
    const double mid = transformed_cost(model, edge, 0.5 * (q_grid[a] + q_grid[b])).value;
    const double chord = 0.5 * (F[a] + F[b]);
    if (mid > chord + 1e-9 * (1.0 + std::abs(chord))) {
      r.convex_ok = false;
      if (!r.first_violation) r.first_violation = 0.5 * (q_grid[a] + q_grid[b]);
    }
  }
  return r;
}

GrowthReport check_growth_conditions(const CostModel& model) {
  GrowthReport report;
  std::vector<double> candidates;
  if (model.tail_exponent_p()) candidates.push_back(*model.tail_exponent_p());
  for (double p : {1.0, 0.5, 0.25, 0.1, 0.05}) candidates.push_back(p);

  for (std::size_t e = 0; e < model.num_edges(); ++e) {
    const CostFunction& c = model.cost(e);
    EdgeGrowthReport r;
    r.edge = e;

    auto probe = [&](double p) {
      std::vector<double> v;
      for (int k = 2; k <= 10; ++k) {
        const double u = std::pow(10.0, -k);
        v.push_back(std::pow(u, p + 1.0) * c.derivative(u));
      }
      return v;
    };
    for (double p : candidates) {
      auto v = probe(p);
      bool ok = std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
      for (std::size_t i = 1; ok && i < v.size(); ++i) ok = v[i] < v[i - 1];
      ok = ok && v.back() <= -1e3;
      if (ok) {
        r.growth_at_zero = true;
        r.p_used = p;
        r.zero_probe = std::move(v);
        break;
      }
    }
    if (!r.growth_at_zero) r.zero_probe = probe(candidates.front());

    const double u_big = 1e8;
    r.tail_literal = u_big * c.derivative(u_big) - u_big;
    const double v_big = u_big / model.gamma(e);
    r.tail_scaled = v_big * c.derivative(v_big) - v_big;
    r.tail_ok = std::isfinite(r.tail_literal) && r.tail_literal >= -1e-6;

    std::ostringstream diag;
    if (!r.growth_at_zero) diag << "u^(p+1) C'(u) does not diverge to -inf as u -> 0 for any probed p; ";
    if (!r.tail_ok) diag << "u C'(u) - u = " << r.tail_literal << " at u = 1e8 (needs liminf >= 0); ";
    r.diagnostic = diag.str();

    report.pass = report.pass && r.pass();
    report.edges.push_back(std::move(r));
  }
  return report;
}

}  // namespace rsmf
