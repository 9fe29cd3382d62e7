#include "rsmf/scalar_search.hpp"

#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <limits>
#include <utility>

namespace rsmf {

const char* to_string(Attainment a) {
  switch (a) {
    case Attainment::interior: return "interior";
    case Attainment::at_zero: return "boundary_at_zero";
    case Attainment::at_infinity: return "boundary_at_infinity";
    case Attainment::divergent: return "divergent";
  }
  return "unknown";
}

namespace {

constexpr double kGolden = 1.618033988749895;

// Objective in log coordinates; NaN and -inf are mapped to -inf so comparisons stay total.
struct LogObjective {
  const std::function<double(double)>& f;
  double operator()(double t) const {
    const double v = f(std::exp(t));
    return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
  }
};

// Tail classification at the end of a run-away expansion: the last two doubling
// increments decide between a bounded limit and divergence.
bool tail_diverges(const LogObjective& g, double t_end, int dir, double value, double ceiling) {
  if (value > ceiling || std::isinf(value)) return true;
  const double ln2 = std::log(2.0);
  const double v1 = g(t_end - dir * ln2);
  const double v2 = g(t_end - 2 * dir * ln2);
  const double d1 = value - v1;
  const double d2 = v1 - v2;
  const double tol = 1e-7 * (1.0 + std::abs(value));
  return d1 > tol && d1 >= 0.5 * d2;
}

}  // namespace

UnimodalMax maximize_unimodal(const std::function<double(double)>& f, double u0,
                              const UnimodalSearchOptions& opts) {
  const LogObjective g{f};
  const double t0 = std::log(u0);
  const double t_min = t0 + std::log(opts.lower_ratio);
  const double t_max = t0 + std::log(opts.upper_ratio);

  double step = 0.5;
  const double f0 = g(t0);
  const double fp = g(t0 + step);
  const double fm = g(t0 - step);

  double lo, hi;
  if (!(fp > f0) && !(fm > f0)) {
    lo = t0 - step;
    hi = t0 + step;
  } else {
    const int dir = fp >= fm ? 1 : -1;
    const double t_limit = dir > 0 ? t_max : t_min;
    double a = t0;
    double b = t0 + dir * step;
    double fb = dir > 0 ? fp : fm;
    for (;;) {
      step *= kGolden;
      double c = b + dir * step;
      const bool clipped = dir > 0 ? c >= t_limit : c <= t_limit;
      if (clipped) c = t_limit;
      const double fc = g(c);
      if (fc > opts.ceiling) {
        return {std::exp(c), std::numeric_limits<double>::infinity(), Attainment::divergent,
                std::exp(std::min(a, c)), std::exp(std::max(a, c))};
      }
      if (!(fc > fb)) {
        lo = std::min(a, c);
        hi = std::max(a, c);
        break;
      }
      if (clipped) {
        if (tail_diverges(g, c, dir, fc, opts.ceiling)) {
          return {std::exp(c), std::numeric_limits<double>::infinity(), Attainment::divergent,
                  std::exp(std::min(b, c)), std::exp(std::max(b, c))};
        }
        return {std::exp(c), fc, dir > 0 ? Attainment::at_infinity : Attainment::at_zero,
                std::exp(std::min(b, c)), std::exp(std::max(b, c))};
      }
      a = b;
      b = c;
      fb = fc;
    }
  }

  const auto neg = [&](double t) { return -g(t); };
  const auto [t_star, neg_val] = boost::math::tools::brent_find_minima(neg, lo, hi, opts.brent_bits);
  return {std::exp(t_star), -neg_val, Attainment::interior, std::exp(lo), std::exp(hi)};
}

std::pair<double, double> minimize_on_interval(const std::function<double(double)>& f,
                                               double lo, double hi, int bits) {
  bits = std::min(bits, std::numeric_limits<double>::digits / 2);
  const auto r = boost::math::tools::brent_find_minima(f, lo, hi, bits);
  return {r.first, r.second};
}

double bisect_increasing(const std::function<double(double)>& f, double lo, double hi,
                         double x_tol, int max_iter) {
  for (int i = 0; i < max_iter && hi - lo > x_tol; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (f(mid) > 0.0) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace rsmf
