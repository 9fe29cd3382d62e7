#pragma once

#include <functional>

namespace rsmf {

/// Where the supremum of a unimodal scalar objective was found.
enum class Attainment {
  interior,     ///< bracketed and refined maximizer
  at_zero,      ///< objective still increasing at the lower search limit, bounded
  at_infinity,  ///< objective still increasing at the upper search limit, bounded
  divergent,    ///< supremum is +infinity
};

const char* to_string(Attainment a);

struct UnimodalSearchOptions {
  double lower_ratio = 1e-12;  ///< smallest u probed is u0 * lower_ratio
  double upper_ratio = 1e8;    ///< largest u probed is u0 * upper_ratio
  double ceiling = 1e12;       ///< any objective value above this is treated as divergence
  int brent_bits = 26;         ///< relative bracket width 2^-bits in log u
};

struct UnimodalMax {
  double argmax = 0.0;
  double value = 0.0;
  Attainment status = Attainment::interior;
  double bracket_lo = 0.0;
  double bracket_hi = 0.0;
};

/// Maximizes a function of u > 0 that increases then decreases (either phase may be
/// empty). The search runs in log u: geometric expansion from u0 until the objective
/// drops, then Brent refinement inside the bracket. When the expansion runs off either
/// end, the tail is classified as bounded or divergent from the last increments.
UnimodalMax maximize_unimodal(const std::function<double(double)>& f, double u0,
                              const UnimodalSearchOptions& opts = {});

/// Minimizes a convex (or unimodal) function on [lo, hi] by Brent's method.
/// Returns (argmin, min).
std::pair<double, double> minimize_on_interval(const std::function<double(double)>& f,
                                               double lo, double hi, int bits = 40);

/// Root of a nondecreasing function on [lo, hi] by bisection; requires f(lo) <= 0 <= f(hi).
double bisect_increasing(const std::function<double(double)>& f, double lo, double hi,
                         double x_tol, int max_iter = 200);

}  // namespace rsmf
