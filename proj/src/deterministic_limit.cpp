#include "rsmf/deterministic_limit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "rsmf/cost_checks.hpp"
#include "rsmf/errors.hpp"

namespace rsmf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Euclidean projection of v onto { y >= 0, sum y = mass }.
std::vector<double> project_to_simplex(std::vector<double> v, double mass) {
  std::vector<double> s = v;
  std::sort(s.begin(), s.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    cum += s[k];
    const double t = (cum - mass) / static_cast<double>(k + 1);
    if (s[k] - t > 0.0) theta = t;
  }
  for (auto& x : v) x = std::max(x - theta, 0.0);
  return v;
}

// Raises coordinates below `floor` to it, taking the mass from the largest coordinate.
void keep_interior(std::vector<double>& m, double floor) {
  for (std::size_t x = 0; x < m.size(); ++x) {
    if (m[x] >= floor) continue;
    const auto big = std::max_element(m.begin(), m.end());
    *big -= floor - m[x];
    m[x] = floor;
  }
}

// Lawson-Hanson nonnegative least squares for small dense problems.
Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const Eigen::Index n = A.cols();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  const double tol = 1e-12;
  for (int outer = 0; outer < 3 * n + 10; ++outer) {
    Eigen::VectorXd w = A.transpose() * (b - A * x);
    Eigen::Index j = -1;
    double best = tol;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (!passive[k] && w[k] > best) {
        best = w[k];
        j = k;
      }
    }
    if (j < 0) break;
    passive[j] = true;
    for (int inner = 0; inner < 3 * n + 10; ++inner) {
      std::vector<Eigen::Index> P;
      for (Eigen::Index k = 0; k < n; ++k)
        if (passive[k]) P.push_back(k);
      Eigen::MatrixXd AP(A.rows(), static_cast<Eigen::Index>(P.size()));
      for (std::size_t k = 0; k < P.size(); ++k) AP.col(static_cast<Eigen::Index>(k)) = A.col(P[k]);
      const Eigen::VectorXd sP = AP.completeOrthogonalDecomposition().solve(b);
      Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
      bool positive = true;
      for (std::size_t k = 0; k < P.size(); ++k) {
        s[P[k]] = sP[static_cast<Eigen::Index>(k)];
        positive = positive && s[P[k]] > tol;
      }
      if (positive) {
        x = s;
        break;
      }
      double alpha = 1.0;
      for (Eigen::Index k : P)
        if (s[k] <= tol) alpha = std::min(alpha, x[k] / (x[k] - s[k]));
      x += alpha * (s - x);
      for (Eigen::Index k : P) {
        if (x[k] <= tol) {
          passive[k] = false;
          x[k] = 0.0;
        }
      }
    }
  }
  return x;
}

// Flux split of the direction plus cycle corrections; the start may sit on the boundary.
StraightLine build_line(const CostModel& model, std::span<const double> m, std::span<const double> m_tilde) {
  const std::size_t d = m.size();
  const std::size_t ne = model.num_edges();
  StraightLine line;
  line.start.assign(m.begin(), m.end());
  line.end.assign(m_tilde.begin(), m_tilde.end());
  line.flux.assign(ne, 0.0);
  for (std::size_t e = 0; e < ne; ++e) line.sources.push_back(model.edges()[e].from);
  line.direction.assign(d, 0.0);
  std::vector<double> diff(d);
  for (std::size_t x = 0; x < d; ++x) diff[x] = m_tilde[x] - m[x];
  line.duration = norm(diff);
  if (line.duration == 0.0) return line;
  for (std::size_t x = 0; x < d; ++x) line.direction[x] = diff[x] / line.duration;

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(ne));
  for (std::size_t e = 0; e < ne; ++e) {
    A(model.edges()[e].from, static_cast<Eigen::Index>(e)) -= 1.0;
    A(model.edges()[e].to, static_cast<Eigen::Index>(e)) += 1.0;
  }
  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(line.direction.data(), static_cast<Eigen::Index>(d));
  const Eigen::VectorXd f = nnls(A, b);
  for (std::size_t e = 0; e < ne; ++e) line.flux[e] = f[static_cast<Eigen::Index>(e)];

  // q(t) = f / mu_x(t) >= gamma needs f >= gamma * max(m_x, m_tilde_x) since mu_x is
  // linear along the segment. Adding the same flux around a cycle keeps the direction.
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t e = 0; e < ne; ++e) {
      const int x = model.edges()[e].from;
      const double need = model.gamma(e) * std::max(m[x], m_tilde[x]) - line.flux[e];
      if (need <= 0.0) continue;
      for (std::size_t c : model.edges().cycle_through(e)) line.flux[c] += need;
      changed = true;
    }
  }
  Eigen::VectorXd fe(static_cast<Eigen::Index>(ne));
  for (std::size_t e = 0; e < ne; ++e) fe[static_cast<Eigen::Index>(e)] = line.flux[e];
  line.residual = (A * fe - b).norm();
  line.max_flux = *std::max_element(line.flux.begin(), line.flux.end());
  return line;
}

PiecewiseControl line_to_piecewise(const CostModel& model, const StraightLine& line, std::size_t segments) {
  PiecewiseControl pc;
  pc.duration = line.duration;
  pc.rates.assign(segments, std::vector<double>(model.num_edges()));
  for (std::size_t k = 0; k < segments; ++k) {
    const double t = (k + 0.5) * line.duration / static_cast<double>(segments);
    for (std::size_t e = 0; e < model.num_edges(); ++e) {
      const int x = model.edges()[e].from;
      pc.rates[k][e] = line.flux[e] / (line.start[x] + t * line.direction[x]);
    }
  }
  return pc;
}

PiecewiseControl refine(const PiecewiseControl& c, std::size_t segments) {
  PiecewiseControl out;
  out.duration = c.duration;
  out.rates.resize(segments);
  const std::size_t k = c.rates.size();
  for (std::size_t s = 0; s < segments; ++s) {
    // Segment s of the finer partition, evaluated at its midpoint in the coarse one.
    const double mid = (s + 0.5) / static_cast<double>(segments);
    out.rates[s] = c.rates[std::min(k - 1, static_cast<std::size_t>(mid * k))];
  }
  return out;
}

}  // namespace

ControlPath PiecewiseControl::path() const {
  ControlPath p;
  const std::size_t k = rates.size();
  for (std::size_t s = 1; s < k; ++s) p.breakpoints.push_back(duration * s / static_cast<double>(k));
  auto r = rates;
  p.at = [r = std::move(r)](double, std::size_t piece, std::span<double> q) {
    const auto& row = r[std::min(piece, r.size() - 1)];
    std::copy(row.begin(), row.end(), q.begin());
  };
  return p;
}

ControlPath StraightLine::path() const {
  ControlPath p;
  p.at = [start = start, dir = direction, flux = flux, from = sources](double t, std::size_t, std::span<double> q) {
    for (std::size_t e = 0; e < flux.size(); ++e) {
      const double mu = start[from[e]] + t * dir[from[e]];
      q[e] = mu > 0.0 ? flux[e] / mu : 0.0;
    }
  };
  return p;
}

double target_margin(const TargetKind& kind, std::span<const double> m) {
  if (const auto* h = std::get_if<HalfSpace>(&kind)) {
    const double v = m[h->coordinate];
    return h->at_least ? h->threshold - v : v - h->threshold;
  }
  if (const auto* b = std::get_if<Ball>(&kind)) {
    double s = 0.0;
    for (std::size_t x = 0; x < m.size(); ++x) s += (m[x] - b->center[x]) * (m[x] - b->center[x]);
    return std::sqrt(s) - b->radius;
  }
  throw ArgumentError("continuous target needs a half-space or a ball");
}

double distance_to_target(const TargetKind& kind, std::span<const double> m) {
  const double g = std::max(0.0, target_margin(kind, m));
  if (std::holds_alternative<HalfSpace>(kind)) {
    // Moving one coordinate by delta inside the simplex costs delta * sqrt(d / (d - 1)).
    const double d = static_cast<double>(m.size());
    return g * std::sqrt(d / (d - 1.0));
  }
  return g;
}

std::vector<double> interior_target_point(const TargetKind& kind, std::span<const double> m, double margin) {
  const std::size_t d = m.size();
  const double floor = 1e-3;
  std::vector<double> out(m.begin(), m.end());
  if (const auto* h = std::get_if<HalfSpace>(&kind)) {
    const int x = h->coordinate;
    double c = h->at_least ? h->threshold + margin : h->threshold - margin;
    c = std::clamp(c, floor, 1.0 - floor * (d - 1));
    if (h->at_least ? m[x] >= c : m[x] <= c) {
      c = m[x];
    }
    std::vector<double> rest;
    for (std::size_t y = 0; y < d; ++y)
      if (static_cast<int>(y) != x) rest.push_back(m[y]);
    rest = project_to_simplex(rest, 1.0 - c);
    for (std::size_t y = 0, k = 0; y < d; ++y) out[y] = static_cast<int>(y) == x ? c : rest[k++];
  } else if (const auto* b = std::get_if<Ball>(&kind)) {
    std::vector<double> dir(d);
    for (std::size_t y = 0; y < d; ++y) dir[y] = m[y] - b->center[y];
    const double len = norm(dir);
    const double reach = std::max(b->radius - margin, 0.0);
    if (len > reach) {
      for (std::size_t y = 0; y < d; ++y) out[y] = b->center[y] + (len > 0 ? reach * dir[y] / len : 0.0);
    }
    out = project_to_simplex(out, 1.0);
  } else {
    throw ArgumentError("continuous target needs a half-space or a ball");
  }
  keep_interior(out, floor);
  return out;
}

Trajectory integrate_path(const CostModel& model, std::span<const double> m0, const ControlPath& control,
                          double duration, const IntegrateOptions& opts) {
  const std::size_t d = m0.size();
  const std::size_t ne = model.num_edges();
  if (static_cast<int>(d) != model.num_states()) throw ArgumentError("initial point has the wrong dimension");
  if (!(opts.h > 0.0)) throw ArgumentError("step must be positive");
  if (!(duration >= 0.0)) throw ArgumentError("duration must be nonnegative");

  Trajectory tr;
  std::vector<double> mu(m0.begin(), m0.end());
  double t = 0.0, cost = 0.0;
  if (opts.record) {
    tr.t.push_back(0.0);
    tr.mu.push_back(mu);
  }
  double margin = opts.target ? target_margin(*opts.target, mu) : kInf;
  if (margin <= 0.0) {
    tr.exited = true;
    tr.exit_time = 0.0;
    return tr;
  }

  std::vector<double> q(ne), last_q(ne, std::numeric_limits<double>::quiet_NaN()), last_F(ne, 0.0);
  const auto F_of = [&](std::size_t e, double r) {
    if (r == last_q[e]) return last_F[e];
    last_q[e] = r;
    last_F[e] = r == model.gamma(e) ? 0.0 : transformed_cost(model, e, r).value;
    return last_F[e];
  };
  const auto drift = [&](double s, std::size_t piece, const std::vector<double>& m, std::vector<double>& dm,
                         double& dc) {
    control.at(s, piece, q);
    std::fill(dm.begin(), dm.end(), 0.0);
    dc = opts.accumulate_cost ? model.reward_at(m) : 0.0;
    for (std::size_t e = 0; e < ne; ++e) {
      const auto [x, y] = model.edges()[e];
      const double flux = m[x] * q[e];
      dm[x] -= flux;
      dm[y] += flux;
      if (opts.accumulate_cost && m[x] != 0.0) dc += m[x] * F_of(e, q[e]);
    }
  };

  const auto& bp = control.breakpoints;
  std::size_t piece = 0;
  std::vector<double> k1(d), k2(d), k3(d), k4(d), tmp(d), next(d);
  double c1, c2, c3, c4;
  const double eps = 1e-12 * std::max(1.0, duration);
  while (t < duration - eps) {
    while (piece < bp.size() && bp[piece] <= t + eps) ++piece;
    double step = std::min(opts.h, duration - t);
    if (piece < bp.size()) step = std::min(step, bp[piece] - t);
    drift(t, piece, mu, k1, c1);
    if (opts.record) tr.q.emplace_back(q.begin(), q.end());
    for (std::size_t x = 0; x < d; ++x) tmp[x] = mu[x] + 0.5 * step * k1[x];
    drift(t + 0.5 * step, piece, tmp, k2, c2);
    for (std::size_t x = 0; x < d; ++x) tmp[x] = mu[x] + 0.5 * step * k2[x];
    drift(t + 0.5 * step, piece, tmp, k3, c3);
    for (std::size_t x = 0; x < d; ++x) tmp[x] = mu[x] + step * k3[x];
    drift(t + step, piece, tmp, k4, c4);
    double lowest = kInf, sum = 0.0;
    for (std::size_t x = 0; x < d; ++x) {
      next[x] = mu[x] + step / 6.0 * (k1[x] + 2 * k2[x] + 2 * k3[x] + k4[x]);
      lowest = std::min(lowest, next[x]);
    }
    if (lowest < -1e-6) throw StepSizeError("integrator left the simplex; reduce the step");
    for (double& v : next) {
      v = std::max(v, 0.0);
      sum += v;
    }
    for (double& v : next) v /= sum;
    const double next_cost = cost + step / 6.0 * (c1 + 2 * c2 + 2 * c3 + c4);

    if (opts.target) {
      const double next_margin = target_margin(*opts.target, next);
      if (next_margin <= 0.0) {
        const double w = margin / (margin - next_margin);
        for (std::size_t x = 0; x < d; ++x) next[x] = mu[x] + w * (next[x] - mu[x]);
        tr.exited = true;
        tr.exit_time = t + w * step;
        cost += w * (next_cost - cost);
        if (opts.record) {
          tr.t.push_back(*tr.exit_time);
          tr.mu.push_back(next);
        }
        tr.running_cost = cost;
        return tr;
      }
      margin = next_margin;
    }
    mu = next;
    cost = next_cost;
    t += step;
    if (opts.record) {
      tr.t.push_back(t);
      tr.mu.push_back(mu);
    }
  }
  tr.running_cost = cost;
  return tr;
}

StraightLine straight_line_control(const CostModel& model, std::span<const double> m,
                                   std::span<const double> m_tilde) {
  if (static_cast<int>(m.size()) != model.num_states() || m_tilde.size() != m.size())
    throw ArgumentError("points have the wrong dimension");
  for (std::size_t x = 0; x < m.size(); ++x) {
    if (!(m[x] > 0.0) || !(m_tilde[x] > 0.0))
      throw PreconditionError("straight-line control needs both endpoints in the interior of the simplex");
  }
  return build_line(model, m, m_tilde);
}

double straight_line_cost(const CostModel& model, const StraightLine& line, double h) {
  if (line.duration == 0.0) return 0.0;
  IntegrateOptions o;
  o.h = std::min(h, line.duration / 10.0);
  o.record = false;
  return integrate_path(model, line.start, line.path(), line.duration, o).running_cost;
}

double deterministic_objective(const CostModel& model, const TargetKind& target, std::span<const double> m0,
                               const PiecewiseControl& control, double h_fraction, double penalty, bool* exited) {
  IntegrateOptions o;
  o.h = h_fraction * control.duration;
  o.target = &target;
  o.record = false;
  const Trajectory tr = integrate_path(model, m0, control.path(), control.duration, o);
  if (exited) *exited = tr.exited;
  if (tr.exited) return tr.running_cost;
  // Without a recorded path, re-run to get the end point.
  IntegrateOptions r = o;
  r.record = true;
  r.accumulate_cost = false;
  const Trajectory end = integrate_path(model, m0, control.path(), control.duration, r);
  const double dist = distance_to_target(target, end.mu.back());
  return tr.running_cost + penalty * dist * dist;
}

OptimizeResult optimize_V(const CostModel& model, const TargetKind& target, std::span<const double> m0,
                          const OptimizeOptions& opts) {
  const std::size_t ne = model.num_edges();
  const std::size_t K = std::max<std::size_t>(1, opts.segments);
  OptimizeResult res;
  if (target_margin(target, m0) <= 0.0) {
    res.exited = true;
    res.control.duration = 0.0;
    res.control.rates.assign(K, std::vector<double>(model.gammas().begin(), model.gammas().end()));
    res.trajectory.t = {0.0};
    res.trajectory.mu = {std::vector<double>(m0.begin(), m0.end())};
    res.trajectory.exited = true;
    res.trajectory.exit_time = 0.0;
    return res;
  }

  // Initial guesses.
  std::vector<std::pair<std::string, PiecewiseControl>> starts;
  const std::vector<double> tilde = interior_target_point(target, m0, opts.interior_margin);
  const StraightLine line = build_line(model, m0, tilde);
  const double base_duration = line.duration > 0.0 ? line.duration : 1.0;
  PiecewiseControl nominal;
  nominal.duration = 2.0 * base_duration;
  nominal.rates.assign(K, std::vector<double>(model.gammas().begin(), model.gammas().end()));
  starts.emplace_back("nominal", nominal);
  const PiecewiseControl straight = line_to_piecewise(model, line, K);
  starts.emplace_back("straight_line", straight);
  for (std::size_t r = 0; r < opts.random_restarts; ++r) {
    std::mt19937_64 rng(opts.seed * 1000003ULL + r);
    std::normal_distribution<double> jitter(0.0, 0.5), stretch(0.0, 0.2);
    PiecewiseControl c = straight;
    for (auto& row : c.rates)
      for (auto& v : row) v *= std::exp(jitter(rng));
    c.duration *= std::exp(stretch(rng));
    starts.emplace_back("random_" + std::to_string(r), c);
  }
  if (opts.warm_start) starts.emplace_back("warm_start", refine(*opts.warm_start, K));

  const double penalty = opts.penalty.value_or(1e3 * std::max(model.reward().max_over_simplex(model.num_states()), 1.0) *
                                               nominal.duration);

  // Parameters: log rates (segment-major) then log duration.
  const std::size_t P = K * ne + 1;
  const auto unpack = [&](const std::vector<double>& th) {
    PiecewiseControl c;
    c.rates.assign(K, std::vector<double>(ne));
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t e = 0; e < ne; ++e) c.rates[k][e] = std::exp(th[k * ne + e]);
    c.duration = std::exp(th[K * ne]);
    return c;
  };
  const auto pack = [&](const PiecewiseControl& c) {
    std::vector<double> th(P);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t e = 0; e < ne; ++e) th[k * ne + e] = std::log(std::max(c.rates[k][e], 1e-300));
    th[K * ne] = std::log(c.duration);
    return th;
  };
  std::vector<double> lo(P), hi(P);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t e = 0; e < ne; ++e) {
      lo[k * ne + e] = std::log(1e-4 * model.gamma(e));
      hi[k * ne + e] = std::log(1e4 * model.gamma(e));
    }
  }
  lo[K * ne] = std::log(1e-3 * base_duration);
  hi[K * ne] = std::log(1e3 * base_duration);

  std::vector<std::vector<double>> finals(starts.size());
  std::vector<double> final_obj(starts.size());
  res.restarts.resize(starts.size());
  parallel_for(starts.size(), opts.workers, [&](std::size_t s) {
    std::vector<double> th = pack(starts[s].second);
    for (std::size_t i = 0; i < P; ++i) th[i] = std::clamp(th[i], lo[i], hi[i]);
    const auto f = [&](const std::vector<double>& x) {
      return deterministic_objective(model, target, m0, unpack(x), opts.h_fraction, penalty);
    };
    double best = f(th);
    RestartOutcome out;
    out.label = starts[s].first;
    out.initial_objective = best;
    std::vector<double> step(P, opts.initial_step);
    for (std::size_t round = 0; round < opts.max_rounds; ++round) {
      if (*std::max_element(step.begin(), step.end()) < opts.min_step) break;
      for (std::size_t i = 0; i < P; ++i) {
        if (step[i] < opts.min_step) continue;
        bool moved = false;
        for (double sign : {1.0, -1.0}) {
          std::vector<double> trial = th;
          trial[i] = std::clamp(th[i] + sign * step[i], lo[i], hi[i]);
          if (trial[i] == th[i]) continue;
          const double v = f(trial);
          if (v < best) {
            best = v;
            th = std::move(trial);
            moved = true;
            break;
          }
        }
        step[i] = moved ? std::min(2.0 * step[i], 4.0) : 0.5 * step[i];
      }
    }
    bool exited = false;
    deterministic_objective(model, target, m0, unpack(th), opts.h_fraction, penalty, &exited);
    out.final_objective = best;
    out.exited = exited;
    res.restarts[s] = out;
    finals[s] = th;
    final_obj[s] = best;
  });

  std::size_t pick = 0;
  for (std::size_t s = 1; s < starts.size(); ++s) {
    const bool better_exit = res.restarts[s].exited && !res.restarts[pick].exited;
    const bool same_exit = res.restarts[s].exited == res.restarts[pick].exited;
    if (better_exit || (same_exit && final_obj[s] < final_obj[pick])) pick = s;
  }
  res.control = unpack(finals[pick]);
  IntegrateOptions o;
  o.h = opts.h_fraction * res.control.duration;
  o.target = &target;
  res.trajectory = integrate_path(model, m0, res.control.path(), res.control.duration, o);
  res.exited = res.trajectory.exited;
  res.cost = res.exited ? res.trajectory.running_cost : final_obj[pick];
  if (!res.exited) res.warnings.push_back("no restart reached the target; the reported cost is penalty dominated");
  return res;
}

TrackingControl::TrackingControl(const CostModel& model, std::shared_ptr<const Trajectory> reference, double r2)
    : model_(&model), reference_(std::move(reference)), r2_(r2) {}

void TrackingControl::rates(double t, std::span<const int> counts, std::span<double> q) {
  const auto& ref = *reference_;
  const std::size_t ne = model_->num_edges();
  if (!reverted_ && t < ref.t.back()) {
    const auto it = std::upper_bound(ref.t.begin(), ref.t.end(), t);
    const std::size_t j = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - ref.t.begin() - 1, 0));
    const std::size_t j1 = std::min(j + 1, ref.t.size() - 1);
    const double span = ref.t[j1] - ref.t[j];
    const double w = span > 0.0 ? (t - ref.t[j]) / span : 0.0;
    const int n = std::accumulate(counts.begin(), counts.end(), 0);
    std::vector<double> mu_ref(counts.size()), mu_n(counts.size());
    double dist = 0.0;
    for (std::size_t x = 0; x < counts.size(); ++x) {
      mu_ref[x] = (1 - w) * ref.mu[j][x] + w * ref.mu[j1][x];
      mu_n[x] = counts[x] / static_cast<double>(n);
      dist += (mu_n[x] - mu_ref[x]) * (mu_n[x] - mu_ref[x]);
    }
    if (std::sqrt(dist) > r2_) {
      reverted_ = true;
    } else {
      const auto& qr = ref.q[std::min(j, ref.q.size() - 1)];
      for (std::size_t e = 0; e < ne; ++e) {
        const int x = model_->edges()[e].from;
        q[e] = qr[e] * mu_n[x] / mu_ref[x];
      }
      return;
    }
  }
  for (std::size_t e = 0; e < ne; ++e) q[e] = model_->gamma(e);
}

ControlFactory tracking_policy(const CostModel& model, std::shared_ptr<const Trajectory> reference, double r2) {
  if (!reference || reference->t.size() < 2 || reference->q.empty()) throw ArgumentError("empty reference path");
  for (const auto& m : reference->mu)
    for (double v : m)
      if (!(v > 0.0)) throw PreconditionError("reference path touches the simplex boundary");
  return [&model, reference, r2] { return std::make_unique<TrackingControl>(model, reference, r2); };
}

TrackingResult tracking_experiment(const CostModel& model, const TargetKind& target, std::span<const double> m0,
                                   std::span<const int> n_list, double r2, std::size_t trials, std::uint64_t seed,
                                   const OptimizeOptions& opts, double overshoot) {
  const OptimizeResult opt = optimize_V(model, target, m0, opts);
  if (!opt.exited || !opt.trajectory.exit_time) throw PreconditionError("reference trajectory does not reach the target");
  TrackingResult out;
  out.deterministic_cost = opt.cost;
  IntegrateOptions o;
  o.h = opts.h_fraction * opt.control.duration;
  const double horizon = *opt.trajectory.exit_time * (1.0 + overshoot);
  auto reference = std::make_shared<Trajectory>(integrate_path(model, m0, opt.control.path(), horizon, o));
  const ControlFactory factory = tracking_policy(model, reference, r2);

  for (int n : n_list) {
    SimplexGrid grid(n, model.edges());
    TargetSet tset(grid, target);
    const std::size_t start = grid.index(round_to_lattice(m0, n));
    std::vector<double> cost(trials);
    std::vector<std::uint8_t> left(trials), cens(trials);
    parallel_for(trials, opts.workers, [&](std::size_t k) {
      auto control = factory();
      auto* tc = static_cast<TrackingControl*>(control.get());
      const PathSample p = simulate_meanfield_timed(grid, tset, model, *control, start, seed, k, 50.0 * horizon);
      cost[k] = p.additive_cost;
      left[k] = tc->reverted();
      cens[k] = p.censored;
    });
    TrackingRow row;
    row.n = n;
    std::vector<double> kept;
    std::size_t exits = 0;
    for (std::size_t k = 0; k < trials; ++k) {
      exits += left[k];
      if (cens[k]) {
        ++row.censored;
      } else {
        kept.push_back(cost[k]);
      }
    }
    if (!kept.empty()) {
      const double mean = pairwise_sum(kept) / static_cast<double>(kept.size());
      std::vector<double> sq(kept.size());
      for (std::size_t k = 0; k < kept.size(); ++k) sq[k] = (kept[k] - mean) * (kept[k] - mean);
      row.cost = mean;
      row.stderr_ = kept.size() > 1 ? std::sqrt(pairwise_sum(sq) / (kept.size() - 1.0) / kept.size()) : 0.0;
    }
    row.tube_exit_fraction = static_cast<double>(exits) / static_cast<double>(trials);
    out.rows.push_back(row);
  }
  return out;
}

ConvergenceResult convergence_study(const CostModel& model, const TargetKind& target, std::span<const int> n_list,
                                    const OptimizeOptions& opts, const SolveVOptions& solver) {
  const GrowthReport gate = check_growth_conditions(model);
  if (!gate.pass) {
    std::string why = "cost fails the growth conditions needed for convergence:";
    for (const auto& e : gate.edges)
      if (!e.pass()) why += " [edge " + std::to_string(e.edge) + "] " + e.diagnostic;
    throw PreconditionError(why);
  }
  if (n_list.empty()) throw ArgumentError("empty n list");
  std::vector<int> ns(n_list.begin(), n_list.end());
  std::sort(ns.begin(), ns.end());
  const int n0 = ns.front();
  for (int n : ns)
    if (n % n0 != 0) throw ArgumentError("every n must be a multiple of the smallest");

  ConvergenceResult out;
  out.coarse_n = n0;
  SimplexGrid coarse(n0, model.num_states());
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    const auto c = coarse.counts(i);
    out.coarse_points.emplace_back(c.begin(), c.end());
    out.reference.push_back(optimize_V(model, target, coarse.point(i), opts).cost);
  }
  for (int n : ns) {
    SimplexGrid grid(n, model.edges());
    TargetSet tset(grid, target);
    const auto v = solve_V(grid, tset, model, solver);
    ConvergenceRow row;
    row.n = n;
    std::vector<double> at;
    for (std::size_t i = 0; i < coarse.size(); ++i) {
      std::vector<int> k = out.coarse_points[i];
      for (int& c : k) c *= n / n0;
      at.push_back(v.field.values[grid.index(k)]);
      const double g = std::abs(at.back() - out.reference[i]);
      if (g > row.gap) {
        row.gap = g;
        row.worst = i;
      }
    }
    out.lattice.push_back(std::move(at));
    out.rows.push_back(row);
  }
  out.decreasing = true;
  for (std::size_t r = 1; r < out.rows.size(); ++r) out.decreasing = out.decreasing && out.rows[r].gap < out.rows[r - 1].gap;
  out.final_over_initial = out.rows.front().gap > 0.0 ? out.rows.back().gap / out.rows.front().gap : 0.0;
  return out;
}

}  // namespace rsmf
