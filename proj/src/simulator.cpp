#include "rsmf/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "rsmf/errors.hpp"

namespace rsmf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double exponential(std::mt19937_64& rng, double rate) {
  // 53-bit uniform in (0, 1].
  const double u = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
  return -std::log(u) / rate;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double running_F(const CostModel& model, std::size_t e, double q) {
  if (q == model.gamma(e)) return 0.0;
  return transformed_cost(model, e, q).value;
}

double running_C(const CostModel& model, std::size_t e, double u) {
  const double g = model.gamma(e);
  return g * model.cost(e)(u / g);
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_and_stderr(const std::vector<double>& v) {
  MeanSe r;
  if (v.empty()) return r;
  const double n = static_cast<double>(v.size());
  r.mean = pairwise_sum(v) / n;
  if (v.size() < 2) return r;
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - r.mean) * (v[i] - r.mean);
  r.se = std::sqrt(pairwise_sum(sq) / (n - 1.0) / n);
  return r;
}

void finish_interval(EstimatorResult& r) {
  r.ci_low = r.estimate - 1.959963984540054 * r.stderr_;
  r.ci_high = r.estimate + 1.959963984540054 * r.stderr_;
}

double euclid(std::span<const int> c, int n, std::span<const double> nu) {
  double s = 0.0;
  for (std::size_t x = 0; x < nu.size(); ++x) {
    const double d = c[x] / static_cast<double>(n) - nu[x];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

std::mt19937_64 trial_rng(std::uint64_t seed, std::uint64_t trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(trial), static_cast<std::uint32_t>(trial >> 32), 0x5eedU};
  return std::mt19937_64(seq);
}

double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t h = v.size() / 2;
  return pairwise_sum(v.subspan(0, h)) + pairwise_sum(v.subspan(h));
}

void parallel_for(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& body) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(count, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next = count;
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

PolicyTables::PolicyTables(const SimplexGrid& grid, const TargetSet& target, const CostModel& model,
                           const Policy& policy, RateMode mode)
    : grid_(&grid), target_(&target), ne_(grid.num_edges()) {
  if (policy.num_edges != ne_ || policy.q.size() != grid.size() * ne_)
    throw ArgumentError("policy does not match the grid");
  const std::size_t N = grid.size();
  rates_.assign(N * ne_, 0.0);
  total_.assign(N, 0.0);
  additive_.assign(N, 0.0);
  exponent_.assign(N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    if (target.contains(i)) continue;
    const auto m = grid.point(i);
    const double R = model.reward_at(m);
    double add = R, expo = -R;
    for (std::size_t e = 0; e < ne_; ++e) {
      if (grid.neighbor(i, e) == kOutOfLattice) continue;
      const int x = grid.edges()[e].from;
      const double r = mode == RateMode::q ? policy.rate(i, e) : policy.u_rate(i, e);
      if (!(r >= 0.0)) throw ArgumentError("negative rate in policy");
      rates_[i * ne_ + e] = grid.counts(i)[x] * r;
      total_[i] += rates_[i * ne_ + e];
      add += m[x] * running_F(model, e, r);
      if (r > 0.0) {
        expo += m[x] * running_C(model, e, r);
      } else {
        expo = kInf;
      }
    }
    additive_[i] = add;
    exponent_[i] = expo;
  }
}

PathSample simulate_meanfield(const PolicyTables& tables, std::size_t m0, std::uint64_t seed, std::uint64_t trial,
                              double t_max, bool record) {
  const SimplexGrid& grid = tables.grid();
  const std::size_t ne = grid.num_edges();
  auto rng = trial_rng(seed, trial);
  PathSample p;
  p.seed = seed;
  p.trial = trial;
  std::size_t i = m0;
  double t = 0.0;
  if (record) p.states.push_back(i);
  while (!tables.target().contains(i)) {
    const double total = tables.total_rate(i);
    if (!(total > 0.0)) throw StuckStateError("zero total jump rate at state " + std::to_string(i));
    const double dt = exponential(rng, total);
    if (t + dt >= t_max) {
      const double hold = t_max - t;
      p.additive_cost += hold * tables.additive_rate(i);
      p.exponent += hold * tables.exponent_rate(i);
      p.censored = true;
      t = t_max;
      break;
    }
    p.additive_cost += dt * tables.additive_rate(i);
    p.exponent += dt * tables.exponent_rate(i);
    t += dt;
    double pick = uniform01(rng) * total;
    std::size_t e = 0;
    std::size_t last = ne;
    for (; e < ne; ++e) {
      const double r = tables.rate(i, e);
      if (r <= 0.0) continue;
      last = e;
      if (pick < r) break;
      pick -= r;
    }
    if (e == ne) e = last;  // rounding at the top of the cumulative sum
    i = static_cast<std::size_t>(grid.neighbor(i, e));
    ++p.jumps;
    if (record) {
      p.times.push_back(t);
      p.states.push_back(i);
      p.fired.push_back(static_cast<int>(e));
    }
  }
  p.exit_time = t;
  return p;
}

double pilot_t_max(const PolicyTables& tables, std::size_t m0, std::uint64_t seed, double multiplier,
                   std::size_t pilot_trials, double pilot_cap) {
  std::vector<double> times(pilot_trials);
  for (std::size_t k = 0; k < pilot_trials; ++k) {
    const PathSample p = simulate_meanfield(tables, m0, seed ^ 0x9e3779b97f4a7c15ULL, k, pilot_cap);
    // exit is a rare event under these rates; a mean would need exponentially long runs
    if (p.censored)
      throw CapacityError("pilot trial " + std::to_string(k) + " did not reach the target by t = " +
                          std::to_string(static_cast<long long>(pilot_cap)) + "; set simulation.t_max explicitly");
    times[k] = p.exit_time;
  }
  const double mean = pairwise_sum(times) / static_cast<double>(std::max<std::size_t>(pilot_trials, 1));
  return mean > 0.0 ? multiplier * mean : 1.0;
}

namespace {

template <class Sim>
EstimatorResult additive_estimate(std::size_t trials, unsigned workers, Sim simulate) {
  if (trials == 0) throw ArgumentError("estimation needs at least one trial");
  std::vector<double> cost(trials);
  std::vector<std::uint8_t> cens(trials);
  parallel_for(trials, workers, [&](std::size_t k) {
    const PathSample p = simulate(k);
    cost[k] = p.additive_cost;
    cens[k] = p.censored;
  });
  EstimatorResult r;
  r.trials = trials;
  std::vector<double> kept;
  for (std::size_t k = 0; k < trials; ++k) {
    if (cens[k]) {
      ++r.censored;
    } else {
      kept.push_back(cost[k]);
    }
  }
  if (kept.empty()) throw EstimationError("every trial was censored");
  if (r.censored > 0)
    r.warnings.push_back(std::to_string(r.censored) + " censored trials excluded; the estimate is biased low");
  const MeanSe ms = mean_and_stderr(kept);
  r.estimate = ms.mean;
  r.stderr_ = ms.se;
  finish_interval(r);
  return r;
}

}  // namespace

EstimatorResult estimate_J(const PolicyTables& tables, std::size_t m0, const MonteCarloOptions& opts) {
  return additive_estimate(opts.trials, opts.workers, [&](std::size_t k) {
    return simulate_meanfield(tables, m0, opts.seed, k, opts.t_max);
  });
}

EstimatorResult estimate_I(const PolicyTables& tables, std::size_t m0, const MonteCarloOptions& opts) {
  if (opts.trials == 0) throw ArgumentError("estimation needs at least one trial");
  const double n = tables.grid().n();
  std::vector<double> x(opts.trials);
  std::vector<std::uint8_t> cens(opts.trials);
  parallel_for(opts.trials, opts.workers, [&](std::size_t k) {
    const PathSample p = simulate_meanfield(tables, m0, opts.seed, k, opts.t_max);
    x[k] = n * p.exponent;
    cens[k] = p.censored;
  });
  EstimatorResult r;
  r.trials = opts.trials;
  std::vector<double> kept;
  for (std::size_t k = 0; k < opts.trials; ++k) {
    if (cens[k]) {
      ++r.censored;
    } else {
      kept.push_back(x[k]);
    }
  }
  if (kept.empty()) throw EstimationError("every trial was censored");
  if (r.censored > 0)
    r.warnings.push_back(std::to_string(r.censored) + " censored trials excluded; the estimate is biased");
  const double M = *std::max_element(kept.begin(), kept.end());
  if (std::isinf(M)) throw EstimationError("a trial accumulated an infinite exponent");
  std::vector<double> w(kept.size());
  for (std::size_t k = 0; k < kept.size(); ++k) w[k] = std::exp(kept[k] - M);
  const MeanSe ms = mean_and_stderr(w);
  r.log_estimate = M + std::log(ms.mean);
  r.estimate = std::exp(r.log_estimate);
  r.stderr_ = std::exp(M) * ms.se;
  r.relative_stderr = ms.se / ms.mean;
  r.scaled_log = -r.log_estimate / n;
  finish_interval(r);

  std::vector<double> sorted = w;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t top = std::max<std::size_t>(1, (sorted.size() + 99) / 100);
  const double mass = pairwise_sum(sorted);
  r.top_percent_share = pairwise_sum(std::span<const double>(sorted).subspan(0, top)) / mass;
  if (r.top_percent_share > 0.5 && sorted.size() >= 100)
    r.warnings.push_back("heavy tail: top 1% of trials carry more than half of the exponential mass");
  return r;
}

PathSample simulate_meanfield_timed(const SimplexGrid& grid, const TargetSet& target, const CostModel& model,
                                    TimeVaryingControl& control, std::size_t m0, std::uint64_t seed,
                                    std::uint64_t trial, double t_max) {
  const std::size_t ne = grid.num_edges();
  auto rng = trial_rng(seed, trial);
  PathSample p;
  p.seed = seed;
  p.trial = trial;
  std::vector<double> q(ne), rate(ne);
  const auto breaks = control.breakpoints();
  std::size_t i = m0;
  double t = 0.0;
  while (!target.contains(i)) {
    const auto counts = grid.counts(i);
    control.rates(t, counts, q);
    const auto m = grid.point(i);
    const double R = model.reward_at(m);
    double total = 0.0, add = R, expo = -R;
    for (std::size_t e = 0; e < ne; ++e) {
      const int x = grid.edges()[e].from;
      rate[e] = counts[x] > 0 ? counts[x] * q[e] : 0.0;
      total += rate[e];
      if (counts[x] > 0) {
        add += m[x] * running_F(model, e, q[e]);
        expo += q[e] > 0.0 ? m[x] * running_C(model, e, q[e]) : kInf;
      }
    }
    const auto nb = std::upper_bound(breaks.begin(), breaks.end(), t);
    const double horizon = std::min(t_max, nb == breaks.end() ? kInf : *nb);
    const double dt = total > 0.0 ? exponential(rng, total) : kInf;
    if (t + dt >= horizon) {
      // No jump before the next rate change (memorylessness makes the restart exact).
      if (!std::isfinite(horizon)) throw StuckStateError("zero total jump rate under the time-varying control");
      p.additive_cost += (horizon - t) * add;
      p.exponent += (horizon - t) * expo;
      t = horizon;
      if (t >= t_max) {
        p.censored = true;
        break;
      }
      continue;
    }
    p.additive_cost += dt * add;
    p.exponent += dt * expo;
    t += dt;
    double pick = uniform01(rng) * total;
    std::size_t e = 0, last = ne;
    for (; e < ne; ++e) {
      if (rate[e] <= 0.0) continue;
      last = e;
      if (pick < rate[e]) break;
      pick -= rate[e];
    }
    if (e == ne) e = last;
    i = static_cast<std::size_t>(grid.neighbor(i, e));
    ++p.jumps;
  }
  p.exit_time = t;
  return p;
}

EstimatorResult estimate_J_timed(const SimplexGrid& grid, const TargetSet& target, const CostModel& model,
                                 const ControlFactory& factory, std::size_t m0, const MonteCarloOptions& opts) {
  return additive_estimate(opts.trials, opts.workers, [&](std::size_t k) {
    auto control = factory();
    return simulate_meanfield_timed(grid, target, model, *control, m0, opts.seed, k, opts.t_max);
  });
}

AgentPolicy exchangeable_policy(const SimplexGrid& grid, const Policy& policy) {
  return [&grid, &policy](std::size_t, std::size_t e, const AgentConfig& x) {
    return policy.rate(grid.index(empirical_counts(x, grid.d())), e);
  };
}

AgentPathSample simulate_agents(const CostModel& model, const AgentPolicy& policy, const ProductPredicate& target,
                                const AgentConfig& x0, std::uint64_t seed, std::uint64_t trial, double t_max,
                                std::size_t max_agents) {
  const int d = model.num_states();
  const std::size_t n = x0.states.size();
  if (n == 0) throw ArgumentError("no agents");
  if (n > max_agents) throw CapacityError("too many agents for per-agent clocks");
  auto rng = trial_rng(seed, trial);
  AgentPathSample p;
  AgentConfig x = x0;
  p.counts.push_back(empirical_counts(x, d));
  double t = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> clocks;
  std::vector<double> rate;
  while (!target(x)) {
    clocks.clear();
    rate.clear();
    double total = 0.0, add = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t e = 0; e < model.num_edges(); ++e) {
        if (model.edges()[e].from != x.states[a]) continue;
        const double r = policy(a, e, x);
        clocks.emplace_back(a, e);
        rate.push_back(r);
        total += r;
        add += running_F(model, e, r);
      }
    }
    add = add / static_cast<double>(n) + model.reward_at(project_empirical(x, d));
    if (!(total > 0.0)) throw StuckStateError("zero total jump rate in the agent simulation");
    const double dt = exponential(rng, total);
    if (t + dt >= t_max) {
      p.additive_cost += (t_max - t) * add;
      t = t_max;
      p.censored = true;
      break;
    }
    p.additive_cost += dt * add;
    t += dt;
    double pick = uniform01(rng) * total;
    std::size_t c = 0, last = clocks.size();
    for (; c < clocks.size(); ++c) {
      if (rate[c] <= 0.0) continue;
      last = c;
      if (pick < rate[c]) break;
      pick -= rate[c];
    }
    if (c == clocks.size()) c = last;
    const auto [a, e] = clocks[c];
    x.states[a] = model.edges()[e].to;
    p.times.push_back(t);
    p.moves.emplace_back(static_cast<int>(a), static_cast<int>(e));
    p.counts.push_back(empirical_counts(x, d));
  }
  p.exit_time = t;
  return p;
}

std::vector<int> round_to_lattice(std::span<const double> m, int n) {
  std::vector<int> k(m.size());
  std::vector<std::pair<double, std::size_t>> frac;
  int used = 0;
  for (std::size_t x = 0; x < m.size(); ++x) {
    const double v = m[x] * n;
    k[x] = static_cast<int>(std::floor(v + 1e-12));
    used += k[x];
    frac.emplace_back(v - k[x], x);
  }
  std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; used < n; ++j, ++used) ++k[frac[j % frac.size()].second];
  return k;
}

std::vector<std::vector<double>> nominal_flow(const CostModel& model, std::span<const double> m0, double T,
                                              std::size_t steps) {
  const std::size_t d = m0.size();
  const double h = T / static_cast<double>(steps);
  const auto drift = [&](const std::vector<double>& nu) {
    std::vector<double> f(d, 0.0);
    for (std::size_t e = 0; e < model.num_edges(); ++e) {
      const auto [x, y] = model.edges()[e];
      const double flux = nu[x] * model.gamma(e);
      f[x] -= flux;
      f[y] += flux;
    }
    return f;
  };
  std::vector<std::vector<double>> out;
  out.reserve(steps + 1);
  std::vector<double> nu(m0.begin(), m0.end());
  out.push_back(nu);
  std::vector<double> tmp(d);
  for (std::size_t s = 0; s < steps; ++s) {
    const auto k1 = drift(nu);
    for (std::size_t x = 0; x < d; ++x) tmp[x] = nu[x] + 0.5 * h * k1[x];
    const auto k2 = drift(tmp);
    for (std::size_t x = 0; x < d; ++x) tmp[x] = nu[x] + 0.5 * h * k2[x];
    const auto k3 = drift(tmp);
    for (std::size_t x = 0; x < d; ++x) tmp[x] = nu[x] + h * k3[x];
    const auto k4 = drift(tmp);
    for (std::size_t x = 0; x < d; ++x) nu[x] += h / 6.0 * (k1[x] + 2 * k2[x] + 2 * k3[x] + k4[x]);
    out.push_back(nu);
  }
  return out;
}

LLNResult lln_experiment(const CostModel& model, std::span<const double> m0, double T, std::span<const int> n_list,
                         std::size_t trials, std::uint64_t seed, unsigned workers, std::size_t flow_steps) {
  if (!(T > 0.0) || trials == 0 || flow_steps == 0) throw ArgumentError("lln experiment needs T > 0 and trials");
  const int d = model.num_states();
  if (static_cast<int>(m0.size()) != d) throw ArgumentError("initial point has the wrong dimension");
  const double h = T / static_cast<double>(flow_steps);
  LLNResult out;
  for (std::size_t ni = 0; ni < n_list.size(); ++ni) {
    const int n = n_list[ni];
    if (n < 1) throw ArgumentError("n must be positive");
    const auto k0 = round_to_lattice(m0, n);
    std::vector<double> start(d);
    for (int x = 0; x < d; ++x) start[x] = k0[x] / static_cast<double>(n);
    const auto flow = nominal_flow(model, start, T, flow_steps);
    const auto nu_at = [&](double t) {
      const double s = std::min(t / h, static_cast<double>(flow_steps));
      const std::size_t j = std::min(static_cast<std::size_t>(s), flow_steps - 1);
      const double w = s - j;
      std::vector<double> v(d);
      for (int x = 0; x < d; ++x) v[x] = (1 - w) * flow[j][x] + w * flow[j + 1][x];
      return v;
    };
    std::vector<double> dev(trials);
    parallel_for(trials, workers, [&](std::size_t k) {
      auto rng = trial_rng(seed, (static_cast<std::uint64_t>(ni) << 40) | k);
      std::vector<int> c = k0;
      double t = 0.0, sup = 0.0;
      std::size_t j = 0;
      for (;;) {
        double total = 0.0;
        for (std::size_t e = 0; e < model.num_edges(); ++e) total += c[model.edges()[e].from] * model.gamma(e);
        const double next = t + exponential(rng, total);
        // Grid times strictly before the next jump see the current state.
        while (j <= flow_steps && j * h < std::min(next, T)) {
          sup = std::max(sup, euclid(c, n, flow[j]));
          ++j;
        }
        if (next > T) {
          sup = std::max(sup, euclid(c, n, flow[flow_steps]));
          break;
        }
        const auto nu = nu_at(next);
        sup = std::max(sup, euclid(c, n, nu));
        double pick = uniform01(rng) * total;
        std::size_t e = 0, last = model.num_edges();
        for (; e < model.num_edges(); ++e) {
          const double r = c[model.edges()[e].from] * model.gamma(e);
          if (r <= 0.0) continue;
          last = e;
          if (pick < r) break;
          pick -= r;
        }
        if (e == model.num_edges()) e = last;
        --c[model.edges()[e].from];
        ++c[model.edges()[e].to];
        sup = std::max(sup, euclid(c, n, nu));
        t = next;
      }
      dev[k] = sup;
    });
    std::vector<double> sorted = dev;
    std::sort(sorted.begin(), sorted.end());
    const auto quantile = [&](double p) {
      const double pos = p * (sorted.size() - 1);
      const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
      return sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
    };
    out.rows.push_back({n, quantile(0.5), quantile(0.9), pairwise_sum(dev) / static_cast<double>(trials)});
  }
  if (out.rows.size() >= 2) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double k = static_cast<double>(out.rows.size());
    for (const auto& r : out.rows) {
      const double lx = std::log(static_cast<double>(r.n)), ly = std::log(r.median);
      sx += lx;
      sy += ly;
      sxx += lx * lx;
      sxy += lx * ly;
    }
    out.slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
  }
  return out;
}

}  // namespace rsmf
