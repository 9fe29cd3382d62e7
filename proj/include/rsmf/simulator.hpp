#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rsmf/cost_models.hpp"
#include "rsmf/hjb_solver.hpp"
#include "rsmf/simplex_lattice.hpp"

namespace rsmf {

/// Generator for trial `trial` of a run with master seed `seed`. Streams depend only on
/// the pair, so results do not change with the worker count or schedule.
std::mt19937_64 trial_rng(std::uint64_t seed, std::uint64_t trial);

struct PathSample {
  std::vector<double> times;         ///< jump times (recorded paths only)
  std::vector<std::size_t> states;   ///< visited ordinals, starting point first (recorded paths only)
  std::vector<int> fired;            ///< edge fired at each jump (recorded paths only)
  std::size_t jumps = 0;
  double exit_time = 0.0;            ///< T_K, or t_max when censored
  bool censored = false;
  double additive_cost = 0.0;        ///< integral of sum m_x F(q) + R
  double exponent = 0.0;             ///< integral of sum m_x gamma C(rate/gamma) - R
  std::uint64_t seed = 0;
  std::uint64_t trial = 0;
};

/// Which rates of a Policy drive the chain.
enum class RateMode { q, u };

/// Per-state jump rates and running-cost rates prepared once for repeated simulation.
class PolicyTables {
 public:
  PolicyTables(const SimplexGrid& grid, const TargetSet& target, const CostModel& model, const Policy& policy,
               RateMode mode);

  const SimplexGrid& grid() const { return *grid_; }
  const TargetSet& target() const { return *target_; }
  double rate(std::size_t i, std::size_t e) const { return rates_[i * ne_ + e]; }
  double total_rate(std::size_t i) const { return total_[i]; }
  double additive_rate(std::size_t i) const { return additive_[i]; }
  double exponent_rate(std::size_t i) const { return exponent_[i]; }

 private:
  const SimplexGrid* grid_;
  const TargetSet* target_;
  std::size_t ne_;
  std::vector<double> rates_;  ///< n m_x * rate, already zero for absent edges
  std::vector<double> total_;
  std::vector<double> additive_;
  std::vector<double> exponent_;
};

/// Direct-method simulation of the empirical-measure chain from ordinal m0 until the
/// target or t_max. Throws StuckStateError at a non-target state with zero total rate.
PathSample simulate_meanfield(const PolicyTables& tables, std::size_t m0, std::uint64_t seed, std::uint64_t trial,
                              double t_max, bool record = false);

struct EstimatorResult {
  double estimate = 0.0;
  double stderr_ = 0.0;
  std::size_t trials = 0;
  std::size_t censored = 0;
  double confidence_level = 0.95;
  double ci_low = 0.0;
  double ci_high = 0.0;
  // Risk-sensitive runs only.
  double log_estimate = 0.0;     ///< log of the estimate (finite even when the estimate overflows)
  double relative_stderr = 0.0;  ///< stderr / estimate
  double scaled_log = 0.0;       ///< -(1/n) log estimate
  double top_percent_share = 0.0;  ///< fraction of the exponential mass in the top 1% of trials
  std::vector<std::string> warnings;
};

struct MonteCarloOptions {
  std::size_t trials = 10000;
  std::uint64_t seed = 1;
  double t_max = 1e6;
  unsigned workers = 0;  ///< 0 = hardware concurrency
};

/// Mean and standard error of the additive exit cost under the q-rates of the tables.
/// Censored trials are excluded with a warning; EstimationError if all are censored.
EstimatorResult estimate_J(const PolicyTables& tables, std::size_t m0, const MonteCarloOptions& opts);

/// E exp(n * exponent) under the tables' rates, aggregated in log space.
EstimatorResult estimate_I(const PolicyTables& tables, std::size_t m0, const MonteCarloOptions& opts);

/// Mean exit time over a pilot run, times `multiplier`; the default censoring horizon.
/// Pilot paths still running at `pilot_cap` raise CapacityError.
double pilot_t_max(const PolicyTables& tables, std::size_t m0, std::uint64_t seed, double multiplier = 50.0,
                   std::size_t pilot_trials = 200, double pilot_cap = 1e4);

/// Time-dependent control for the tracking experiment. Rates are held constant between
/// consecutive breakpoints and jumps; the control may keep per-trial state.
class TimeVaryingControl {
 public:
  virtual ~TimeVaryingControl() = default;
  /// Sorted times where rates may change even without a jump.
  virtual std::span<const double> breakpoints() const = 0;
  /// Per-edge rates q_xy at time t in state `counts` (rates per agent, not yet times n m_x).
  virtual void rates(double t, std::span<const int> counts, std::span<double> q) = 0;
};

using ControlFactory = std::function<std::unique_ptr<TimeVaryingControl>()>;

/// Simulation driven by a time-dependent control; accumulates the additive cost with F
/// evaluated at the rates in force.
PathSample simulate_meanfield_timed(const SimplexGrid& grid, const TargetSet& target, const CostModel& model,
                                    TimeVaryingControl& control, std::size_t m0, std::uint64_t seed,
                                    std::uint64_t trial, double t_max);

EstimatorResult estimate_J_timed(const SimplexGrid& grid, const TargetSet& target, const CostModel& model,
                                 const ControlFactory& factory, std::size_t m0, const MonteCarloOptions& opts);

/// Per-agent rate for agent `agent` on edge `edge` given the whole configuration.
using AgentPolicy = std::function<double(std::size_t agent, std::size_t edge, const AgentConfig& config)>;

/// Agent-independent rates read off a lattice policy through the empirical measure.
AgentPolicy exchangeable_policy(const SimplexGrid& grid, const Policy& policy);

struct AgentPathSample {
  std::vector<double> times;
  std::vector<std::vector<int>> counts;  ///< projected path as count vectors, start first
  std::vector<std::pair<int, int>> moves;  ///< (agent, edge) per jump
  double exit_time = 0.0;
  bool censored = false;
  double additive_cost = 0.0;
};

/// Competing per-agent clocks. The target is tested on the configuration.
AgentPathSample simulate_agents(const CostModel& model, const AgentPolicy& policy, const ProductPredicate& target,
                                const AgentConfig& x0, std::uint64_t seed, std::uint64_t trial, double t_max,
                                std::size_t max_agents = 10000);

struct LLNRow {
  int n = 0;
  double median = 0.0;
  double p90 = 0.0;
  double mean = 0.0;
};

struct LLNResult {
  std::vector<LLNRow> rows;
  double slope = 0.0;  ///< least-squares slope of log median against log n
};

/// Nominal flow d nu/dt = sum_{(x,y)} v_xy nu_x gamma_xy by RK4 on `steps` equal steps;
/// returns the steps + 1 grid values.
std::vector<std::vector<double>> nominal_flow(const CostModel& model, std::span<const double> m0, double T,
                                              std::size_t steps);

/// sup_{t <= T} |mu^n(t) - nu(t)| for the uncontrolled chain over n_list.
LLNResult lln_experiment(const CostModel& model, std::span<const double> m0, double T, std::span<const int> n_list,
                         std::size_t trials, std::uint64_t seed, unsigned workers = 0, std::size_t flow_steps = 20000);

/// Largest-remainder rounding of n * m to integer counts summing to n.
std::vector<int> round_to_lattice(std::span<const double> m, int n);

/// Deterministic pairwise sum.
double pairwise_sum(std::span<const double> v);

/// Runs body(i) for i in [0, count) on `workers` threads (0 = hardware concurrency).
void parallel_for(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& body);

}  // namespace rsmf
