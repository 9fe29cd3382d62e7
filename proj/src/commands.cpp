#include "rsmf/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "rsmf/cost_checks.hpp"
#include "rsmf/deterministic_limit.hpp"
#include "rsmf/hjb_solver.hpp"
#include "rsmf/simulator.hpp"

namespace rsmf {

namespace fs = std::filesystem;

namespace {

json num(double v) { return std::isfinite(v) ? json(v) : json(format_double(v)); }

json num_list(std::span<const double> v) {
  json out = json::array();
  for (double x : v) out.push_back(num(x));
  return out;
}

class Output {
 public:
  Output(const ExperimentConfig& cfg, const RunOptions& opts, std::string command)
      : cfg_(cfg), dir_(opts.out_dir.empty() ? cfg.output : opts.out_dir), command_(std::move(command)),
        hash_(config_hash(cfg.resolved)), verbose_(opts.verbose) {
    fs::create_directories(dir_);
  }

  void log(const std::string& msg) const {
    if (verbose_) std::cerr << "[" << command_ << "] " << msg << "\n";
  }

  void json_file(const std::string& name, json result) const {
    json doc = {{"command", command_}, {"config", cfg_.resolved}, {"config_hash", hash_}, {"result", std::move(result)}};
    std::ofstream f(dir_ / name);
    f << doc.dump(2) << "\n";
    log("wrote " + (dir_ / name).string());
  }

  // Two comment lines (hash, compact config) and a header row precede the data.
  std::ofstream csv_file(const std::string& name, const std::vector<std::string>& header) const {
    std::ofstream f(dir_ / name);
    f << "# config_hash=" << hash_ << "\n# config=" << cfg_.resolved.dump() << "\n";
    for (std::size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
    f << "\n";
    log("writing " + (dir_ / name).string());
    return f;
  }

 private:
  const ExperimentConfig& cfg_;
  fs::path dir_;
  std::string command_;
  std::string hash_;
  bool verbose_;
};

struct Row {
  std::ofstream& out;
  bool first = true;
  Row& operator<<(double v) { return put(format_double(v)); }
  Row& operator<<(long long v) { return put(std::to_string(v)); }
  Row& operator<<(const std::string& s) { return put(s); }
  Row& put(const std::string& s) {
    out << (first ? "" : ",") << s;
    first = false;
    return *this;
  }
  ~Row() { out << "\n"; }
};

long long ll(std::size_t v) { return static_cast<long long>(v); }

const CostModel& model_of(const ExperimentConfig& cfg) { return *cfg.model; }

int require_n(const ExperimentConfig& cfg) {
  if (!cfg.n) throw ConfigError("this command needs 'n'");
  return *cfg.n;
}

std::uint64_t require_seed(const ExperimentConfig& cfg) {
  if (!cfg.seed) throw ConfigError("this command needs a 'seed' (or --seed)");
  return *cfg.seed;
}

std::vector<std::string> count_columns(int d, const std::string& prefix = "k_") {
  std::vector<std::string> c;
  for (int x = 0; x < d; ++x) c.push_back(prefix + std::to_string(x));
  return c;
}

std::vector<std::string> edge_columns(const CostModel& model, const std::string& prefix) {
  std::vector<std::string> c;
  for (const Edge& e : model.edges().edges()) c.push_back(prefix + std::to_string(e.from) + "_" + std::to_string(e.to));
  return c;
}

json stats_json(const SolveStats& s) {
  return {{"sweeps", s.sweeps},
          {"last_update", num(s.last_update)},
          {"residual_sup", num(s.residual_sup)},
          {"clamped_states", s.clamped_states.size()},
          {"warnings", s.warnings}};
}

json estimator_json(const EstimatorResult& r) {
  return {{"estimate", num(r.estimate)},         {"stderr", num(r.stderr_)},
          {"trials", r.trials},                  {"censored", r.censored},
          {"confidence_level", r.confidence_level}, {"ci", {num(r.ci_low), num(r.ci_high)}},
          {"log_estimate", num(r.log_estimate)}, {"relative_stderr", num(r.relative_stderr)},
          {"scaled_log", num(r.scaled_log)},     {"top_percent_share", num(r.top_percent_share)},
          {"warnings", r.warnings}};
}

OptimizeOptions limit_options(const ExperimentConfig& cfg, const RunOptions& opts) {
  OptimizeOptions o = cfg.limit;
  o.workers = opts.workers;
  return o;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"check-cost", "solve", "simulate", "limit", "convergence", "lln", "isaacs"};
  return names;
}

ExitStatus run_command(const std::string& name, const ExperimentConfig& cfg, const RunOptions& opts) {
  if (name == "check-cost") return cmd_check_cost(cfg, opts);
  if (name == "solve") return cmd_solve(cfg, opts);
  if (name == "simulate") return cmd_simulate(cfg, opts);
  if (name == "limit") return cmd_limit(cfg, opts);
  if (name == "convergence") return cmd_convergence(cfg, opts);
  if (name == "lln") return cmd_lln(cfg, opts);
  if (name == "isaacs") return cmd_isaacs(cfg, opts);
  throw ArgumentError("unknown command '" + name + "'");
}

ExitStatus exit_status_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ArgumentError*>(&e) ||
      dynamic_cast<const DomainError*>(&e))
    return ExitStatus::config_error;
  if (dynamic_cast<const CapacityError*>(&e) || dynamic_cast<const IterationLimitError*>(&e) ||
      dynamic_cast<const BracketError*>(&e) || dynamic_cast<const StepSizeError*>(&e))
    return ExitStatus::capacity_or_iteration;
  return ExitStatus::check_failed;
}

ExitStatus cmd_check_cost(const ExperimentConfig& cfg, const RunOptions& opts) {
  const Output out(cfg, opts, "check-cost");
  const CostModel& model = model_of(cfg);
  const auto& c = cfg.checks;
  const auto u_grid = log_grid(c.u_lo, c.u_hi, c.u_points);

  const AdmissibilityReport adm = check_cost_admissibility(model, u_grid);
  json adm_edges = json::array();
  for (const auto& e : adm.edges) {
    adm_edges.push_back({{"edge", e.edge},
                         {"from", model.edges()[e.edge].from},
                         {"to", model.edges()[e.edge].to},
                         {"pass", e.pass()},
                         {"convex", e.convex},
                         {"vanishes_at_one", e.vanishes_at_one},
                         {"slope_monotone", e.slope_monotone},
                         {"slope_constant", e.slope_constant},
                         {"first_violation", e.first_violation ? num(*e.first_violation) : json(nullptr)},
                         {"violation", e.violation},
                         {"violation_interval", e.pass() ? json(nullptr) : json{num(e.violation_lo), num(e.violation_hi)}}});
  }

  const GrowthReport growth = check_growth_conditions(model);
  json growth_edges = json::array();
  for (const auto& e : growth.edges) {
    growth_edges.push_back({{"edge", e.edge},
                            {"pass", e.pass()},
                            {"growth_at_zero", e.growth_at_zero},
                            {"p_used", e.p_used ? num(*e.p_used) : json(nullptr)},
                            {"zero_probe", num_list(e.zero_probe)},
                            {"tail_literal", num(e.tail_literal)},
                            {"tail_scaled", num(e.tail_scaled)},
                            {"tail_ok", e.tail_ok},
                            {"diagnostic", e.diagnostic}});
  }

  json bounds = nullptr;
  bool bounds_pass = true;
  if (model.tail_exponent_p() && adm.pass) {
    bounds = json::array();
    const auto q_grid = log_grid(std::max(c.epsilon, 1e-3 * model.gamma_min()), 1e3 * model.gamma_max(), c.q_points);
    for (std::size_t e = 0; e < model.num_edges(); ++e) {
      const FBoundsReport r = check_transformed_cost_bounds(model, e, c.epsilon, q_grid, 100, cfg.seed.value_or(1));
      bounds_pass = bounds_pass && r.pass();
      bounds.push_back({{"edge", e},
                        {"pass", r.pass()},
                        {"M", num(r.M)},
                        {"M_bar", num(r.M_bar)},
                        {"F_at_gamma", num(r.F_at_gamma)},
                        {"min_lower_slack", num(r.min_lower_slack)},
                        {"min_upper_slack", num(r.min_upper_slack)},
                        {"first_violation", r.first_violation ? num(*r.first_violation) : json(nullptr)}});
    }
  }
  const bool pass = adm.pass && growth.pass && bounds_pass;
  out.json_file("check_cost.json", {{"verdict", pass ? "pass" : "fail"},
                                    {"admissibility", {{"pass", adm.pass}, {"edges", adm_edges}}},
                                    {"growth", {{"pass", growth.pass}, {"edges", growth_edges}}},
                                    {"transformed_cost_bounds", bounds}});
  out.log(pass ? "pass" : "fail");
  return pass ? ExitStatus::ok : ExitStatus::check_failed;
}

ExitStatus cmd_solve(const ExperimentConfig& cfg, const RunOptions& opts) {
  const Output out(cfg, opts, "solve");
  const CostModel& model = model_of(cfg);
  const int n = require_n(cfg);
  const SimplexGrid grid(n, model.edges());
  const TargetSet target = resolve_target(cfg, grid);
  out.log("lattice size " + std::to_string(grid.size()));

  const SolveVResult v = solve_V(grid, target, model, cfg.solver);
  out.log("value solve: " + std::to_string(v.stats.sweeps) + " sweeps");
  const SolveWResult w = solve_W(grid, target, model, cfg.solver_w);
  out.log("risk-sensitive solve: " + std::to_string(w.stats.sweeps) + " sweeps");
  const ResidualReport res = residual_V(grid, target, model, v.field.values);

  const int d = grid.d();
  {
    auto header = std::vector<std::string>{"ordinal"};
    for (auto& c : count_columns(d)) header.push_back(c);
    for (const char* c : {"in_target", "V", "log_W", "V_from_W", "gap", "residual"}) header.emplace_back(c);
    auto f = out.csv_file("values.csv", header);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      Row r{f};
      r << ll(i);
      for (int k : grid.counts(i)) r << static_cast<long long>(k);
      const double vw = 0.0 - w.field.log_values[i] / n;
      r << static_cast<long long>(target.contains(i)) << v.field.values[i] << w.field.log_values[i] << vw
        << std::abs(v.field.values[i] - vw) << res.per_state[i];
    }
  }
  {
    auto f = out.csv_file("policy.csv", {"ordinal", "edge", "from", "to", "q", "u", "clamped"});
    for (std::size_t i = 0; i < grid.size(); ++i) {
      for (std::size_t e = 0; e < model.num_edges(); ++e) {
        Row r{f};
        r << ll(i) << ll(e) << static_cast<long long>(model.edges()[e].from)
          << static_cast<long long>(model.edges()[e].to) << v.policy.rate(i, e) << v.policy.u_rate(i, e)
          << static_cast<long long>(v.policy.clamped[i]);
      }
    }
  }
  double gap = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i)
    gap = std::max(gap, std::abs(v.field.values[i] + w.field.log_values[i] / n));
  const auto k0 = round_to_lattice(cfg.m0, n);
  const std::size_t i0 = grid.index(k0);
  out.json_file("solve.json", {{"n", n},
                               {"lattice_size", grid.size()},
                               {"target_size", target.size()},
                               {"V", stats_json(v.stats)},
                               {"W", stats_json(w.stats)},
                               {"residual_sup", num(res.sup)},
                               {"equivalence_gap", num(gap)},
                               {"m0", {{"counts", k0},
                                       {"ordinal", i0},
                                       {"V", num(v.field.values[i0])},
                                       {"log_W", num(w.field.log_values[i0])},
                                       {"V_from_W", num(-w.field.log_values[i0] / n)}}}});
  out.log("equivalence gap " + format_double(gap));
  return ExitStatus::ok;
}

ExitStatus cmd_simulate(const ExperimentConfig& cfg, const RunOptions& opts) {
  const Output out(cfg, opts, "simulate");
  const CostModel& model = model_of(cfg);
  const int n = require_n(cfg);
  const std::uint64_t seed = require_seed(cfg);
  const auto& sim = cfg.simulation;
  const SimplexGrid grid(n, model.edges());
  const TargetSet target = resolve_target(cfg, grid);
  const std::size_t start = grid.index(round_to_lattice(cfg.m0, n));

  const SolveVResult v = solve_V(grid, target, model, cfg.solver);
  const Policy policy = sim.policy == "optimal" ? v.policy : nominal_policy(grid, model);
  const PolicyTables q_tables(grid, target, model, policy, RateMode::q);

  MonteCarloOptions mc;
  mc.trials = sim.trials;
  mc.seed = seed;
  mc.workers = opts.workers;
  mc.t_max = sim.t_max ? *sim.t_max
                       : (target.contains(start) ? 1.0
                                                 : pilot_t_max(q_tables, start, seed, sim.t_max_multiplier, sim.pilot_trials));
  out.log("censoring horizon " + format_double(mc.t_max));
  const EstimatorResult J = estimate_J(q_tables, start, mc);
  const double V0 = v.field.values[start];
  json result = {{"n", n},
                 {"policy", sim.policy},
                 {"start", {{"ordinal", start}, {"counts", grid.counts(start)}}},
                 {"t_max", num(mc.t_max)},
                 {"V", num(V0)},
                 {"additive", estimator_json(J)},
                 {"additive_z", J.stderr_ > 0 ? num((J.estimate - V0) / J.stderr_) : json(nullptr)}};
  if (sim.risk_sensitive) {
    const PolicyTables u_tables(grid, target, model, policy, RateMode::u);
    MonteCarloOptions mu = mc;
    if (!sim.t_max && !target.contains(start))
      mu.t_max = pilot_t_max(u_tables, start, seed, sim.t_max_multiplier, sim.pilot_trials);
    const EstimatorResult I = estimate_I(u_tables, start, mu);
    // Delta method: the standard error of -(1/n) log I is about relative_stderr / n.
    const double se = I.relative_stderr / n;
    result["risk_sensitive"] = estimator_json(I);
    result["risk_sensitive_t_max"] = num(mu.t_max);
    result["risk_sensitive_z"] = se > 0 ? num((I.scaled_log - V0) / se) : json(nullptr);
  }
  if (sim.dump_paths > 0) {
    auto header = std::vector<std::string>{"trial", "step", "t", "ordinal"};
    for (auto& c : count_columns(grid.d())) header.push_back(c);
    header.emplace_back("edge");
    auto f = out.csv_file("paths.csv", header);
    for (std::size_t k = 0; k < sim.dump_paths; ++k) {
      const PathSample p = simulate_meanfield(q_tables, start, seed, k, mc.t_max, true);
      for (std::size_t s = 0; s < p.states.size(); ++s) {
        Row r{f};
        r << ll(k) << ll(s) << (s == 0 ? 0.0 : p.times[s - 1]) << ll(p.states[s]);
        for (int c : grid.counts(p.states[s])) r << static_cast<long long>(c);
        r << static_cast<long long>(s == 0 ? -1 : p.fired[s - 1]);
      }
    }
  }
  out.json_file("simulate.json", std::move(result));
  return ExitStatus::ok;
}

ExitStatus cmd_limit(const ExperimentConfig& cfg, const RunOptions& opts) {
  const Output out(cfg, opts, "limit");
  const CostModel& model = model_of(cfg);
  const TargetKind& target = continuous_target(cfg);
  const OptimizeResult r = optimize_V(model, target, cfg.m0, limit_options(cfg, opts));
  out.log("cost " + format_double(r.cost));

  {
    auto header = std::vector<std::string>{"t"};
    for (auto& c : count_columns(model.num_states(), "mu_")) header.push_back(c);
    for (auto& c : edge_columns(model, "q_")) header.push_back(c);
    auto f = out.csv_file("trajectory.csv", header);
    const auto& tr = r.trajectory;
    for (std::size_t i = 0; i < tr.t.size(); ++i) {
      Row row{f};
      row << tr.t[i];
      for (double m : tr.mu[i]) row << m;
      // The last point has no step after it; repeat the rates in force.
      if (!tr.q.empty()) {
        for (double q : tr.q[std::min(i, tr.q.size() - 1)]) row << q;
      } else {
        for (std::size_t e = 0; e < model.num_edges(); ++e) row << model.gamma(e);
      }
    }
  }
  json restarts = json::array();
  for (const auto& s : r.restarts) {
    restarts.push_back({{"label", s.label},
                        {"initial_objective", num(s.initial_objective)},
                        {"final_objective", num(s.final_objective)},
                        {"exited", s.exited}});
  }
  json rates = json::array();
  for (const auto& row : r.control.rates) rates.push_back(num_list(row));
  json result = {{"cost", num(r.cost)},
                 {"exited", r.exited},
                 {"exit_time", r.trajectory.exit_time ? num(*r.trajectory.exit_time) : json(nullptr)},
                 {"control", {{"duration", num(r.control.duration)}, {"rates", rates}}},
                 {"restarts", restarts},
                 {"warnings", r.warnings}};
  if (cfg.cross_check_n) {
    const SimplexGrid grid(*cfg.cross_check_n, model.edges());
    const TargetSet tset = resolve_target(cfg, grid);
    const SolveVResult v = solve_V(grid, tset, model, cfg.solver);
    const auto k0 = round_to_lattice(cfg.m0, grid.n());
    const double lattice = v.field.values[grid.index(k0)];
    result["cross_check"] = {{"n", grid.n()},
                             {"counts", k0},
                             {"lattice_value", num(lattice)},
                             {"relative_gap", lattice > 0 ? num(std::abs(r.cost - lattice) / lattice) : json(nullptr)}};
  }
  out.json_file("limit.json", std::move(result));
  return ExitStatus::ok;
}

ExitStatus cmd_convergence(const ExperimentConfig& cfg, const RunOptions& opts) {
  const Output out(cfg, opts, "convergence");
  const CostModel& model = model_of(cfg);
  const TargetKind& target = continuous_target(cfg);
  if (cfg.n_list.empty()) throw ConfigError("convergence needs 'n_list'");
  const ConvergenceResult c = convergence_study(model, target, cfg.n_list, limit_options(cfg, opts), cfg.solver);
  const int d = model.num_states();
  {
    auto header = std::vector<std::string>{"n", "gap", "worst_point"};
    for (auto& col : count_columns(d)) header.push_back(col);
    auto f = out.csv_file("convergence.csv", header);
    for (const auto& row : c.rows) {
      Row r{f};
      r << static_cast<long long>(row.n) << row.gap << ll(row.worst);
      for (int k : c.coarse_points[row.worst]) r << static_cast<long long>(k);
    }
  }
  {
    auto header = std::vector<std::string>{"point"};
    for (auto& col : count_columns(d)) header.push_back(col);
    for (const char* col : {"reference", "n", "lattice"}) header.emplace_back(col);
    auto f = out.csv_file("convergence_points.csv", header);
    for (std::size_t j = 0; j < c.rows.size(); ++j) {
      for (std::size_t i = 0; i < c.coarse_points.size(); ++i) {
        Row r{f};
        r << ll(i);
        for (int k : c.coarse_points[i]) r << static_cast<long long>(k);
        r << c.reference[i] << static_cast<long long>(c.rows[j].n) << c.lattice[j][i];
      }
    }
  }
  json rows = json::array();
  for (const auto& row : c.rows) rows.push_back({{"n", row.n}, {"gap", num(row.gap)}, {"worst_point", row.worst}});
  out.json_file("convergence.json", {{"coarse_n", c.coarse_n},
                                     {"rows", rows},
                                     {"decreasing", c.decreasing},
                                     {"final_over_initial", num(c.final_over_initial)}});
  return ExitStatus::ok;
}

ExitStatus cmd_lln(const ExperimentConfig& cfg, const RunOptions& opts) {
  const Output out(cfg, opts, "lln");
  const std::uint64_t seed = require_seed(cfg);
  const auto& l = cfg.lln;
  const LLNResult r = lln_experiment(model_of(cfg), cfg.m0, l.T, l.n_list, l.trials, seed, opts.workers, l.flow_steps);
  {
    auto f = out.csv_file("lln.csv", {"n", "median", "p90", "mean"});
    for (const auto& row : r.rows) {
      Row w{f};
      w << static_cast<long long>(row.n) << row.median << row.p90 << row.mean;
    }
  }
  json rows = json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"n", row.n}, {"median", num(row.median)}, {"p90", num(row.p90)}, {"mean", num(row.mean)}});
  out.json_file("lln.json", {{"rows", rows}, {"slope", num(r.slope)}});
  out.log("slope " + format_double(r.slope));
  return ExitStatus::ok;
}

ExitStatus cmd_isaacs(const ExperimentConfig& cfg, const RunOptions& opts) {
  const Output out(cfg, opts, "isaacs");
  const CostModel& model = model_of(cfg);
  const auto& c = cfg.isaacs;
  const auto u_grid = log_grid(c.u_lo, c.u_hi, c.grid);
  const auto q_grid = log_grid(c.q_lo, c.q_hi, c.grid);
  std::vector<IsaacsReport> reports(model.num_edges() * c.xi.size());
  parallel_for(reports.size(), opts.workers, [&](std::size_t k) {
    reports[k] = check_isaacs(model, k / c.xi.size(), c.xi[k % c.xi.size()], u_grid, q_grid);
  });
  double worst = 0.0;
  auto f = out.csv_file("isaacs.csv", {"edge", "from", "to", "xi", "inf_sup", "sup_inf", "gap", "closed_form",
                                       "inner_closed_form_error"});
  for (const auto& r : reports) {
    worst = std::max(worst, std::abs(r.gap));
    Row w{f};
    w << ll(r.edge) << static_cast<long long>(model.edges()[r.edge].from)
      << static_cast<long long>(model.edges()[r.edge].to) << r.xi << r.inf_sup << r.sup_inf << r.gap << r.closed_form
      << r.inner_closed_form_error;
  }
  f.close();
  const bool pass = worst <= c.tolerance;
  out.json_file("isaacs.json", {{"max_gap", num(worst)}, {"tolerance", c.tolerance}, {"verdict", pass ? "pass" : "fail"}});
  return pass ? ExitStatus::ok : ExitStatus::check_failed;
}

}  // namespace rsmf
