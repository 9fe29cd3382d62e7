#include "rsmf/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "rsmf/errors.hpp"

namespace rsmf {

namespace {

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
T read(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class T>
T read_or(const json& j, const char* key, T fallback, const std::string& where) {
  return j.contains(key) && !j.at(key).is_null() ? read<T>(j, key, where) : fallback;
}

double positive(double v, const std::string& what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(what + " must be positive and finite");
  return v;
}

CostSpec parse_cost(const json& j, const std::string& where) {
  const auto family = read<std::string>(j, "family", where);
  if (family == "power") {
    only_keys(j, where, {"family", "p", "q"});
    PowerFamily c{read_or<double>(j, "p", 1.0, where), read_or<double>(j, "q", 1.0, where)};
    if (!(c.p >= 1.0) || !(c.q >= 1.0)) throw ConfigError(where + ": power family needs p, q >= 1");
    return c;
  }
  if (family == "log") {
    only_keys(j, where, {"family"});
    return LogCost{};
  }
  if (family == "tabulated") {
    only_keys(j, where, {"family", "u", "c"});
    Tabulated t{read<std::vector<double>>(j, "u", where), read<std::vector<double>>(j, "c", where)};
    if (t.u.size() != t.c.size() || t.u.size() < 2) throw ConfigError(where + ": u and c need equal length >= 2");
    for (std::size_t i = 1; i < t.u.size(); ++i)
      if (!(t.u[i] > t.u[i - 1])) throw ConfigError(where + ": tabulated u must be strictly increasing");
    if (!(t.u.front() > 0.0)) throw ConfigError(where + ": tabulated u must be positive");
    return t;
  }
  throw ConfigError(where + ": unknown cost family '" + family + "'");
}

json cost_to_json(const CostSpec& spec) {
  return std::visit(
      [](const auto& c) -> json {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, PowerFamily>) {
          return {{"family", "power"}, {"p", c.p}, {"q", c.q}};
        } else if constexpr (std::is_same_v<T, LogCost>) {
          return {{"family", "log"}};
        } else {
          return {{"family", "tabulated"}, {"u", c.u}, {"c", c.c}};
        }
      },
      spec);
}

std::pair<RewardSpec, json> parse_reward(const json& j, int d) {
  const std::string where = "reward";
  const auto kind = read<std::string>(j, "kind", where);
  RewardSpec r;
  json out;
  if (kind == "constant") {
    only_keys(j, where, {"kind", "value"});
    const double v = read<double>(j, "value", where);
    r = RewardSpec(ConstantReward{v});
    out = {{"kind", kind}, {"value", v}};
  } else if (kind == "affine") {
    only_keys(j, where, {"kind", "weights", "offset"});
    AffineReward a{read<std::vector<double>>(j, "weights", where), read_or<double>(j, "offset", 0.0, where)};
    out = {{"kind", kind}, {"weights", a.weights}, {"offset", a.offset}};
    r = RewardSpec(std::move(a));
  } else if (kind == "radial") {
    only_keys(j, where, {"kind", "center", "scale"});
    RadialReward a{read<std::vector<double>>(j, "center", where), read_or<double>(j, "scale", 1.0, where)};
    out = {{"kind", kind}, {"center", a.center}, {"scale", a.scale}};
    r = RewardSpec(std::move(a));
  } else {
    throw ConfigError("reward: unknown kind '" + kind + "'");
  }
  try {
    r.validate(d);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("reward: ") + e.what());
  }
  return {std::move(r), std::move(out)};
}

std::pair<TargetConfig, json> parse_target(const json& j, int d) {
  const std::string where = "target";
  const auto kind = read<std::string>(j, "kind", where);
  TargetConfig t;
  json out;
  if (kind == "half_space") {
    only_keys(j, where, {"kind", "coordinate", "threshold", "at_least"});
    HalfSpace h{read<int>(j, "coordinate", where), read<double>(j, "threshold", where),
                read_or<bool>(j, "at_least", true, where)};
    if (h.coordinate < 0 || h.coordinate >= d) throw ConfigError("target: coordinate out of range");
    out = {{"kind", kind}, {"coordinate", h.coordinate}, {"threshold", h.threshold}, {"at_least", h.at_least}};
    t.continuous = h;
  } else if (kind == "ball") {
    only_keys(j, where, {"kind", "center", "radius"});
    Ball b{read<std::vector<double>>(j, "center", where), read<double>(j, "radius", where)};
    if (static_cast<int>(b.center.size()) != d) throw ConfigError("target: ball center has the wrong dimension");
    if (!(b.radius >= 0.0)) throw ConfigError("target: negative radius");
    out = {{"kind", kind}, {"center", b.center}, {"radius", b.radius}};
    t.continuous = b;
  } else if (kind == "points") {
    only_keys(j, where, {"kind", "points"});
    t.points = read<std::vector<std::vector<int>>>(j, "points", where);
    for (const auto& p : t.points)
      if (static_cast<int>(p.size()) != d) throw ConfigError("target: point has the wrong dimension");
    out = {{"kind", kind}, {"points", t.points}};
  } else {
    throw ConfigError("target: unknown kind '" + kind + "'");
  }
  return {std::move(t), std::move(out)};
}

std::vector<int> positive_ints(std::vector<int> v, const std::string& what) {
  for (int n : v)
    if (n < 1) throw ConfigError(what + " entries must be >= 1");
  return v;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string config_hash(const json& resolved) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : resolved.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig parse_config(const json& raw, std::optional<std::uint64_t> seed_override) {
  only_keys(raw, "config",
            {"d", "n", "n_list", "gamma", "cost", "edge_costs", "tail_exponent_p", "reward", "target", "m0", "seed",
             "solver", "simulation", "limit", "lln", "isaacs", "checks", "output"});
  ExperimentConfig cfg;
  json& out = cfg.resolved;
  cfg.d = read<int>(raw, "d", "config");
  const int d = cfg.d;
  if (d < 2) throw ConfigError("d must be at least 2");
  out["d"] = d;

  if (raw.contains("n")) {
    cfg.n = read<int>(raw, "n", "config");
    if (*cfg.n < 1) throw ConfigError("n must be >= 1");
    out["n"] = *cfg.n;
  }
  if (raw.contains("n_list")) {
    cfg.n_list = positive_ints(read<std::vector<int>>(raw, "n_list", "config"), "n_list");
    out["n_list"] = cfg.n_list;
  }

  // Rates and costs.
  cfg.gamma = read<std::vector<std::vector<double>>>(raw, "gamma", "config");
  if (static_cast<int>(cfg.gamma.size()) != d) throw ConfigError("gamma must be a d x d matrix");
  for (int x = 0; x < d; ++x) {
    if (static_cast<int>(cfg.gamma[x].size()) != d) throw ConfigError("gamma must be a d x d matrix");
    if (cfg.gamma[x][x] != 0.0) throw ConfigError("gamma must have a zero diagonal");
    for (double g : cfg.gamma[x])
      if (!(g >= 0.0) || !std::isfinite(g)) throw ConfigError("gamma entries must be finite and nonnegative");
  }
  out["gamma"] = cfg.gamma;
  std::optional<EdgeSet> edges;
  try {
    edges = EdgeSet::from_rate_matrix(cfg.gamma);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("gamma: ") + e.what());
  }
  const CostSpec shared = parse_cost(read<json>(raw, "cost", "config"), "cost");
  out["cost"] = cost_to_json(shared);
  std::vector<CostSpec> per_edge(edges->size(), shared);
  out["edge_costs"] = json::array();
  if (raw.contains("edge_costs")) {
    for (const auto& item : read<json>(raw, "edge_costs", "config")) {
      only_keys(item, "edge_costs", {"from", "to", "cost"});
      const int from = read<int>(item, "from", "edge_costs"), to = read<int>(item, "to", "edge_costs");
      const int e = edges->index_of(from, to);
      if (e < 0) throw ConfigError("edge_costs: (" + std::to_string(from) + "," + std::to_string(to) + ") is not an edge");
      per_edge[e] = parse_cost(read<json>(item, "cost", "edge_costs"), "edge_costs.cost");
      out["edge_costs"].push_back({{"from", from}, {"to", to}, {"cost", cost_to_json(per_edge[e])}});
    }
  }
  std::optional<double> tail_p;
  if (raw.contains("tail_exponent_p") && !raw["tail_exponent_p"].is_null()) {
    tail_p = read<double>(raw, "tail_exponent_p", "config");
    if (!(*tail_p >= 1.0)) throw ConfigError("tail_exponent_p must be >= 1");
  }
  out["tail_exponent_p"] = tail_p ? json(*tail_p) : json(nullptr);
  auto [reward, reward_json] = parse_reward(read<json>(raw, "reward", "config"), d);
  out["reward"] = reward_json;

  std::vector<double> gammas;
  std::vector<CostFunction> costs;
  for (std::size_t e = 0; e < edges->size(); ++e) {
    gammas.push_back(cfg.gamma[(*edges)[e].from][(*edges)[e].to]);
    costs.emplace_back(per_edge[e]);
  }
  try {
    cfg.model.emplace(*edges, gammas, costs, reward, tail_p);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }

  if (raw.contains("target")) {
    auto [t, tj] = parse_target(raw["target"], d);
    cfg.target = std::move(t);
    out["target"] = tj;
  } else {
    out["target"] = nullptr;
  }

  cfg.m0 = read_or<std::vector<double>>(raw, "m0", std::vector<double>(d, 1.0 / d), "config");
  if (static_cast<int>(cfg.m0.size()) != d) throw ConfigError("m0 has the wrong dimension");
  double mass = 0.0;
  for (double v : cfg.m0) {
    if (!(v >= 0.0)) throw ConfigError("m0 must be nonnegative");
    mass += v;
  }
  if (std::abs(mass - 1.0) > 1e-9) throw ConfigError("m0 must sum to 1");
  out["m0"] = cfg.m0;

  if (seed_override) {
    cfg.seed = seed_override;
  } else if (raw.contains("seed") && !raw["seed"].is_null()) {
    cfg.seed = read<std::uint64_t>(raw, "seed", "config");
  }
  out["seed"] = cfg.seed ? json(*cfg.seed) : json(nullptr);

  {
    const json s = raw.value("solver", json::object());
    only_keys(s, "solver", {"tol", "max_sweeps", "box"});
    cfg.solver.tol = positive(read_or<double>(s, "tol", 1e-10, "solver"), "solver.tol");
    cfg.solver.max_sweeps = read_or<std::size_t>(s, "max_sweeps", 200000, "solver");
    if (cfg.solver.max_sweeps == 0) throw ConfigError("solver.max_sweeps must be positive");
    cfg.solver_w.tol = cfg.solver.tol;
    cfg.solver_w.max_sweeps = cfg.solver.max_sweeps;
    json box = nullptr;
    if (s.contains("box") && !s["box"].is_null()) {
      const auto b = read<std::vector<double>>(s, "box", "solver");
      if (b.size() != 2 || !(b[0] > 0.0) || !(b[1] > b[0])) throw ConfigError("solver.box must be [lo, hi] with 0 < lo < hi");
      cfg.solver.box = ControlBox{b[0], b[1]};
      box = b;
    }
    out["solver"] = {{"tol", cfg.solver.tol}, {"max_sweeps", cfg.solver.max_sweeps}, {"box", box}};
  }
  {
    const json s = raw.value("simulation", json::object());
    only_keys(s, "simulation", {"trials", "t_max_multiplier", "pilot_trials", "t_max", "policy", "risk_sensitive",
                                "dump_paths"});
    auto& sim = cfg.simulation;
    sim.trials = read_or<std::size_t>(s, "trials", sim.trials, "simulation");
    sim.t_max_multiplier = positive(read_or<double>(s, "t_max_multiplier", sim.t_max_multiplier, "simulation"),
                                    "simulation.t_max_multiplier");
    sim.pilot_trials = read_or<std::size_t>(s, "pilot_trials", sim.pilot_trials, "simulation");
    if (s.contains("t_max") && !s["t_max"].is_null())
      sim.t_max = positive(read<double>(s, "t_max", "simulation"), "simulation.t_max");
    sim.policy = read_or<std::string>(s, "policy", sim.policy, "simulation");
    if (sim.policy != "optimal" && sim.policy != "nominal")
      throw ConfigError("simulation.policy must be 'optimal' or 'nominal'");
    sim.risk_sensitive = read_or<bool>(s, "risk_sensitive", sim.risk_sensitive, "simulation");
    sim.dump_paths = read_or<std::size_t>(s, "dump_paths", 0, "simulation");
    if (sim.trials == 0 || sim.pilot_trials == 0) throw ConfigError("simulation trial counts must be positive");
    out["simulation"] = {{"trials", sim.trials},
                         {"t_max_multiplier", sim.t_max_multiplier},
                         {"pilot_trials", sim.pilot_trials},
                         {"t_max", sim.t_max ? json(*sim.t_max) : json(nullptr)},
                         {"policy", sim.policy},
                         {"risk_sensitive", sim.risk_sensitive},
                         {"dump_paths", sim.dump_paths}};
  }
  {
    const json s = raw.value("limit", json::object());
    only_keys(s, "limit", {"segments", "restarts", "h_fraction", "interior_margin", "penalty", "max_rounds",
                           "initial_step", "min_step", "cross_check_n"});
    auto& o = cfg.limit;
    o.segments = read_or<std::size_t>(s, "segments", o.segments, "limit");
    o.random_restarts = read_or<std::size_t>(s, "restarts", o.random_restarts, "limit");
    o.h_fraction = positive(read_or<double>(s, "h_fraction", o.h_fraction, "limit"), "limit.h_fraction");
    o.interior_margin = read_or<double>(s, "interior_margin", o.interior_margin, "limit");
    if (s.contains("penalty") && !s["penalty"].is_null())
      o.penalty = positive(read<double>(s, "penalty", "limit"), "limit.penalty");
    o.max_rounds = read_or<std::size_t>(s, "max_rounds", o.max_rounds, "limit");
    o.initial_step = positive(read_or<double>(s, "initial_step", o.initial_step, "limit"), "limit.initial_step");
    o.min_step = positive(read_or<double>(s, "min_step", o.min_step, "limit"), "limit.min_step");
    o.seed = cfg.seed.value_or(1);
    if (o.segments == 0) throw ConfigError("limit.segments must be positive");
    if (s.contains("cross_check_n") && !s["cross_check_n"].is_null()) {
      cfg.cross_check_n = read<int>(s, "cross_check_n", "limit");
      if (*cfg.cross_check_n < 1) throw ConfigError("limit.cross_check_n must be >= 1");
    }
    out["limit"] = {{"segments", o.segments},
                    {"restarts", o.random_restarts},
                    {"h_fraction", o.h_fraction},
                    {"interior_margin", o.interior_margin},
                    {"penalty", o.penalty ? json(*o.penalty) : json(nullptr)},
                    {"max_rounds", o.max_rounds},
                    {"initial_step", o.initial_step},
                    {"min_step", o.min_step},
                    {"cross_check_n", cfg.cross_check_n ? json(*cfg.cross_check_n) : json(nullptr)}};
  }
  {
    const json s = raw.value("lln", json::object());
    only_keys(s, "lln", {"T", "n_list", "trials", "flow_steps"});
    auto& l = cfg.lln;
    l.T = positive(read_or<double>(s, "T", l.T, "lln"), "lln.T");
    l.n_list = positive_ints(read_or<std::vector<int>>(s, "n_list", l.n_list, "lln"), "lln.n_list");
    l.trials = read_or<std::size_t>(s, "trials", l.trials, "lln");
    l.flow_steps = read_or<std::size_t>(s, "flow_steps", l.flow_steps, "lln");
    if (l.trials == 0 || l.flow_steps == 0) throw ConfigError("lln counts must be positive");
    out["lln"] = {{"T", l.T}, {"n_list", l.n_list}, {"trials", l.trials}, {"flow_steps", l.flow_steps}};
  }
  {
    const json s = raw.value("isaacs", json::object());
    only_keys(s, "isaacs", {"xi", "grid", "u_range", "q_range", "tolerance"});
    auto& c = cfg.isaacs;
    std::vector<double> xi_default;
    for (int k = 0; k < 20; ++k) xi_default.push_back(-2.0 + 4.0 * k / 19.0);
    c.xi = read_or<std::vector<double>>(s, "xi", xi_default, "isaacs");
    c.grid = read_or<std::size_t>(s, "grid", c.grid, "isaacs");
    const auto ur = read_or<std::vector<double>>(s, "u_range", {c.u_lo, c.u_hi}, "isaacs");
    const auto qr = read_or<std::vector<double>>(s, "q_range", {c.q_lo, c.q_hi}, "isaacs");
    if (ur.size() != 2 || !(ur[0] > 0) || !(ur[1] > ur[0]) || qr.size() != 2 || !(qr[0] > 0) || !(qr[1] > qr[0]))
      throw ConfigError("isaacs ranges must be [lo, hi] with 0 < lo < hi");
    c.u_lo = ur[0], c.u_hi = ur[1], c.q_lo = qr[0], c.q_hi = qr[1];
    c.tolerance = positive(read_or<double>(s, "tolerance", c.tolerance, "isaacs"), "isaacs.tolerance");
    if (c.grid < 3) throw ConfigError("isaacs.grid must be at least 3");
    out["isaacs"] = {{"xi", c.xi}, {"grid", c.grid}, {"u_range", ur}, {"q_range", qr}, {"tolerance", c.tolerance}};
  }
  {
    const json s = raw.value("checks", json::object());
    only_keys(s, "checks", {"u_range", "u_points", "epsilon", "q_points"});
    auto& c = cfg.checks;
    const auto ur = read_or<std::vector<double>>(s, "u_range", {c.u_lo, c.u_hi}, "checks");
    if (ur.size() != 2 || !(ur[0] > 0) || !(ur[1] > ur[0])) throw ConfigError("checks.u_range must be [lo, hi]");
    c.u_lo = ur[0], c.u_hi = ur[1];
    c.u_points = read_or<std::size_t>(s, "u_points", c.u_points, "checks");
    c.epsilon = positive(read_or<double>(s, "epsilon", c.epsilon, "checks"), "checks.epsilon");
    c.q_points = read_or<std::size_t>(s, "q_points", c.q_points, "checks");
    if (c.u_points < 3 || c.q_points < 3) throw ConfigError("checks grids need at least 3 points");
    out["checks"] = {{"u_range", ur}, {"u_points", c.u_points}, {"epsilon", c.epsilon}, {"q_points", c.q_points}};
  }
  cfg.output = read_or<std::string>(raw, "output", cfg.output, "config");
  return cfg;
}

ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json raw;
  try {
    raw = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(raw, seed_override);
}

TargetSet resolve_target(const ExperimentConfig& cfg, const SimplexGrid& grid) {
  const auto& t = cfg.target;
  try {
    if (t.continuous) return TargetSet(grid, *t.continuous);
    if (t.points.empty()) throw ConfigError("this command needs a target");
    ExplicitList list;
    for (const auto& p : t.points) {
      const int total = std::accumulate(p.begin(), p.end(), 0);
      if (total != grid.n()) throw ConfigError("target point does not sum to n = " + std::to_string(grid.n()));
      list.ordinals.push_back(grid.index(p));
    }
    return TargetSet(grid, list);
  } catch (const PreconditionError& e) {
    throw ConfigError(std::string("target: ") + e.what());
  }
}

const TargetKind& continuous_target(const ExperimentConfig& cfg) {
  if (!cfg.target.continuous) throw ConfigError("this command needs a half-space or ball target");
  return *cfg.target.continuous;
}

}  // namespace rsmf
