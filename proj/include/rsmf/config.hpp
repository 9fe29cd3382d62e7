#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsmf/cost_models.hpp"
#include "rsmf/deterministic_limit.hpp"
#include "rsmf/hjb_solver.hpp"
#include "rsmf/simplex_lattice.hpp"

namespace rsmf {

using json = nlohmann::json;

struct SimulationConfig {
  std::size_t trials = 10000;
  double t_max_multiplier = 50.0;
  std::size_t pilot_trials = 200;
  std::optional<double> t_max;  ///< overrides the pilot-based horizon
  std::string policy = "optimal";  ///< "optimal" or "nominal"
  bool risk_sensitive = true;
  std::size_t dump_paths = 0;  ///< number of recorded trajectories written to paths.csv
};

struct LLNConfig {
  double T = 2.0;
  std::vector<int> n_list{16, 64, 256, 1024};
  std::size_t trials = 1000;
  std::size_t flow_steps = 20000;
};

struct IsaacsConfig {
  std::vector<double> xi;
  std::size_t grid = 200;
  double u_lo = 1e-3, u_hi = 1e3;
  double q_lo = 1e-4, q_hi = 1e4;
  double tolerance = 1e-3;
};

struct CheckConfig {
  double u_lo = 1e-3, u_hi = 1e3;
  std::size_t u_points = 2001;
  double epsilon = 0.1;          ///< slack in the upper bound on F
  std::size_t q_points = 1000;
};

/// Target description independent of any particular grid.
struct TargetConfig {
  std::optional<TargetKind> continuous;      ///< half-space or ball
  std::vector<std::vector<int>> points;      ///< explicit count vectors (single n only)
};

/// Validated experiment description. `resolved` holds every field with defaults filled
/// in; it is what output files embed and hash.
struct ExperimentConfig {
  json resolved;
  int d = 0;
  std::optional<int> n;
  std::vector<int> n_list;
  std::vector<std::vector<double>> gamma;
  std::optional<CostModel> model;
  TargetConfig target;
  std::vector<double> m0;
  std::optional<std::uint64_t> seed;
  SolveVOptions solver;
  SolveWOptions solver_w;
  SimulationConfig simulation;
  OptimizeOptions limit;
  std::optional<int> cross_check_n;
  LLNConfig lln;
  IsaacsConfig isaacs;
  CheckConfig checks;
  std::string output = "out";
};

/// Parses and validates; every problem surfaces as ConfigError. `seed_override` replaces
/// the configured seed before resolution.
ExperimentConfig parse_config(const json& raw, std::optional<std::uint64_t> seed_override = std::nullopt);
ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override = std::nullopt);

/// Resolves the target on a grid; ConfigError if it selects nothing.
TargetSet resolve_target(const ExperimentConfig& cfg, const SimplexGrid& grid);

/// The continuous target; ConfigError for explicit point lists.
const TargetKind& continuous_target(const ExperimentConfig& cfg);

/// 64-bit FNV-1a over the compact dump of the resolved config, as 16 hex digits.
std::string config_hash(const json& resolved);

/// Shortest round-trip decimal form ("inf", "-inf", "nan" for non-finite values).
std::string format_double(double v);

}  // namespace rsmf
