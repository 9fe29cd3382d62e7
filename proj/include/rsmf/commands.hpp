#pragma once

#include <exception>
#include <string>
#include <vector>

#include "rsmf/config.hpp"
#include "rsmf/errors.hpp"

namespace rsmf {

struct RunOptions {
  std::string out_dir;   ///< empty: the config's output directory
  unsigned workers = 0;  ///< 0 = hardware concurrency
  bool verbose = false;
};

/// Subcommand names in help order.
const std::vector<std::string>& command_names();

/// Runs one subcommand and writes its files. Returns the exit status for a completed run
/// (check_failed when a reported check does not pass); errors propagate as exceptions.
ExitStatus run_command(const std::string& name, const ExperimentConfig& cfg, const RunOptions& opts);

ExitStatus cmd_check_cost(const ExperimentConfig& cfg, const RunOptions& opts);
ExitStatus cmd_solve(const ExperimentConfig& cfg, const RunOptions& opts);
ExitStatus cmd_simulate(const ExperimentConfig& cfg, const RunOptions& opts);
ExitStatus cmd_limit(const ExperimentConfig& cfg, const RunOptions& opts);
ExitStatus cmd_convergence(const ExperimentConfig& cfg, const RunOptions& opts);
ExitStatus cmd_lln(const ExperimentConfig& cfg, const RunOptions& opts);
ExitStatus cmd_isaacs(const ExperimentConfig& cfg, const RunOptions& opts);

/// Exit status for an exception escaping a command.
ExitStatus exit_status_for(const std::exception& e);

}  // namespace rsmf
