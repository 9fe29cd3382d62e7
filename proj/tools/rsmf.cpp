#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rsmf/commands.hpp"
#include "rsmf/config.hpp"
#include "rsmf/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Mean-field risk-sensitive control experiments"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  unsigned workers = 0;
  bool verbose = false;
  const std::map<std::string, std::string> about{
      {"check-cost", "admissibility, growth and transformed-cost checks"},
      {"solve", "lattice value, risk-sensitive solve and optimal policy"},
      {"simulate", "Monte Carlo estimates under the solved policy"},
      {"limit", "optimal trajectory of the deterministic limit"},
      {"convergence", "lattice values against the deterministic limit"},
      {"lln", "distance to the fluid flow as n grows"},
      {"isaacs", "inf-sup vs sup-inf per edge"},
  };
  for (const auto& name : rsmf::command_names()) {
    auto* sub = app.add_subcommand(name, about.at(name));
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory (overrides the config)");
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--workers", workers, "worker threads, 0 = all cores");
    sub->add_flag("--verbose", verbose, "progress on stderr");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(rsmf::ExitStatus::config_error);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const rsmf::ExperimentConfig cfg = rsmf::load_config(config_path, seed);
    const rsmf::RunOptions opts{out_dir, workers, verbose};
    return static_cast<int>(rsmf::run_command(command, cfg, opts));
  } catch (const std::exception& e) {
    std::cerr << "rsmf " << command << ": " << e.what() << "\n";
    return static_cast<int>(rsmf::exit_status_for(e));
  }
}
