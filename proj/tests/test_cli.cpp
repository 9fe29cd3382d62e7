#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "rsmf/commands.hpp"
#include "rsmf/config.hpp"
#include "rsmf/errors.hpp"

using namespace rsmf;
namespace fs = std::filesystem;

namespace {

json base_config() {
  return json::parse(R"({
    "d": 2,
    "n": 8,
    "gamma": [[0, 1], [1, 0]],
    "cost": {"family": "power", "p": 1, "q": 1},
    "tail_exponent_p": 1,
    "reward": {"kind": "constant", "value": 1},
    "target": {"kind": "half_space", "coordinate": 0, "threshold": 0.75, "at_least": true},
    "m0": [0.5, 0.5],
    "seed": 11,
    "simulation": {"trials": 2000},
    "limit": {"segments": 8, "restarts": 1},
    "lln": {"n_list": [16, 64], "trials": 100, "flow_steps": 2000},
    "isaacs": {"xi": [-1.0, 0.5, 2.0], "grid": 60}
  })");
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rsmf_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json result_of(const fs::path& dir, const std::string& file) {
  std::ifstream in(dir / file);
  return json::parse(in)["result"];
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

ExitStatus run(const std::string& command, const json& raw, const fs::path& dir) {
  return run_command(command, parse_config(raw), RunOptions{dir.string(), 2, false});
}

int run_binary(const std::string& args) {
  const int status = std::system((std::string(RSMF_CLI_PATH) + " " + args + " 2>/dev/null").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const json& raw, const fs::path& dir) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << raw.dump();
  return p;
}

}  // namespace

TEST_CASE("cost check passes for the power family and reports violations for a quadratic table") {
  const fs::path dir = scratch("check");
  CHECK(run("check-cost", base_config(), dir) == ExitStatus::ok);
  CHECK(result_of(dir, "check_cost.json")["verdict"] == "pass");

  json raw = base_config();
  json u = json::array(), c = json::array();
  for (int i = 1; i <= 300; ++i) {
    const double x = i / 100.0;
    u.push_back(x);
    c.push_back((x - 1) * (x - 1));
  }
  raw["cost"] = {{"family", "tabulated"}, {"u", u}, {"c", c}};
  raw.erase("tail_exponent_p");
  raw["checks"] = {{"u_range", {0.02, 2.9}}};
  CHECK(run("check-cost", raw, dir) == ExitStatus::check_failed);
  const json r = result_of(dir, "check_cost.json");
  CHECK(r["verdict"] == "fail");
  const json& interval = r["admissibility"]["edges"][0]["violation_interval"];
  REQUIRE(interval.is_array());
  CHECK(interval[0].get<double>() < interval[1].get<double>());
}

TEST_CASE("malformed configs exit with the config status") {
  const fs::path dir = scratch("bad");
  json raw = base_config();
  raw["d"] = 3;
  raw["gamma"] = {{0, 1, 0}, {1, 0, 0}, {0, 0, 0}};
  raw["m0"] = {0.4, 0.3, 0.3};
  CHECK_THROWS_AS(parse_config(raw), ConfigError);
  CHECK(run_binary("check-cost --config " + write_config(raw, dir).string() + " --out " + dir.string()) == 2);

  json typo = base_config();
  typo["solver"] = {{"tolerance", 1e-8}};
  CHECK_THROWS_AS(parse_config(typo), ConfigError);

  json empty = base_config();
  empty["target"]["threshold"] = 1.5;
  CHECK(run_binary("solve --config " + write_config(empty, dir).string() + " --out " + dir.string()) == 2);

  CHECK(run_binary("solve --config " + (dir / "missing.json").string()) == 2);
  CHECK(run_binary("no-such-command") == 2);

  json no_seed = base_config();
  no_seed.erase("seed");
  CHECK_THROWS_AS(run("simulate", no_seed, dir), ConfigError);
}

TEST_CASE("solve reports the equivalence gap and the single-agent value") {
  const fs::path dir = scratch("solve");
  CHECK(run("solve", base_config(), dir) == ExitStatus::ok);
  CHECK(result_of(dir, "solve.json")["equivalence_gap"].get<double>() <= 1e-5);

  json one = base_config();
  one["n"] = 1;
  one["m0"] = {0.0, 1.0};
  CHECK(run("solve", one, dir) == ExitStatus::ok);
  // One agent, one useful edge: F(q) = 2 l(q) gives V = min_q (2 l(q) + 1) / q = 2 log(3/2).
  CHECK(result_of(dir, "solve.json")["m0"]["V"].get<double>() == doctest::Approx(2.0 * std::log(1.5)).epsilon(1e-9));
}

TEST_CASE("simulate agrees with the solved value and is reproducible") {
  const fs::path a = scratch("sim_a"), b = scratch("sim_b");
  CHECK(run("simulate", base_config(), a) == ExitStatus::ok);
  const json r = result_of(a, "simulate.json");
  CHECK(std::abs(r["additive_z"].get<double>()) <= 3.0);
  CHECK(std::abs(r["risk_sensitive_z"].get<double>()) <= 3.0);

  CHECK(run_command("simulate", parse_config(base_config()), RunOptions{b.string(), 5, false}) == ExitStatus::ok);
  CHECK(slurp(a / "simulate.json") == slurp(b / "simulate.json"));

  json nominal = base_config();
  nominal["reward"]["value"] = 0.0;
  nominal["simulation"]["policy"] = "nominal";
  nominal["simulation"]["trials"] = 200;
  CHECK(run("simulate", nominal, a) == ExitStatus::ok);
  CHECK(result_of(a, "simulate.json")["risk_sensitive"]["estimate"].get<double>() == 1.0);
}

TEST_CASE("seed override changes the embedded config and hash") {
  const fs::path dir = scratch("seed");
  const ExperimentConfig base = parse_config(base_config());
  const ExperimentConfig other = parse_config(base_config(), 99);
  CHECK(other.resolved["seed"] == 99);
  CHECK(config_hash(base.resolved) != config_hash(other.resolved));
  CHECK(run("solve", base_config(), dir) == ExitStatus::ok);
  std::ifstream in(dir / "values.csv");
  std::string first;
  std::getline(in, first);
  CHECK(first == "# config_hash=" + config_hash(base.resolved));
}

TEST_CASE("limit mirrors the trajectory optimizer") {
  const fs::path dir = scratch("limit");
  json raw = base_config();
  raw["limit"]["cross_check_n"] = 64;
  CHECK(run("limit", raw, dir) == ExitStatus::ok);
  const json r = result_of(dir, "limit.json");
  CHECK(r["exited"] == true);
  CHECK(r["cross_check"]["relative_gap"].get<double>() <= 0.05);
  for (const auto& s : r["restarts"]) CHECK(s["final_objective"].get<double>() <= s["initial_objective"].get<double>());

  raw["m0"] = {0.9, 0.1};
  CHECK(run("limit", raw, dir) == ExitStatus::ok);
  CHECK(result_of(dir, "limit.json")["cost"].get<double>() == 0.0);
}

TEST_CASE("convergence refuses costs outside the growth gate") {
  const fs::path dir = scratch("conv");
  json raw = base_config();
  raw["n_list"] = {4, 8};
  raw["target"] = {{"kind", "half_space"}, {"coordinate", 0}, {"threshold", 0.0}, {"at_least", true}};
  CHECK(run("convergence", raw, dir) == ExitStatus::ok);
  for (const auto& row : result_of(dir, "convergence.json")["rows"]) CHECK(row["gap"].get<double>() == 0.0);

  raw["cost"] = {{"family", "log"}};
  raw.erase("tail_exponent_p");
  CHECK(run_binary("convergence --config " + write_config(raw, dir).string() + " --out " + dir.string()) == 1);
}

TEST_CASE("lln and isaacs produce their tables") {
  const fs::path dir = scratch("misc");
  CHECK(run("lln", base_config(), dir) == ExitStatus::ok);
  CHECK(result_of(dir, "lln.json")["rows"].size() == 2);
  CHECK(run("isaacs", base_config(), dir) == ExitStatus::ok);
  CHECK(result_of(dir, "isaacs.json")["max_gap"].get<double>() <= 1e-3);
}

TEST_CASE("iteration limits map to the capacity status") {
  json raw = base_config();
  raw["solver"] = {{"max_sweeps", 1}};
  const fs::path dir = scratch("iter");
  CHECK(run_binary("solve --config " + write_config(raw, dir).string() + " --out " + dir.string()) == 3);
}
