// polq: solve, simulate and verify partially observed LQ control scenarios.
#include "polq/commands.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Partially observed linear-quadratic control: solver, simulator and Monte Carlo verifier"};
  app.require_subcommand(1);

  polq::CommandOptions opts;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t paths = 0;
  std::size_t steps = 0;
  unsigned threads = 0;

  auto add_shared = [&](CLI::App* cmd) {
    cmd->add_option("--scenario", opts.scenario_path, "Scenario JSON file")->required();
    cmd->add_option("--out", out, "Output directory (overrides the scenario)");
    cmd->add_option("--steps", steps, "Grid steps (overrides the scenario)")->check(CLI::PositiveNumber);
  };
  auto add_mc = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Random seed (overrides POLQ_SEED and the scenario)");
    cmd->add_option("--paths", paths, "Number of paths")->check(CLI::NonNegativeNumber);
    cmd->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  };

  auto* validate = app.add_subcommand("validate", "Check a scenario against the model assumptions");
  add_shared(validate);
  auto* solve = app.add_subcommand("solve", "Solve the deterministic equations and the optimal value");
  add_shared(solve);
  auto* simulate = app.add_subcommand("simulate", "Write per-path CSVs under the scenario policy");
  add_shared(simulate);
  add_mc(simulate);
  auto* verify = app.add_subcommand("verify", "Run the Monte Carlo verification suite");
  add_shared(verify);
  add_mc(verify);
  verify->add_option("--debug-scale-sigma", opts.debug_sigma_scale, "Scale Sigma to inject a filter error")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : polq::exit_code::validation;
  }

  auto* cmd = app.get_subcommands().front();
  if (cmd->count("--out")) opts.out = out;
  if (cmd->count("--steps")) opts.steps = steps;
  if (cmd != validate && cmd != solve) {
    if (cmd->count("--seed")) opts.seed = seed;
    if (cmd->count("--paths")) opts.paths = paths;
    if (cmd->count("--threads")) opts.threads = threads;
  }

  if (cmd == validate) return polq::cmd_validate(opts, std::cout, std::cerr);
  if (cmd == solve) return polq::cmd_solve(opts, std::cout, std::cerr);
  if (cmd == simulate) return polq::cmd_simulate(opts, std::cout, std::cerr);
  return polq::cmd_verify(opts, std::cout, std::cerr);
}
