// Subcommand implementations behind the polq executable.
#pragma once

#include "polq/scenario.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>

namespace polq {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int validation = 2;
inline constexpr int blow_up = 3;
inline constexpr int check_failure = 4;
inline constexpr int io = 5;
}  // namespace exit_code

int exit_code_for(Errc code) noexcept;

struct CommandOptions {
  std::string scenario_path;
  std::optional<std::string> out;  // overrides output.directory
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> paths;
  std::optional<std::size_t> steps;  // solver/simulation grid override
  std::optional<unsigned> threads;
  double debug_sigma_scale{1.0};
};

/// Reads environment variables; replaceable in tests.
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_environment();

/// Flag, then POLQ_SEED, then the scenario value.
std::uint64_t resolve_seed(const CommandOptions& opts, const Scenario& scenario, const EnvLookup& env);

/// Loads the scenario file and applies grid, path and thread overrides.
/// Assumption checks run only when `validated` is set.
Scenario load_scenario(const CommandOptions& opts, bool validated = true);

// Each returns the process exit status; errors are reported on `err`.
int cmd_validate(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_solve(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_simulate(const CommandOptions& opts, std::ostream& out, std::ostream& err,
                 const EnvLookup& env = process_environment());
int cmd_verify(const CommandOptions& opts, std::ostream& out, std::ostream& err,
               const EnvLookup& env = process_environment());

}  // namespace polq
