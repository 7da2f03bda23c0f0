#include "polq/commands.hpp"

#include "polq/io.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace polq {

int exit_code_for(Errc code) noexcept {
  switch (code) {
    case Errc::NonFinite:
    case Errc::PSDViolation: return exit_code::blow_up;
    case Errc::Io: return exit_code::io;
    case Errc::CheckFailure: return exit_code::check_failure;
    default: return exit_code::validation;
  }
}

EnvLookup process_environment() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
  };
}

std::uint64_t resolve_seed(const CommandOptions& opts, const Scenario& scenario, const EnvLookup& env) {
  if (opts.seed) return *opts.seed;
  if (env) {
    if (auto v = env("POLQ_SEED")) {
      std::size_t used = 0;
      std::uint64_t seed = 0;
      try {
        seed = std::stoull(*v, &used, 10);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != v->size() || v->front() == '-')
        throw Error(Errc::ValidationFailure, "POLQ_SEED is not an unsigned integer: '" + *v + "'");
      return seed;
    }
  }
  return scenario.mc.seed;
}

Scenario load_scenario(const CommandOptions& opts, bool validated) {
  std::ifstream is(opts.scenario_path, std::ios::binary);
  if (!is) throw Error(Errc::Io, "cannot read scenario file " + opts.scenario_path);
  std::ostringstream buf;
  buf << is.rdbuf();
  Scenario s = validated ? parse_scenario(buf.str()) : parse_scenario_unchecked(buf.str());
  if (opts.steps) {
    s.grid = TimeGrid<double>(s.model.T, *opts.steps);
    if (s.policy.table && static_cast<std::size_t>(s.policy.table->cols()) != s.grid.nodes())
      throw Error(Errc::ShapeMismatch, "policy table does not match the overridden grid");
  }
  if (opts.paths) s.mc.n_paths = *opts.paths;
  if (opts.threads) s.mc.threads = *opts.threads;
  if (opts.out) s.output.directory = *opts.out;
  return s;
}

namespace {

bool wants(const Scenario& s, const std::string& format) {
  return std::find(s.output.formats.begin(), s.output.formats.end(), format) != s.output.formats.end();
}

template <typename Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const ValidationError& e) {
    err << "validation failed: " << e.report().summary() << "\n";
    return exit_code::validation;
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::validation;
  }
}

}  // namespace

int cmd_validate(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Scenario s = load_scenario(opts, false);
    const auto report = validate(s.model, s.tol);
    for (const auto& c : report.checks) {
      out << (c.passed ? "PASS " : "FAIL ") << c.name;
      if (!c.passed && c.worst_node) out << " (node " << *c.worst_node << ")";
      out << " margin " << format_number(c.margin) << "\n";
    }
    return report.passed() ? exit_code::ok : exit_code::validation;
  });
}

int cmd_solve(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Scenario s = load_scenario(opts);
    const auto sol = solve_all(s.model, s.grid, s.tol.psd_rel);
    const auto value = optimal_value(s.model.x0, sol, s.model);
    const double tj = tilde_J(sol, s.model);
    const double hj = hat_J_floor(s.model.x0, sol, s.model);
    OutputSet files;
    if (wants(s, "json")) {
      files.add("solution.json", solution_document(sol));
      files.add("value.json", value_document(value, tj, hj));
    }
    if (wants(s, "csv")) files.add("solution_plot.csv", solution_plot_csv(sol));
    files.commit(s.output.directory);
    out << "optimal_value " << format_number(value.total) << "\n";
    return exit_code::ok;
  });
}

int cmd_simulate(const CommandOptions& opts, std::ostream& out, std::ostream& err, const EnvLookup& env) {
  return guarded(err, [&] {
    const Scenario s = load_scenario(opts);
    const std::uint64_t seed = resolve_seed(opts, s, env);
    const std::size_t n = opts.paths.value_or(1);
    const auto sol = solve_all(s.model, s.grid, s.tol.psd_rel);
    const ClosedLoopSimulator<double> sim(s.model, sol);
    const auto policy = make_policy(s);
    OutputSet files;
    for (std::size_t i = 0; i < n; ++i) {
      const auto bundle = sim.run(policy, draw_noise(seed, i, s.grid, s.model.dims));
      std::ostringstream name;
      name << "path_" << std::setw(6) << std::setfill('0') << i << ".csv";
      files.add(name.str(), path_csv(bundle));
    }
    files.commit(s.output.directory);
    out << "wrote " << n << " path file" << (n == 1 ? "" : "s") << " to " << s.output.directory << "\n";
    return exit_code::ok;
  });
}

int cmd_verify(const CommandOptions& opts, std::ostream& out, std::ostream& err, const EnvLookup& env) {
  return guarded(err, [&] {
    const Scenario s = load_scenario(opts);
    VerificationConfig cfg;
    cfg.n_paths = s.mc.n_paths;
    cfg.seed = resolve_seed(opts, s, env);
    cfg.probe_times = s.mc.probe_times;
    cfg.perturbation = s.mc.perturbation;
    cfg.threads = s.mc.threads;
    cfg.debug_sigma_scale = opts.debug_sigma_scale;
    cfg.psd_rel = s.tol.psd_rel;
    const auto res = run_verification(s.model, s.grid, cfg);

    OutputSet files;
    if (wants(s, "json")) files.add("report.json", report_document(res));
    if (wants(s, "csv")) {
      files.add("checks.csv", checks_csv(res.checks));
      files.add("report_plot.csv", report_plot_csv(res));
    }
    files.commit(s.output.directory);

    for (const auto& c : res.checks)
      out << (c.passed ? "PASS " : "FAIL ") << c.name << " estimate=" << format_number(c.estimate)
          << " target=" << format_number(c.target) << " band=" << format_number(c.band) << "\n";
    if (!res.passed()) {
      err << "failing checks:";
      for (const auto& name : res.failures()) err << " " << name;
      err << "\n";
      return exit_code::check_failure;
    }
    return exit_code::ok;
  });
}

}  // namespace polq
