// Scenario documents: strict JSON schema in, validated model out.
#pragma once

#include "polq/model.hpp"
#include "polq/simulate.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace polq {

struct PolicySpec {
  PolicyKind kind{PolicyKind::FilterFeedback};
  std::optional<VectorXd> offset;  // constant offset / open-loop value
  std::optional<MatrixXd> table;   // m x nodes of the solver grid

  friend bool operator==(const PolicySpec&, const PolicySpec&) = default;
};

struct MonteCarloSpec {
  std::size_t n_paths{20000};
  std::uint64_t seed{20240607};
  std::vector<double> probe_times;  // empty means T/4, T/2, 3T/4, T
  double perturbation{0.5};
  unsigned threads{1};

  friend bool operator==(const MonteCarloSpec&, const MonteCarloSpec&) = default;
};

struct OutputSpec {
  std::string directory{"polq_out"};
  std::vector<std::string> formats{"json", "csv"};

  friend bool operator==(const OutputSpec&, const OutputSpec&) = default;
};

struct Scenario {
  ModelSpec<double> model;
  TimeGrid<double> grid;
  ToleranceConfig tol;
  PolicySpec policy;
  MonteCarloSpec mc;
  OutputSpec output;
  // Which convention the source used; kept so serialization round-trips.
  bool constant_coefficients{true};
  bool constant_cost{true};
};

/// Validation failure carrying the full report.
class ValidationError : public Error {
 public:
  explicit ValidationError(ValidationReport report)
      : Error(Errc::ValidationFailure, report.summary()), report_(std::move(report)) {}
  const ValidationReport& report() const noexcept { return report_; }

 private:
  ValidationReport report_;
};

/// Parses and validates a scenario. Throws SyntaxError (with line/column or
/// JSON path), UnknownField, ShapeMismatch, or ValidationError.
Scenario parse_scenario(const std::string& text);

/// Parses without running the assumption checks (shapes are still checked).
Scenario parse_scenario_unchecked(const std::string& text);

std::string serialize_scenario(const Scenario& scenario);

/// Policy object on the scenario's solver grid.
ControlPolicy<double> make_policy(const Scenario& scenario);

/// Whether two scenarios describe the same numbers.
bool equivalent(const Scenario& a, const Scenario& b);

}  // namespace polq
