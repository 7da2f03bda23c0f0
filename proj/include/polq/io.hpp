// Result documents, CSV exports and an all-or-nothing file writer.
#pragma once

#include "polq/detsolve.hpp"
#include "polq/simulate.hpp"
#include "polq/value.hpp"
#include "polq/verify.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace polq {

/// %.17g, so every double round-trips.
std::string format_number(double x);

std::string solution_document(const DeterministicSolution<double>& sol);
std::string value_document(const ValueBreakdown<double>& value, double tilde_J, double hat_J_floor);
std::string path_csv(const PathBundle<double>& bundle);
std::string report_document(const VerificationResult& result);
std::string checks_csv(const std::vector<CheckRow>& checks);

/// Long-format (series, t, value) rows for P, Sigma and Theta entries.
std::string solution_plot_csv(const DeterministicSolution<double>& sol);
/// Long-format rows for batch summaries at the probe nodes.
std::string report_plot_csv(const VerificationResult& result);

/// Collects named files and writes them into one directory. Each file goes
/// to a temporary name first and is renamed only after every write has
/// succeeded; on failure nothing is left behind and Errc::Io is thrown.
class OutputSet {
 public:
  void add(std::string name, std::string content);
  std::size_t size() const noexcept { return files_.size(); }
  void commit(const std::filesystem::path& directory) const;

 private:
  std::vector<std::pair<std::string, std::string>> files_;
};

}  // namespace polq
