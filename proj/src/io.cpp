#include "polq/io.hpp"

#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <system_error>

namespace polq {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string format_number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace {

ojson matrix_json(const MatrixXd& m) {
  ojson rows = ojson::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ojson row = ojson::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

ojson vector_json(const VectorXd& v) {
  ojson arr = ojson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

ojson estimate_json(const Estimate& e) { return {{"mean", e.mean}, {"se", e.se}}; }

ojson study_json(const StepHalvingStudy& s) {
  return {{"steps", s.steps},
          {"coarse", estimate_json(s.coarse)},
          {"fine", estimate_json(s.fine)},
          {"difference", estimate_json(s.difference)},
          {"extrapolated", estimate_json(s.extrapolated)},
          {"allowance", s.allowance}};
}

std::string dump(const ojson& doc) { return doc.dump(2) + "\n"; }

void append_matrix_rows(std::string& out, const std::string& name, const MatrixPath<double>& path) {
  const auto& grid = path.grid;
  for (Eigen::Index r = 0; r < path[0].rows(); ++r)
    for (Eigen::Index c = 0; c < path[0].cols(); ++c) {
      const std::string series = name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
      for (std::size_t i = 0; i < grid.nodes(); ++i)
        out += series + "," + format_number(grid.time(i)) + "," + format_number(path[i](r, c)) + "\n";
    }
}

void append_columns(std::string& header, const char* prefix, Eigen::Index count) {
  for (Eigen::Index j = 0; j < count; ++j) header += std::string(",") + prefix + std::to_string(j + 1);
}

}  // namespace

std::string solution_document(const DeterministicSolution<double>& sol) {
  const auto& grid = sol.grid();
  ojson doc;
  doc["format_version"] = 1;
  doc["grid"] = {{"T", grid.T}, {"steps", grid.steps}};
  ojson nodes = ojson::object();
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    nodes[std::to_string(i)] = {{"t", grid.time(i)},
                                {"P", matrix_json(sol.P[i])},
                                {"Theta", matrix_json(sol.Theta[i])},
                                {"phi", vector_json(sol.phi[i])},
                                {"Sigma", matrix_json(sol.Sigma[i])},
                                {"Delta", matrix_json(sol.Delta[i])},
                                {"curlyA", matrix_json(sol.curlyA[i])},
                                {"Pi", matrix_json(sol.Pi[i])},
                                {"pi", vector_json(sol.pi_vec[i])}};
  }
  doc["nodes"] = std::move(nodes);
  return dump(doc);
}

std::string value_document(const ValueBreakdown<double>& v, double tilde_J, double hat_J_floor) {
  ojson doc;
  doc["format_version"] = 1;
  doc["value"] = {{"quadratic_term", v.quadratic_term}, {"linear_term", v.linear_term},
                  {"PiD_integral", v.PiD_integral},     {"PiDelta_integral", v.PiDelta_integral},
                  {"PDeltaC_integral", v.PDeltaC_integral}, {"Rinv_integral", v.Rinv_integral},
                  {"phia_integral", v.phia_integral},   {"total", v.total},
                  {"tilde_J", tilde_J},                 {"hat_J_floor", hat_J_floor}};
  return dump(doc);
}

std::string path_csv(const PathBundle<double>& b) {
  std::string out = "t";
  append_columns(out, "X", b.X.rows());
  append_columns(out, "Y", b.Y.rows());
  append_columns(out, "Xhat", b.Xhat.rows());
  append_columns(out, "Xtil", b.Xtil.rows());
  append_columns(out, "V", b.V.rows());
  append_columns(out, "u", b.u.rows());
  out += "\n";
  for (std::size_t i = 0; i < b.grid.nodes(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    out += format_number(b.grid.time(i));
    for (const auto* m : {&b.X, &b.Y, &b.Xhat, &b.Xtil, &b.V, &b.u})
      for (Eigen::Index r = 0; r < m->rows(); ++r) out += "," + format_number((*m)(r, c));
    out += "\n";
  }
  out += "cost," + format_number(b.cost) + "\n";
  return out;
}

std::string report_document(const VerificationResult& res) {
  const auto& r = res.report;
  ojson doc;
  doc["format_version"] = 1;
  doc["passed"] = res.passed();
  doc["batch"] = {{"n_paths", r.n_paths},
                  {"steps", r.steps},
                  {"policy", r.policy},
                  {"cost_mean", r.cost_mean},
                  {"cost_se", r.cost_se},
                  {"analytic_value", r.analytic_value},
                  {"innovation_increment_mean", vector_json(r.innovation_increment_mean)},
                  {"innovation_qv_ratio", r.innovation_qv_ratio},
                  {"J_hat", estimate_json(r.J_hat)},
                  {"J_tilde", estimate_json(r.J_tilde)},
                  {"cross_residual", estimate_json(r.cross_residual)}};
  ojson probes = ojson::array();
  for (const auto& p : r.probes)
    probes.push_back({{"node", p.node},
                      {"t", p.t},
                      {"emp_error_cov", matrix_json(p.emp_error_cov)},
                      {"cov_se", matrix_json(p.cov_se)},
                      {"Sigma", matrix_json(p.Sigma)},
                      {"orth_mean", p.orth_mean},
                      {"orth_se", p.orth_se}});
  doc["probes"] = std::move(probes);
  ojson comps = ojson::array();
  for (const auto& c : r.brownianity.components)
    comps.push_back({{"increment_mean", estimate_json(c.increment_mean)},
                     {"increment_var", estimate_json(c.increment_var)},
                     {"lag1_autocorr", estimate_json(c.lag1_autocorr)},
                     {"terminal_var", estimate_json(c.terminal_var)}});
  doc["brownianity"] = {{"h", r.brownianity.h}, {"qv_ratio", r.brownianity.qv_ratio}, {"components", comps}};
  ojson policies = ojson::array();
  for (const auto& p : res.policies)
    policies.push_back({{"label", p.label},
                        {"cost", estimate_json(p.cost)},
                        {"excess_over_feedback", estimate_json(p.excess_over_feedback)}});
  doc["policies"] = std::move(policies);
  doc["value_study"] = study_json(res.value_study);
  doc["perturbation_study"] = study_json(res.perturbation_study);
  const auto& d = res.decomposition;
  doc["decomposition"] = {{"J", estimate_json(d.J)},
                          {"J_hat", estimate_json(d.J_hat)},
                          {"J_tilde", estimate_json(d.J_tilde)},
                          {"residual", estimate_json(d.residual)},
                          {"tilde_J_analytic", d.tilde_J_analytic},
                          {"tilde_J_allowance", d.tilde_J_allowance}};
  ojson checks = ojson::array();
  for (const auto& c : res.checks)
    checks.push_back({{"name", c.name},
                      {"estimate", c.estimate},
                      {"se", c.se},
                      {"target", c.target},
                      {"band", c.band},
                      {"passed", c.passed}});
  doc["checks"] = std::move(checks);
  return dump(doc);
}

std::string checks_csv(const std::vector<CheckRow>& checks) {
  std::string out = "name,estimate,se,target,pass\n";
  for (const auto& c : checks)
    out += "\"" + c.name + "\"," + format_number(c.estimate) + "," + format_number(c.se) + "," +
           format_number(c.target) + "," + (c.passed ? "pass" : "fail") + "\n";
  return out;
}

std::string solution_plot_csv(const DeterministicSolution<double>& sol) {
  std::string out = "series,t,value\n";
  append_matrix_rows(out, "P", sol.P);
  append_matrix_rows(out, "Sigma", sol.Sigma);
  append_matrix_rows(out, "Theta", sol.Theta);
  return out;
}

std::string report_plot_csv(const VerificationResult& res) {
  std::string out = "series,t,value\n";
  auto row = [&](const std::string& series, double t, double v) {
    out += series + "," + format_number(t) + "," + format_number(v) + "\n";
  };
  for (const auto& p : res.report.probes)
    for (Eigen::Index r = 0; r < p.Sigma.rows(); ++r)
      for (Eigen::Index c = 0; c < p.Sigma.cols(); ++c) {
        const std::string idx = "[" + std::to_string(r) + "," + std::to_string(c) + "]";
        row("emp_error_cov" + idx, p.t, p.emp_error_cov(r, c));
        row("emp_error_cov_se" + idx, p.t, p.cov_se(r, c));
        row("Sigma" + idx, p.t, p.Sigma(r, c));
      }
  for (const auto& p : res.report.probes) {
    row("orth_mean", p.t, p.orth_mean);
    row("orth_se", p.t, p.orth_se);
  }
  return out;
}

void OutputSet::add(std::string name, std::string content) {
  files_.emplace_back(std::move(name), std::move(content));
}

void OutputSet::commit(const fs::path& directory) const {
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw Error(Errc::Io, "cannot create output directory " + directory.string() + ": " + ec.message());

  std::vector<fs::path> temps;
  auto cleanup = [&](const std::vector<fs::path>& paths) {
    for (const auto& p : paths) fs::remove(p, ec);
  };
  for (const auto& [name, content] : files_) {
    const fs::path tmp = directory / (name + ".tmp");
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (os) {
      temps.push_back(tmp);
      os.write(content.data(), static_cast<std::streamsize>(content.size()));
      os.close();
    }
    if (!os) {
      cleanup(temps);
      throw Error(Errc::Io, "cannot write " + tmp.string());
    }
  }
  std::vector<fs::path> done;
  for (std::size_t i = 0; i < files_.size(); ++i) {
    const fs::path target = directory / files_[i].first;
    fs::rename(temps[i], target, ec);
    if (ec) {
      cleanup(done);
      cleanup(temps);
      throw Error(Errc::Io, "cannot rename into " + target.string() + ": " + ec.message());
    }
    done.push_back(target);
  }
}

}  // namespace polq
