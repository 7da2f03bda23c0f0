#include "polq/verify.hpp"

#include "polq/value.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

namespace polq {

namespace {

// Runs body(i) for i in [0, count) on up to `threads` workers. Each index is
// handled exactly once; callers write into pre-sized per-index slots.
template <typename Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
  threads = std::max(1u, threads);
  if (threads == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

double combined_se(double a, double b) { return std::sqrt(a * a + b * b); }

std::string fmt_time(double t) {
  std::ostringstream os;
  os.precision(6);
  os << t;
  return os.str();
}

// Path-level integrals evaluated with left Riemann sums, matching the
// simulator's cost quadrature.
struct PathCosts {
  double J{0};
  double J_hat{0};
  double J_tilde{0};
};

PathCosts path_costs(const ClosedLoopSimulator<double>& sim, const ModelSpec<double>& model,
                     const PathBundle<double>& b) {
  const auto& grid = b.grid;
  const double h = grid.step();
  PathCosts c;
  c.J = b.cost;
  double hat = 0;
  double til = 0;
  for (std::size_t i = 0; i < grid.steps; ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    const auto& w = sim.step_data(i).cost;
    const VectorXd xhat = b.Xhat.col(col);
    const VectorXd xtil = b.Xtil.col(col);
    const VectorXd u = b.u.col(col);
    hat += running_cost(w, xhat, u);
    til += xtil.dot(w.Q * xtil) + 2.0 * w.q.dot(xtil);
  }
  const auto last = static_cast<Eigen::Index>(grid.steps);
  const VectorXd xhat_T = b.Xhat.col(last);
  const VectorXd xtil_T = b.Xtil.col(last);
  c.J_hat = hat * h + terminal_cost(xhat_T, model);
  c.J_tilde = til * h + terminal_cost(xtil_T, model);
  return c;
}

// Expected estimation-error cost of the discrete scheme (the q and g terms
// vanish because the discrete error has zero mean).
double discrete_tilde_J(const ModelSpec<double>& model, const DeterministicSolution<double>& sol,
                        std::size_t refine) {
  const auto cov = discrete_error_covariance(model, sol, refine);
  const TimeGrid<double> fine(sol.grid().T, sol.grid().steps * refine);
  double acc = 0;
  for (std::size_t j = 0; j < fine.steps; ++j) acc += (sample(model.cost, fine.time(j)).Q * cov[j]).trace();
  return acc * fine.step() + (model.cost.G * cov.back()).trace();
}

}  // namespace

Estimate mean_se(std::span<const double> values) {
  Estimate e;
  if (values.empty()) return e;
  double sum = 0;
  for (double v : values) sum += v;
  e.mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return e;
  double ss = 0;
  for (double v : values) ss += (v - e.mean) * (v - e.mean);
  const double var = ss / static_cast<double>(values.size() - 1);
  e.se = std::sqrt(var / static_cast<double>(values.size()));
  return e;
}

BrownianityAccumulator::BrownianityAccumulator(std::size_t d, const TimeGrid<double>& grid)
    : grid_(grid), sums_(d) {}

void BrownianityAccumulator::add(const MatrixXd& vcheck) {
  if (static_cast<std::size_t>(vcheck.rows()) != sums_.size() ||
      static_cast<std::size_t>(vcheck.cols()) != grid_.nodes())
    throw Error(Errc::ShapeMismatch, "normalized innovation path has the wrong shape");
  for (std::size_t j = 0; j < sums_.size(); ++j) {
    auto& s = sums_[j];
    const auto row = static_cast<Eigen::Index>(j);
    double prev = 0;
    for (Eigen::Index c = 0; c + 1 < vcheck.cols(); ++c) {
      const double inc = vcheck(row, c + 1) - vcheck(row, c);
      s.inc += inc;
      s.inc2 += inc * inc;
      s.inc4 += inc * inc * inc * inc;
      if (c > 0) {
        s.lag += prev * inc;
        s.lag2 += prev * inc * prev * inc;
      }
      prev = inc;
    }
    const double term = vcheck(row, vcheck.cols() - 1);
    s.term += term;
    s.term2 += term * term;
    s.term4 += term * term * term * term;
  }
  ++paths_;
}

void BrownianityAccumulator::merge(const BrownianityAccumulator& other) {
  for (std::size_t j = 0; j < sums_.size(); ++j) {
    auto& s = sums_[j];
    const auto& o = other.sums_[j];
    s.inc += o.inc;
    s.inc2 += o.inc2;
    s.inc4 += o.inc4;
    s.lag += o.lag;
    s.lag2 += o.lag2;
    s.term += o.term;
    s.term2 += o.term2;
    s.term4 += o.term4;
  }
  paths_ += other.paths_;
}

BrownianityStats BrownianityAccumulator::finish() const {
  BrownianityStats out;
  out.n_paths = paths_;
  out.steps = grid_.steps;
  out.h = grid_.step();
  out.T = grid_.T;
  if (paths_ == 0) return out;
  const double n_inc = static_cast<double>(paths_ * grid_.steps);
  const double n_lag = static_cast<double>(paths_ * (grid_.steps - 1));
  const double n_paths = static_cast<double>(paths_);
  double qv = 0;
  for (const auto& s : sums_) {
    ComponentBrownianity c;
    const double m1 = s.inc / n_inc;
    const double m2 = s.inc2 / n_inc;
    const double m4 = s.inc4 / n_inc;
    c.increment_mean = {m1, std::sqrt(std::max(0.0, m2 - m1 * m1) / n_inc)};
    c.increment_var = {m2 - m1 * m1, std::sqrt(std::max(0.0, m4 - m2 * m2) / n_inc)};
    if (m2 > 0 && n_lag > 0) {
      const double lm = s.lag / n_lag;
      const double lv = std::max(0.0, s.lag2 / n_lag - lm * lm);
      c.lag1_autocorr = {lm / m2, std::sqrt(lv / n_lag) / m2};
    }
    const double t1 = s.term / n_paths;
    const double t2 = s.term2 / n_paths;
    const double t4 = s.term4 / n_paths;
    c.terminal_var = {t2 - t1 * t1, std::sqrt(std::max(0.0, t4 - t2 * t2) / n_paths)};
    out.components.push_back(c);
    qv += s.inc2;
  }
  out.qv_ratio = qv / (n_paths * static_cast<double>(sums_.size()) * grid_.T);
  return out;
}

BrownianityStats brownianity_report(std::span<const PathBundle<double>> bundles) {
  if (bundles.empty()) throw Error(Errc::InsufficientPaths, "brownianity report needs at least one path");
  BrownianityAccumulator acc(static_cast<std::size_t>(bundles.front().Vcheck.rows()), bundles.front().grid);
  for (const auto& b : bundles) acc.add(b.Vcheck);
  return acc.finish();
}

BatchReport run_batch(const ModelSpec<double>& model, const DeterministicSolution<double>& sol,
                      const ControlPolicy<double>& policy, std::size_t n_paths, std::uint64_t seed,
                      const std::vector<std::size_t>& probe_nodes, unsigned threads) {
  if (n_paths < 2) throw Error(Errc::InsufficientPaths, "a batch needs at least two paths");
  const auto& grid = sol.grid();
  for (auto node : probe_nodes)
    if (node > grid.steps) throw Error(Errc::OutOfRange, "probe node beyond the grid");
  const ClosedLoopSimulator<double> sim(model, sol);
  const std::size_t n = model.dims.n;
  const std::size_t probes = probe_nodes.size();

  struct Slot {
    PathCosts costs;
    std::vector<VectorXd> xtil, xhat;
    std::optional<BrownianityAccumulator> brown;
  };
  std::vector<Slot> slots(n_paths);
  parallel_for(n_paths, threads, [&](std::size_t i) {
    const auto noise = draw_noise(seed, i, grid, model.dims);
    const auto b = sim.run(policy, noise);
    Slot& s = slots[i];
    s.costs = path_costs(sim, model, b);
    for (auto node : probe_nodes) {
      s.xtil.emplace_back(b.Xtil.col(static_cast<Eigen::Index>(node)));
      s.xhat.emplace_back(b.Xhat.col(static_cast<Eigen::Index>(node)));
    }
    s.brown.emplace(model.dims.d, grid);
    s.brown->add(b.Vcheck);
  });

  BatchReport r;
  r.n_paths = n_paths;
  r.steps = grid.steps;
  r.policy = policy.label.empty() ? std::string(to_string(policy.kind)) : policy.label;
  std::vector<double> cost(n_paths), hat(n_paths), til(n_paths), resid(n_paths);
  for (std::size_t i = 0; i < n_paths; ++i) {
    cost[i] = slots[i].costs.J;
    hat[i] = slots[i].costs.J_hat;
    til[i] = slots[i].costs.J_tilde;
    resid[i] = hat[i] + til[i] - cost[i];
  }
  const auto c = mean_se(cost);
  r.cost_mean = c.mean;
  r.cost_se = c.se;
  r.J_hat = mean_se(hat);
  r.J_tilde = mean_se(til);
  r.cross_residual = mean_se(resid);
  r.analytic_value = optimal_value(model.x0, sol, model).total;
  r.per_policy_costs[r.policy] = c;

  std::vector<double> buf(n_paths);
  for (std::size_t p = 0; p < probes; ++p) {
    ProbeStats ps;
    ps.node = probe_nodes[p];
    ps.t = grid.time(ps.node);
    ps.Sigma = sol.Sigma[ps.node];
    ps.emp_error_cov = MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    ps.cov_se = ps.emp_error_cov;
    for (Eigen::Index a = 0; a < static_cast<Eigen::Index>(n); ++a) {
      for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(n); ++b) {
        for (std::size_t i = 0; i < n_paths; ++i) buf[i] = slots[i].xtil[p](a) * slots[i].xtil[p](b);
        const auto e = mean_se(buf);
        ps.emp_error_cov(a, b) = e.mean;
        ps.cov_se(a, b) = e.se;
      }
    }
    for (std::size_t i = 0; i < n_paths; ++i) buf[i] = slots[i].xtil[p].dot(slots[i].xhat[p]);
    const auto o = mean_se(buf);
    ps.orth_mean = o.mean;
    ps.orth_se = o.se;
    r.probes.push_back(std::move(ps));
  }

  BrownianityAccumulator total(model.dims.d, grid);
  for (const auto& s : slots) total.merge(*s.brown);
  r.brownianity = total.finish();
  r.innovation_increment_mean.resize(static_cast<Eigen::Index>(model.dims.d));
  for (std::size_t j = 0; j < model.dims.d; ++j)
    r.innovation_increment_mean(static_cast<Eigen::Index>(j)) = r.brownianity.components[j].increment_mean.mean;
  r.innovation_qv_ratio = r.brownianity.qv_ratio;
  return r;
}

std::vector<PolicyCost> compare_policies(const ModelSpec<double>& model, const DeterministicSolution<double>& sol,
                                         const std::vector<ControlPolicy<double>>& policies, std::size_t n_paths,
                                         std::uint64_t seed, unsigned threads) {
  if (n_paths < 2) throw Error(Errc::InsufficientPaths, "a comparison needs at least two paths");
  const auto fb = std::find_if(policies.begin(), policies.end(),
                               [](const auto& p) { return p.kind == PolicyKind::FilterFeedback; });
  if (fb == policies.end())
    throw Error(Errc::ValidationFailure, "policy comparison must include the filter feedback law");
  const std::size_t fb_index = static_cast<std::size_t>(fb - policies.begin());
  const ClosedLoopSimulator<double> sim(model, sol);
  const auto& grid = sol.grid();
  std::vector<std::vector<double>> costs(policies.size(), std::vector<double>(n_paths));
  parallel_for(n_paths, threads, [&](std::size_t i) {
    const auto noise = draw_noise(seed, i, grid, model.dims);
    for (std::size_t p = 0; p < policies.size(); ++p) costs[p][i] = sim.run(policies[p], noise).cost;
  });
  std::vector<PolicyCost> out;
  std::vector<double> diff(n_paths);
  for (std::size_t p = 0; p < policies.size(); ++p) {
    PolicyCost pc;
    pc.label = policies[p].label.empty() ? std::string(to_string(policies[p].kind)) : policies[p].label;
    pc.cost = mean_se(costs[p]);
    for (std::size_t i = 0; i < n_paths; ++i) diff[i] = costs[p][i] - costs[fb_index][i];
    pc.excess_over_feedback = mean_se(diff);
    out.push_back(std::move(pc));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const PolicyCost& a, const PolicyCost& b) { return a.cost.mean < b.cost.mean; });
  return out;
}

std::vector<MatrixXd> discrete_error_covariance(const ModelSpec<double>& model,
                                                const DeterministicSolution<double>& sol, std::size_t refine) {
  if (refine < 1) throw Error(Errc::OutOfRange, "refinement factor must be >= 1");
  const TimeGrid<double> fine(sol.grid().T, sol.grid().steps * refine);
  const auto n = static_cast<Eigen::Index>(model.dims.n);
  const double h = fine.step();
  std::vector<MatrixXd> cov;
  cov.reserve(fine.nodes());
  cov.push_back(MatrixXd::Zero(n, n));
  for (std::size_t j = 0; j < fine.steps; ++j) {
    const double t = fine.time(j);
    const MatrixXd F = MatrixXd::Identity(n, n) + h * sol.curlyA.at(t);
    const MatrixXd Delta = sol.Delta.at(t);
    const MatrixXd D = sample(model.coeffs, t).D;
    cov.push_back(F * cov.back() * F.transpose() + h * (Delta * Delta.transpose() + D * D.transpose()));
  }
  return cov;
}

DecompositionRecord decomposition_check(const ModelSpec<double>& model, const DeterministicSolution<double>& sol,
                                        std::size_t n_paths, std::uint64_t seed, unsigned threads) {
  const auto report = run_batch(model, sol, ControlPolicy<double>::feedback(), n_paths, seed, {}, threads);
  DecompositionRecord rec;
  rec.J = {report.cost_mean, report.cost_se};
  rec.J_hat = report.J_hat;
  rec.J_tilde = report.J_tilde;
  rec.residual = report.cross_residual;
  rec.tilde_J_analytic = tilde_J(sol, model);
  rec.tilde_J_allowance = 2.0 * std::abs(discrete_tilde_J(model, sol, 1) - discrete_tilde_J(model, sol, 2));
  const double rounding = 1e-12 * (1.0 + std::abs(rec.J.mean));
  rec.residual_ok = std::abs(rec.residual.mean) <= 3.0 * rec.residual.se + rounding;
  rec.tilde_ok = std::abs(rec.J_tilde.mean - rec.tilde_J_analytic) <=
                 3.0 * rec.J_tilde.se + rec.tilde_J_allowance + rounding;
  return rec;
}

namespace {

StepHalvingStudy summarize_pairs(std::size_t steps, const std::vector<double>& coarse,
                                 const std::vector<double>& fine) {
  StepHalvingStudy s;
  s.steps = steps;
  s.coarse = mean_se(coarse);
  s.fine = mean_se(fine);
  std::vector<double> diff(coarse.size()), extra(coarse.size());
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    diff[i] = coarse[i] - fine[i];
    extra[i] = 2.0 * fine[i] - coarse[i];
  }
  s.difference = mean_se(diff);
  s.extrapolated = mean_se(extra);
  s.allowance = 2.0 * std::abs(s.difference.mean);
  return s;
}

void check_halving(const DeterministicSolution<double>& coarse, const DeterministicSolution<double>& fine) {
  if (fine.grid().steps != 2 * coarse.grid().steps || fine.grid().T != coarse.grid().T)
    throw Error(Errc::ShapeMismatch, "fine solution must use twice the coarse step count");
}

}  // namespace

StepHalvingStudy step_halving_cost(const ModelSpec<double>& model, const DeterministicSolution<double>& coarse_sol,
                                   const DeterministicSolution<double>& fine_sol,
                                   const ControlPolicy<double>& coarse_policy,
                                   const ControlPolicy<double>& fine_policy, std::size_t n_paths,
                                   std::uint64_t seed, unsigned threads) {
  if (n_paths < 2) throw Error(Errc::InsufficientPaths, "a study needs at least two paths");
  check_halving(coarse_sol, fine_sol);
  const ClosedLoopSimulator<double> coarse_sim(model, coarse_sol);
  const ClosedLoopSimulator<double> fine_sim(model, fine_sol);
  std::vector<double> coarse(n_paths), fine(n_paths);
  parallel_for(n_paths, threads, [&](std::size_t i) {
    const auto noise = draw_noise(seed, i, fine_sol.grid(), model.dims);
    fine[i] = fine_sim.run(fine_policy, noise).cost;
    coarse[i] = coarse_sim.run(coarse_policy, coarsen(noise, 2)).cost;
  });
  return summarize_pairs(coarse_sol.grid().steps, coarse, fine);
}

StepHalvingStudy step_halving_excess(const ModelSpec<double>& model, const DeterministicSolution<double>& coarse_sol,
                                     const DeterministicSolution<double>& fine_sol,
                                     const ControlPolicy<double>& coarse_perturbed,
                                     const ControlPolicy<double>& fine_perturbed, std::size_t n_paths,
                                     std::uint64_t seed, unsigned threads) {
  if (n_paths < 2) throw Error(Errc::InsufficientPaths, "a study needs at least two paths");
  check_halving(coarse_sol, fine_sol);
  const ClosedLoopSimulator<double> coarse_sim(model, coarse_sol);
  const ClosedLoopSimulator<double> fine_sim(model, fine_sol);
  const auto fb = ControlPolicy<double>::feedback();
  std::vector<double> coarse(n_paths), fine(n_paths);
  parallel_for(n_paths, threads, [&](std::size_t i) {
    const auto noise = draw_noise(seed, i, fine_sol.grid(), model.dims);
    const auto coarse_noise = coarsen(noise, 2);
    fine[i] = fine_sim.run(fine_perturbed, noise).cost - fine_sim.run(fb, noise).cost;
    coarse[i] = coarse_sim.run(coarse_perturbed, coarse_noise).cost - coarse_sim.run(fb, coarse_noise).cost;
  });
  return summarize_pairs(coarse_sol.grid().steps, coarse, fine);
}

double expected_discrete_cost(const ModelSpec<double>& model, const DeterministicSolution<double>& sol,
                              const ControlPolicy<double>& policy) {
  const ClosedLoopSimulator<double> sim(model, sol);
  const auto& grid = sim.grid();
  if (policy.kind == PolicyKind::OpenLoop || policy.kind == PolicyKind::PerturbedFeedback) {
    if (policy.table.rows() != static_cast<Eigen::Index>(model.dims.m) ||
        policy.table.cols() != static_cast<Eigen::Index>(grid.nodes()))
      throw Error(Errc::ShapeMismatch, "policy table must be m x nodes");
  }
  const auto n = static_cast<Eigen::Index>(model.dims.n);
  const auto m = static_cast<Eigen::Index>(model.dims.m);
  const double h = grid.step();
  const bool feedback = policy.kind == PolicyKind::FilterFeedback || policy.kind == PolicyKind::PerturbedFeedback;

  // z = (X, Xhat); u = F z + f.
  VectorXd mu(2 * n);
  mu << model.x0, model.x0;
  MatrixXd cov = MatrixXd::Zero(2 * n, 2 * n);
  double running = 0;
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    const auto& s = sim.step_data(i);
    const auto col = static_cast<Eigen::Index>(i);
    MatrixXd F = MatrixXd::Zero(m, 2 * n);
    VectorXd f = VectorXd::Zero(m);
    if (feedback) {
      F.rightCols(n) = s.Theta;
      f = s.offset;
    }
    if (policy.kind == PolicyKind::OpenLoop || policy.kind == PolicyKind::PerturbedFeedback) f += policy.table.col(col);
    if (i == grid.steps) break;

    const MatrixXd second = cov + mu * mu.transpose();
    const MatrixXd Xx = second.topLeftCorner(n, n);
    const MatrixXd Xu = second.topRows(n) * F.transpose();
    const MatrixXd Uu = F * second * F.transpose();
    const VectorXd mx = mu.head(n);
    const VectorXd mu_u = F * mu + f;
    const auto& w = s.cost;
    running += (w.Q * Xx).trace() + 2.0 * ((w.S * Xu).trace() + (w.S * mx).dot(f)) +
               (w.R * Uu).trace() + 2.0 * f.dot(w.R * (F * mu)) + f.dot(w.R * f) + 2.0 * w.q.dot(mx) +
               2.0 * w.r.dot(mu_u);

    const MatrixXd LH = s.gain * s.H;
    MatrixXd M = MatrixXd::Identity(2 * n, 2 * n);
    M.topLeftCorner(n, n) += h * s.A;
    M.bottomLeftCorner(n, n) += h * LH;
    M.bottomRightCorner(n, n) += h * (s.A - LH);
    M.topRows(n) += h * s.B * F;
    M.bottomRows(n) += h * s.B * F;
    VectorXd c(2 * n);
    c.head(n) = h * (s.B * f + s.a);
    c.tail(n) = c.head(n);
    const auto d = s.C.cols();
    const auto k = s.D.cols();
    MatrixXd Gn = MatrixXd::Zero(2 * n, d + k);
    Gn.topLeftCorner(n, d) = s.C;
    Gn.topRightCorner(n, k) = s.D;
    Gn.bottomLeftCorner(n, d) = s.gain * s.K;
    mu = M * mu + c;
    cov = M * cov * M.transpose() + h * Gn * Gn.transpose();
  }
  const MatrixXd XT = cov.topLeftCorner(n, n) + mu.head(n) * mu.head(n).transpose();
  return running * h + (model.cost.G * XT).trace() + 2.0 * model.cost.g.dot(mu.head(n));
}

bool VerificationResult::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckRow& c) { return c.passed; });
}

std::vector<std::string> VerificationResult::failures() const {
  std::vector<std::string> out;
  for (const auto& c : checks)
    if (!c.passed) out.push_back(c.name);
  return out;
}

DeterministicSolution<double> with_scaled_sigma(const ModelSpec<double>& model,
                                                const DeterministicSolution<double>& sol, double scale) {
  DeterministicSolution<double> out = sol;
  for (auto& s : out.Sigma.values) s *= scale;
  out.Delta = compute_Delta(out.Sigma, model);
  out.curlyA = compute_curlyA(model, out.Sigma);
  out.Pi = solve_Pi(model, out.curlyA, out.grid(), 1e300);
  out.pi_vec = solve_pi(model, out.curlyA, out.grid());
  return out;
}

namespace {

CheckRow within(std::string name, double estimate, double se, double target, double band) {
  return {std::move(name), estimate, se, target, band, std::abs(estimate - target) <= band};
}

}  // namespace

VerificationResult run_verification(const ModelSpec<double>& model, const TimeGrid<double>& grid,
                                    const VerificationConfig& config) {
  auto sol = solve_all(model, grid, config.psd_rel);
  auto fine_sol = solve_all(model, TimeGrid<double>(grid.T, grid.steps * 2), config.psd_rel);
  if (config.debug_sigma_scale != 1.0) {
    sol = with_scaled_sigma(model, sol, config.debug_sigma_scale);
    fine_sol = with_scaled_sigma(model, fine_sol, config.debug_sigma_scale);
  }
  std::vector<double> times = config.probe_times;
  if (times.empty()) times = {grid.T / 4, grid.T / 2, 3 * grid.T / 4, grid.T};
  std::vector<std::size_t> probes;
  for (double t : times) {
    if (t < 0 || t > grid.T) throw Error(Errc::OutOfRange, "probe time outside [0, T]");
    probes.push_back(grid.nearest(t));
  }

  VerificationResult res;
  const auto fb = ControlPolicy<double>::feedback();
  res.report = run_batch(model, sol, fb, config.n_paths, config.seed, probes, config.threads);
  const auto& rep = res.report;
  const double rounding = 1e-12 * (1.0 + std::abs(rep.analytic_value));

  // Optimal value. The Euler allowance is measured by a coupled run at h/2;
  // the exact discrete expectation bounds it from below and closes the
  // extrapolation remainder.
  res.value_study = step_halving_cost(model, sol, fine_sol, fb, fb, config.n_paths, config.seed, config.threads);
  const double exact_h = expected_discrete_cost(model, sol, fb);
  const double exact_h2 = expected_discrete_cost(model, fine_sol, fb);
  const double value_allowance = std::max(res.value_study.allowance, std::abs(exact_h - rep.analytic_value));
  res.checks.push_back(within("discrete_expectation", rep.cost_mean, rep.cost_se, exact_h,
                              3.0 * rep.cost_se + 1e-12 * (1.0 + std::abs(exact_h))));
  res.checks.push_back(within("optimal_value", rep.cost_mean, rep.cost_se, rep.analytic_value,
                              3.0 * rep.cost_se + value_allowance + rounding));
  res.checks.push_back(within("optimal_value_extrapolated", res.value_study.extrapolated.mean,
                              res.value_study.extrapolated.se, rep.analytic_value,
                              3.0 * res.value_study.extrapolated.se +
                                  std::abs(2.0 * exact_h2 - exact_h - rep.analytic_value) + rounding));

  // Error covariance and orthogonality at the probe nodes.
  const auto cov_h = discrete_error_covariance(model, sol, 1);
  const auto cov_h2 = discrete_error_covariance(model, sol, 2);
  for (const auto& p : rep.probes) {
    const std::string at = "[t=" + fmt_time(p.t) + "]";
    for (Eigen::Index a = 0; a < p.Sigma.rows(); ++a)
      for (Eigen::Index b = 0; b < p.Sigma.cols(); ++b) {
        const double allowance = 2.0 * std::abs(cov_h[p.node](a, b) - cov_h2[2 * p.node](a, b));
        res.checks.push_back(within("error_cov" + at + "(" + std::to_string(a) + "," + std::to_string(b) + ")",
                                    p.emp_error_cov(a, b), p.cov_se(a, b), p.Sigma(a, b),
                                    3.0 * p.cov_se(a, b) + allowance + 1e-12));
      }
    res.checks.push_back(within("orthogonality" + at, p.orth_mean, p.orth_se, 0.0, 3.0 * p.orth_se + 1e-12));
  }

  // Normalized innovation.
  const auto& br = rep.brownianity;
  const double lag_band = 3.0 / std::sqrt(static_cast<double>(br.n_paths * br.steps));
  for (std::size_t j = 0; j < br.components.size(); ++j) {
    const auto& c = br.components[j];
    const std::string idx = "[" + std::to_string(j) + "]";
    res.checks.push_back(within("innovation_terminal_var" + idx, c.terminal_var.mean, c.terminal_var.se, br.T,
                                3.0 * c.terminal_var.se + 1e-12));
    res.checks.push_back(within("innovation_lag1_autocorr" + idx, c.lag1_autocorr.mean, c.lag1_autocorr.se, 0.0,
                                lag_band));
    res.checks.push_back(within("innovation_increment_mean" + idx, c.increment_mean.mean, c.increment_mean.se, 0.0,
                                3.0 * c.increment_mean.se + 1e-15));
  }

  // Strict suboptimality of a constant perturbation and of zero control.
  const auto m = static_cast<Eigen::Index>(model.dims.m);
  const VectorXd eps = VectorXd::Constant(m, config.perturbation);
  const auto pert = ControlPolicy<double>::perturbed_constant(eps, grid.nodes());
  const auto pert_fine = ControlPolicy<double>::perturbed_constant(eps, fine_sol.grid().nodes());
  std::vector<double> reps(grid.nodes());
  for (std::size_t i = 0; i < grid.nodes(); ++i) reps[i] = eps.dot(sample(model.cost, grid.time(i)).R * eps);
  const double predicted_excess = trapezoid(reps, grid);
  res.perturbation_study =
      step_halving_excess(model, sol, fine_sol, pert, pert_fine, config.n_paths, config.seed, config.threads);
  const auto& ps = res.perturbation_study;
  const double exact_excess = expected_discrete_cost(model, sol, pert) - exact_h;
  res.checks.push_back(within("perturbation_excess", ps.coarse.mean, ps.coarse.se, predicted_excess,
                              3.0 * ps.coarse.se + std::max(ps.allowance, std::abs(exact_excess - predicted_excess)) +
                                  1e-12 * (1.0 + predicted_excess)));

  res.policies = compare_policies(model, sol, {fb, ControlPolicy<double>::zero(), pert}, config.n_paths,
                                  config.seed, config.threads);
  auto find = [&](const std::string& label) {
    return *std::find_if(res.policies.begin(), res.policies.end(),
                         [&](const PolicyCost& p) { return p.label == label; });
  };
  const auto fb_cost = find("filter_feedback");
  const auto zero_cost = find("zero_control");
  const auto pert_cost = find("perturbed_feedback");
  {
    const double gap = zero_cost.cost.mean - fb_cost.cost.mean;
    const double threshold = 2.0 * combined_se(zero_cost.cost.se, fb_cost.cost.se);
    res.checks.push_back({"zero_control_gap", gap, combined_se(zero_cost.cost.se, fb_cost.cost.se), threshold, 0.0,
                          gap > threshold});
    const auto& ex = pert_cost.excess_over_feedback;
    res.checks.push_back({"perturbed_paired_excess", ex.mean, ex.se, 2.0 * ex.se, 0.0, ex.mean > 2.0 * ex.se});
  }

  // Cost decomposition J = J_hat + J_tilde.
  auto& dec = res.decomposition;
  dec.J = {rep.cost_mean, rep.cost_se};
  dec.J_hat = rep.J_hat;
  dec.J_tilde = rep.J_tilde;
  dec.residual = rep.cross_residual;
  dec.tilde_J_analytic = tilde_J(sol, model);
  dec.tilde_J_allowance = 2.0 * std::abs(discrete_tilde_J(model, sol, 1) - discrete_tilde_J(model, sol, 2));
  dec.residual_ok = std::abs(dec.residual.mean) <= 3.0 * dec.residual.se + rounding;
  dec.tilde_ok = std::abs(dec.J_tilde.mean - dec.tilde_J_analytic) <=
                 3.0 * dec.J_tilde.se + dec.tilde_J_allowance + rounding;
  res.checks.push_back({"decomposition_residual", dec.residual.mean, dec.residual.se, 0.0,
                        3.0 * dec.residual.se + rounding, dec.residual_ok});
  res.checks.push_back({"tilde_J", dec.J_tilde.mean, dec.J_tilde.se, dec.tilde_J_analytic,
                        3.0 * dec.J_tilde.se + dec.tilde_J_allowance + rounding, dec.tilde_ok});
  return res;
}

}  // namespace polq
