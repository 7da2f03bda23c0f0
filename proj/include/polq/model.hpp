// Problem data: dynamics/observation coefficients, quadratic cost weights,
// standing-assumption validation and time sampling of node tables.
#pragma once

#include "polq/core.hpp"

#include <algorithm>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

namespace polq {

struct Dimensions {
  std::size_t n{1};  // state
  std::size_t m{1};  // control
  std::size_t d{1};  // observation and W
  std::size_t k{1};  // W'

  friend bool operator==(const Dimensions&, const Dimensions&) = default;
};

template <typename Scalar = double>
struct CoefficientSample {
  Mat<Scalar> A, B;
  Vec<Scalar> a;
  Mat<Scalar> C, D, H;
  Vec<Scalar> h;
  Mat<Scalar> K;
};

/// Dynamics and observation coefficients sampled at the nodes of `grid`.
template <typename Scalar = double>
struct CoefficientTable {
  TimeGrid<Scalar> grid;
  std::vector<Mat<Scalar>> A, B;
  std::vector<Vec<Scalar>> a;
  std::vector<Mat<Scalar>> C, D, H;
  std::vector<Vec<Scalar>> h;
  std::vector<Mat<Scalar>> K;

  /// Table on a one-interval grid with the same sample at both ends.
  static CoefficientTable constant(Scalar T, const CoefficientSample<Scalar>& s) {
    CoefficientTable table;
    table.grid = TimeGrid<Scalar>(T, 1);
    table.A = {s.A, s.A};
    table.B = {s.B, s.B};
    table.a = {s.a, s.a};
    table.C = {s.C, s.C};
    table.D = {s.D, s.D};
    table.H = {s.H, s.H};
    table.h = {s.h, s.h};
    table.K = {s.K, s.K};
    return table;
  }

  CoefficientSample<Scalar> at_node(std::size_t i) const {
    return {A[i], B[i], a[i], C[i], D[i], H[i], h[i], K[i]};
  }
};

/// All eight coefficients at time t; exact at table nodes.
template <typename Scalar>
CoefficientSample<Scalar> sample(const CoefficientTable<Scalar>& coeffs, Scalar t) {
  if (t < Scalar(0) || t > coeffs.grid.T)
    throw Error(Errc::OutOfRange, "sample time outside [0, T]");
  const auto& g = coeffs.grid;
  const Scalar h = g.step();
  using std::floor;
  auto j = std::min(static_cast<std::size_t>(floor(t / h)), g.steps - 1);
  if (t == g.T) return coeffs.at_node(g.steps);
  if (t == g.time(j)) return coeffs.at_node(j);
  if (t == g.time(j + 1)) return coeffs.at_node(j + 1);
  const Scalar w = (t - g.time(j)) / (g.time(j + 1) - g.time(j));
  // Written as a correction to the left node so equal neighbours stay exact.
  auto lerp = [&](const auto& seq) {
    using T = std::decay_t<decltype(seq[j])>;
    return T(seq[j] + w * (seq[j + 1] - seq[j]));
  };
  return {lerp(coeffs.A), lerp(coeffs.B), lerp(coeffs.a), lerp(coeffs.C),
          lerp(coeffs.D), lerp(coeffs.H), lerp(coeffs.h), lerp(coeffs.K)};
}

template <typename Scalar = double>
struct CostSample {
  Mat<Scalar> Q, S, R;
  Vec<Scalar> q, r;
};

/// Quadratic cost weights. Q, S, R, q, r live on their own node grid.
template <typename Scalar = double>
struct CostWeights {
  Mat<Scalar> G;
  Vec<Scalar> g;
  TimeGrid<Scalar> grid;
  std::vector<Mat<Scalar>> Q, S, R;
  std::vector<Vec<Scalar>> q, r;
  Scalar delta{Scalar(1e-6)};

  static CostWeights constant(Scalar T, Mat<Scalar> G, Vec<Scalar> g, const CostSample<Scalar>& s,
                              Scalar delta = Scalar(1e-6)) {
    CostWeights w;
    w.G = std::move(G);
    w.g = std::move(g);
    w.grid = TimeGrid<Scalar>(T, 1);
    w.Q = {s.Q, s.Q};
    w.S = {s.S, s.S};
    w.R = {s.R, s.R};
    w.q = {s.q, s.q};
    w.r = {s.r, s.r};
    w.delta = delta;
    return w;
  }

  CostSample<Scalar> at_node(std::size_t i) const { return {Q[i], S[i], R[i], q[i], r[i]}; }
};

template <typename Scalar>
CostSample<Scalar> sample(const CostWeights<Scalar>& cost, Scalar t) {
  if (t < Scalar(0) || t > cost.grid.T) throw Error(Errc::OutOfRange, "sample time outside [0, T]");
  const auto& g = cost.grid;
  using std::floor;
  auto j = std::min(static_cast<std::size_t>(floor(t / g.step())), g.steps - 1);
  if (t == g.T) return cost.at_node(g.steps);
  if (t == g.time(j)) return cost.at_node(j);
  if (t == g.time(j + 1)) return cost.at_node(j + 1);
  const Scalar w = (t - g.time(j)) / (g.time(j + 1) - g.time(j));
  auto lerp = [&](const auto& seq) {
    using T = std::decay_t<decltype(seq[j])>;
    return T(seq[j] + w * (seq[j + 1] - seq[j]));
  };
  return {lerp(cost.Q), lerp(cost.S), lerp(cost.R), lerp(cost.q), lerp(cost.r)};
}

template <typename Scalar = double>
struct ModelSpec {
  Dimensions dims;
  Scalar T{1};
  CoefficientTable<Scalar> coeffs;
  CostWeights<Scalar> cost;
  Vec<Scalar> x0;
};

struct ToleranceConfig {
  double psd_rel{1e-9};  // PSD floor is -psd_rel * (1 + ||M||_F)
  double sym_tol{1e-12};
  double cond_K_max{1e8};

  friend bool operator==(const ToleranceConfig&, const ToleranceConfig&) = default;
};

struct CheckResult {
  std::string name;
  bool passed{true};
  std::optional<std::size_t> worst_node;
  double margin{std::numeric_limits<double>::infinity()};  // negative when violated
};

struct ValidationReport {
  std::vector<CheckResult> checks;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
  }
  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    for (const auto& c : checks)
      if (!c.passed) out.push_back(c.name);
    return out;
  }
  std::string summary() const {
    std::string s;
    for (const auto& c : checks) {
      if (c.passed) continue;
      if (!s.empty()) s += "; ";
      s += c.name;
      if (c.worst_node) s += " (node " + std::to_string(*c.worst_node) + ")";
      s += " margin " + std::to_string(c.margin);
    }
    return s.empty() ? "all checks passed" : s;
  }
};

namespace detail {

template <typename Scalar>
void expect_shape(const Mat<Scalar>& m, std::size_t rows, std::size_t cols, const std::string& what) {
  if (static_cast<std::size_t>(m.rows()) != rows || static_cast<std::size_t>(m.cols()) != cols)
    throw Error(Errc::ShapeMismatch, what + " is " + std::to_string(m.rows()) + "x" +
                                         std::to_string(m.cols()) + ", expected " +
                                         std::to_string(rows) + "x" + std::to_string(cols));
}

template <typename Scalar>
void expect_len(const Vec<Scalar>& v, std::size_t len, const std::string& what) {
  if (static_cast<std::size_t>(v.size()) != len)
    throw Error(Errc::ShapeMismatch, what + " has length " + std::to_string(v.size()) + ", expected " +
                                         std::to_string(len));
}

template <typename Seq>
void expect_count(const Seq& seq, std::size_t count, const std::string& what) {
  if (seq.size() != count)
    throw Error(Errc::ShapeMismatch, what + " has " + std::to_string(seq.size()) + " samples, expected " +
                                         std::to_string(count));
}

// Tracks the worst (smallest) margin over nodes for one named check.
struct MarginTracker {
  CheckResult result;
  explicit MarginTracker(std::string name) { result.name = std::move(name); }
  void observe(double margin, std::optional<std::size_t> node) {
    if (std::isnan(margin)) margin = -std::numeric_limits<double>::infinity();
    if (margin < result.margin) {
      result.margin = margin;
      result.worst_node = node;
    }
  }
  CheckResult finish(bool pass_at_zero = true) {
    result.passed = pass_at_zero ? result.margin >= 0.0 : result.margin > 0.0;
    return result;
  }
};

}  // namespace detail

/// Throws ShapeMismatch or EmptyGrid when the model is not internally consistent.
template <typename Scalar>
void check_shapes(const ModelSpec<Scalar>& model) {
  using detail::expect_count;
  using detail::expect_len;
  using detail::expect_shape;
  const auto [n, m, d, k] = model.dims;
  if (n < 1 || m < 1 || d < 1 || k < 1) throw Error(Errc::ShapeMismatch, "all dimensions must be >= 1");
  const auto& c = model.coeffs;
  const auto& w = model.cost;
  if (c.grid.steps < 1 || w.grid.steps < 1) throw Error(Errc::EmptyGrid, "coefficient grid has no steps");
  if (c.grid.T != model.T || w.grid.T != model.T)
    throw Error(Errc::ShapeMismatch, "coefficient grids must span exactly [0, T]");
  const std::size_t nc = c.grid.nodes();
  expect_count(c.A, nc, "A");
  expect_count(c.B, nc, "B");
  expect_count(c.a, nc, "a");
  expect_count(c.C, nc, "C");
  expect_count(c.D, nc, "D");
  expect_count(c.H, nc, "H");
  expect_count(c.h, nc, "h");
  expect_count(c.K, nc, "K");
  for (std::size_t i = 0; i < nc; ++i) {
    expect_shape(c.A[i], n, n, "A");
    expect_shape(c.B[i], n, m, "B");
    expect_len(c.a[i], n, "a");
    expect_shape(c.C[i], n, d, "C");
    expect_shape(c.D[i], n, k, "D");
    expect_shape(c.H[i], d, n, "H");
    expect_len(c.h[i], d, "h");
    expect_shape(c.K[i], d, d, "K");
  }
  const std::size_t nw = w.grid.nodes();
  expect_count(w.Q, nw, "Q");
  expect_count(w.S, nw, "S");
  expect_count(w.R, nw, "R");
  expect_count(w.q, nw, "q");
  expect_count(w.r, nw, "r");
  expect_shape(w.G, n, n, "G");
  expect_len(w.g, n, "g");
  for (std::size_t i = 0; i < nw; ++i) {
    expect_shape(w.Q[i], n, n, "Q");
    expect_shape(w.S[i], m, n, "S");
    expect_shape(w.R[i], m, m, "R");
    expect_len(w.q[i], n, "q");
    expect_len(w.r[i], m, "r");
  }
  expect_len(model.x0, n, "x0");
}

/// Checks boundedness (A1), invertibility of K (A2) and the cost conditions
/// (A3) node by node. Shape problems throw instead of being reported.
template <typename Scalar>
ValidationReport validate(const ModelSpec<Scalar>& model, const ToleranceConfig& tol = {}) {
  check_shapes(model);
  using detail::MarginTracker;
  const auto& c = model.coeffs;
  const auto& w = model.cost;
  const auto psd_floor = [&](const Mat<Scalar>& m) {
    return tol.psd_rel * (1.0 + static_cast<double>(m.norm()));
  };
  ValidationReport report;

  MarginTracker finite_coeffs("A1: coefficients finite");
  for (std::size_t i = 0; i < c.grid.nodes(); ++i) {
    const bool ok = c.A[i].allFinite() && c.B[i].allFinite() && c.a[i].allFinite() &&
                    c.C[i].allFinite() && c.D[i].allFinite() && c.H[i].allFinite() &&
                    c.h[i].allFinite() && c.K[i].allFinite();
    finite_coeffs.observe(ok ? 0.0 : -1.0, i);
  }
  report.checks.push_back(finite_coeffs.finish());

  MarginTracker finite_cost("A1: cost weights finite");
  finite_cost.observe(w.G.allFinite() && w.g.allFinite() ? 0.0 : -1.0, std::nullopt);
  for (std::size_t i = 0; i < w.grid.nodes(); ++i) {
    const bool ok = w.Q[i].allFinite() && w.S[i].allFinite() && w.R[i].allFinite() &&
                    w.q[i].allFinite() && w.r[i].allFinite();
    finite_cost.observe(ok ? 0.0 : -1.0, i);
  }
  report.checks.push_back(finite_cost.finish());

  // Margin is log10(cond_max) - log10(cond(K)); singular K gives -inf.
  MarginTracker k_invertible("A2: K invertible");
  for (std::size_t i = 0; i < c.grid.nodes(); ++i) {
    const auto& K = c.K[i];
    double margin = -std::numeric_limits<double>::infinity();
    if (K.allFinite()) {
      Eigen::JacobiSVD<Mat<Scalar>> svd(K);
      const auto& sv = svd.singularValues();
      const double smax = static_cast<double>(sv.maxCoeff());
      const double smin = static_cast<double>(sv.minCoeff());
      if (smin > 0.0) margin = std::log10(tol.cond_K_max) - std::log10(smax / smin);
    }
    k_invertible.observe(margin, i);
  }
  report.checks.push_back(k_invertible.finish());

  MarginTracker delta_positive("A3: delta positive");
  delta_positive.observe(static_cast<double>(w.delta), std::nullopt);
  report.checks.push_back(delta_positive.finish(false));

  MarginTracker sym_G("A3: symmetry of G");
  sym_G.observe(tol.sym_tol - static_cast<double>((w.G - w.G.transpose()).cwiseAbs().maxCoeff()),
                std::nullopt);
  report.checks.push_back(sym_G.finish());

  MarginTracker psd_G("A3: G positive semidefinite");
  if (w.G.allFinite())
    psd_G.observe(static_cast<double>(min_eigenvalue(w.G)) + psd_floor(w.G), std::nullopt);
  else
    psd_G.observe(-1.0, std::nullopt);
  report.checks.push_back(psd_G.finish());

  MarginTracker sym_Q("A3: symmetry of Q");
  MarginTracker sym_R("A3: symmetry of R");
  MarginTracker r_bound("A3: R >= delta I");
  MarginTracker schur("A3: Q - S^T R^-1 S positive semidefinite");
  for (std::size_t i = 0; i < w.grid.nodes(); ++i) {
    const auto& Q = w.Q[i];
    const auto& S = w.S[i];
    const auto& R = w.R[i];
    if (!(Q.allFinite() && S.allFinite() && R.allFinite())) {
      for (auto* t : {&sym_Q, &sym_R, &r_bound, &schur}) t->observe(-1.0, i);
      continue;
    }
    sym_Q.observe(tol.sym_tol - static_cast<double>((Q - Q.transpose()).cwiseAbs().maxCoeff()), i);
    sym_R.observe(tol.sym_tol - static_cast<double>((R - R.transpose()).cwiseAbs().maxCoeff()), i);
    const double r_min = static_cast<double>(min_eigenvalue(R));
    r_bound.observe(r_min - static_cast<double>(w.delta), i);
    Eigen::LDLT<Mat<Scalar>> ldlt(symmetrized(R));
    if (r_min <= 0.0 || ldlt.info() != Eigen::Success) {
      schur.observe(-std::numeric_limits<double>::infinity(), i);
      continue;
    }
    const Mat<Scalar> complement = Q - S.transpose() * ldlt.solve(S);
    schur.observe(static_cast<double>(min_eigenvalue(complement)) + psd_floor(complement), i);
  }
  report.checks.push_back(sym_Q.finish());
  report.checks.push_back(sym_R.finish());
  report.checks.push_back(r_bound.finish());
  report.checks.push_back(schur.finish());
  return report;
}

}  // namespace polq
