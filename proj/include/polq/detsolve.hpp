// Deterministic part of the solution: the control Riccati equation and its
// affine companion, the filter covariance, and the estimation-error
// Lyapunov/affine equations, all on one shared grid.
#pragma once

#include "polq/core.hpp"
#include "polq/model.hpp"

#include <array>
#include <vector>

namespace polq {

enum class Direction { Forward, Backward };

namespace detail {

// Window of four nodes around the interval containing t, and Lagrange weights.
template <typename Scalar>
struct CubicStencil {
  std::size_t first{0};
  std::size_t count{0};
  std::array<Scalar, 4> w{};
};

template <typename Scalar>
CubicStencil<Scalar> cubic_stencil(const TimeGrid<Scalar>& grid, Scalar t) {
  CubicStencil<Scalar> st;
  const Scalar h = grid.step();
  using std::floor;
  auto j = std::min(static_cast<std::size_t>(floor(t / h)), grid.steps - 1);
  if (grid.nodes() < 4) {
    st.first = j;
    st.count = 2;
    const Scalar s = (t - grid.time(j)) / h;
    st.w = {Scalar(1) - s, s, Scalar(0), Scalar(0)};
    return st;
  }
  std::size_t first = j == 0 ? 0 : j - 1;
  if (first + 3 > grid.steps) first = grid.steps - 3;
  st.first = first;
  st.count = 4;
  const Scalar s = (t - grid.time(first)) / h;  // node offsets 0,1,2,3
  st.w[0] = -(s - 1) * (s - 2) * (s - 3) / Scalar(6);
  st.w[1] = s * (s - 2) * (s - 3) / Scalar(2);
  st.w[2] = -s * (s - 1) * (s - 3) / Scalar(2);
  st.w[3] = s * (s - 1) * (s - 2) / Scalar(6);
  return st;
}

}  // namespace detail

/// One p x q matrix per grid node.
template <typename Scalar = double>
struct MatrixPath {
  TimeGrid<Scalar> grid;
  std::vector<Mat<Scalar>> values;

  const Mat<Scalar>& operator[](std::size_t i) const { return values[i]; }
  Mat<Scalar>& operator[](std::size_t i) { return values[i]; }

  /// Value at an arbitrary time: the stored node value at nodes, cubic
  /// Lagrange interpolation on the four surrounding nodes otherwise.
  Mat<Scalar> at(Scalar t) const {
    if (t < Scalar(0) || t > grid.T) throw Error(Errc::OutOfRange, "path time outside [0, T]");
    const std::size_t near = grid.nearest(t);
    if (grid.time(near) == t) return values[near];
    const auto st = detail::cubic_stencil(grid, t);
    Mat<Scalar> out = st.w[0] * values[st.first];
    for (std::size_t i = 1; i < st.count; ++i) out += st.w[i] * values[st.first + i];
    return out;
  }
};

/// One p-vector per grid node.
template <typename Scalar = double>
struct VectorPath {
  TimeGrid<Scalar> grid;
  std::vector<Vec<Scalar>> values;

  const Vec<Scalar>& operator[](std::size_t i) const { return values[i]; }
  Vec<Scalar>& operator[](std::size_t i) { return values[i]; }

  Vec<Scalar> at(Scalar t) const {
    if (t < Scalar(0) || t > grid.T) throw Error(Errc::OutOfRange, "path time outside [0, T]");
    const std::size_t near = grid.nearest(t);
    if (grid.time(near) == t) return values[near];
    const auto st = detail::cubic_stencil(grid, t);
    Vec<Scalar> out = st.w[0] * values[st.first];
    for (std::size_t i = 1; i < st.count; ++i) out += st.w[i] * values[st.first + i];
    return out;
  }
};

template <typename Scalar = double>
struct DeterministicSolution {
  MatrixPath<Scalar> P;       // n x n, control Riccati
  MatrixPath<Scalar> Theta;   // m x n, feedback gain
  VectorPath<Scalar> phi;     // n, affine term of the control problem
  MatrixPath<Scalar> Sigma;   // n x n, filter error covariance
  MatrixPath<Scalar> Delta;   // n x d, Sigma (K^-1 H)^T
  MatrixPath<Scalar> curlyA;  // n x n, error dynamics matrix
  MatrixPath<Scalar> Pi;      // n x n, error-cost Lyapunov solution
  VectorPath<Scalar> pi_vec;  // n, error-cost affine term

  const TimeGrid<Scalar>& grid() const { return P.grid; }
};

struct NoStepHook {
  template <typename M>
  void operator()(M&) const {}
};

struct Symmetrize {
  template <typename M>
  void operator()(M& m) const {
    m = (m + m.transpose()).eval() * typename M::Scalar(0.5);
  }
};

/// Classical fixed-step RK4 on `grid`. The boundary value is stored exactly
/// at its endpoint (node 0 forward, node `steps` backward). `hook` runs on
/// every newly computed node value.
template <typename Scalar, typename Rhs, typename Hook = NoStepHook>
MatrixPath<Scalar> integrate_matrix_ode(Rhs&& rhs, const Mat<Scalar>& boundary, const TimeGrid<Scalar>& grid,
                                        Direction direction, Hook&& hook = {}) {
  if (grid.steps < 1) throw Error(Errc::EmptyGrid, "integration grid has no steps");
  if (!boundary.allFinite()) throw Error(Errc::NonFinite, "boundary value is not finite");
  MatrixPath<Scalar> path;
  path.grid = grid;
  path.values.resize(grid.nodes());
  const bool forward = direction == Direction::Forward;
  const std::size_t start = forward ? 0 : grid.steps;
  path.values[start] = boundary;
  const Scalar h = grid.step();
  const Scalar half = h / Scalar(2);
  for (std::size_t s = 0; s < grid.steps; ++s) {
    const std::size_t from = forward ? s : grid.steps - s;
    const std::size_t to = forward ? s + 1 : grid.steps - s - 1;
    const Scalar t0 = grid.time(from);
    const Scalar t1 = grid.time(to);
    const Scalar tm = forward ? t0 + half : t0 - half;
    const Scalar dt = forward ? h : -h;
    const Mat<Scalar>& y = path.values[from];
    const Mat<Scalar> k1 = rhs(t0, y);
    const Mat<Scalar> k2 = rhs(tm, Mat<Scalar>(y + (dt / 2) * k1));
    const Mat<Scalar> k3 = rhs(tm, Mat<Scalar>(y + (dt / 2) * k2));
    const Mat<Scalar> k4 = rhs(t1, Mat<Scalar>(y + dt * k3));
    Mat<Scalar> next = y + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
    hook(next);
    if (!next.allFinite()) throw Error(Errc::NonFinite, "ODE solution blew up at node " + std::to_string(to), to);
    path.values[to] = std::move(next);
  }
  return path;
}

namespace detail {

template <typename Scalar>
void require_grid(const TimeGrid<Scalar>& expected, const TimeGrid<Scalar>& actual, const char* what) {
  if (!(expected == actual)) throw Error(Errc::ShapeMismatch, std::string(what) + " is on a different grid");
}

template <typename Scalar>
void require_psd(const MatrixPath<Scalar>& path, double psd_rel, const char* what) {
  for (std::size_t i = 0; i < path.values.size(); ++i) {
    const auto& m = path.values[i];
    const double floor = -psd_rel * (1.0 + static_cast<double>(m.norm()));
    if (static_cast<double>(min_eigenvalue(m)) < floor)
      throw Error(Errc::PSDViolation, std::string(what) + " lost positive semidefiniteness at node " +
                                          std::to_string(i) + " (grid too coarse?)", i);
  }
}

template <typename Scalar>
Mat<Scalar> solve_spd(const Mat<Scalar>& R, const Mat<Scalar>& rhs, Errc failure, const char* what) {
  Eigen::LDLT<Mat<Scalar>> ldlt(R);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() <= Scalar(0))
    throw Error(failure, std::string(what) + " is not positive definite");
  return ldlt.solve(rhs);
}

template <typename Scalar>
Mat<Scalar> solve_general(const Mat<Scalar>& K, const Mat<Scalar>& rhs, Errc failure, const char* what) {
  Eigen::FullPivLU<Mat<Scalar>> lu(K);
  if (!lu.isInvertible()) throw Error(failure, std::string(what) + " is singular");
  return lu.solve(rhs);
}

template <typename Scalar>
Mat<Scalar> vec_as_mat(const Vec<Scalar>& v) {
  return v;
}

template <typename Scalar>
VectorPath<Scalar> to_vector_path(MatrixPath<Scalar>&& m) {
  VectorPath<Scalar> out;
  out.grid = m.grid;
  out.values.reserve(m.values.size());
  for (auto& v : m.values) out.values.emplace_back(v.col(0));
  return out;
}

}  // namespace detail

/// Backward Riccati equation for P with P(T) = G.
template <typename Scalar>
MatrixPath<Scalar> solve_P(const ModelSpec<Scalar>& model, const TimeGrid<Scalar>& grid,
                           double psd_rel = 1e-9) {
  auto rhs = [&](Scalar t, const Mat<Scalar>& P) -> Mat<Scalar> {
    const auto c = sample(model.coeffs, t);
    const auto w = sample(model.cost, t);
    const Mat<Scalar> PB_S = P * c.B + w.S.transpose();
    const Mat<Scalar> gain = detail::solve_spd<Scalar>(w.R, PB_S.transpose(), Errc::SingularR, "R");
    return -(P * c.A + c.A.transpose() * P + w.Q - PB_S * gain);
  };
  auto path = integrate_matrix_ode<Scalar>(rhs, model.cost.G, grid, Direction::Backward, Symmetrize{});
  detail::require_psd(path, psd_rel, "P");
  return path;
}

/// Theta = -R^-1 (B^T P + S), node by node.
template <typename Scalar>
MatrixPath<Scalar> compute_Theta(const MatrixPath<Scalar>& P, const ModelSpec<Scalar>& model) {
  MatrixPath<Scalar> out;
  out.grid = P.grid;
  out.values.reserve(P.values.size());
  for (std::size_t i = 0; i < P.grid.nodes(); ++i) {
    const Scalar t = P.grid.time(i);
    const auto c = sample(model.coeffs, t);
    const auto w = sample(model.cost, t);
    out.values.push_back(
        -detail::solve_spd<Scalar>(w.R, c.B.transpose() * P[i] + w.S, Errc::SingularR, "R"));
  }
  return out;
}

/// Backward affine equation phi' = -(A + B Theta)^T phi - Theta^T r - P a - q, phi(T) = g.
template <typename Scalar>
VectorPath<Scalar> solve_phi(const ModelSpec<Scalar>& model, const MatrixPath<Scalar>& Theta,
                             const MatrixPath<Scalar>& P, const TimeGrid<Scalar>& grid) {
  detail::require_grid(grid, Theta.grid, "Theta");
  detail::require_grid(grid, P.grid, "P");
  auto rhs = [&](Scalar t, const Mat<Scalar>& phi) -> Mat<Scalar> {
    const auto c = sample(model.coeffs, t);
    const auto w = sample(model.cost, t);
    const Mat<Scalar> Th = Theta.at(t);
    const Mat<Scalar> closed = c.A + c.B * Th;
    return -(closed.transpose() * phi + Th.transpose() * w.r + P.at(t) * c.a + w.q);
  };
  return detail::to_vector_path(
      integrate_matrix_ode<Scalar>(rhs, detail::vec_as_mat(model.cost.g), grid, Direction::Backward));
}

/// Forward filter Riccati equation for Sigma with Sigma(0) = 0.
template <typename Scalar>
MatrixPath<Scalar> solve_Sigma(const ModelSpec<Scalar>& model, const TimeGrid<Scalar>& grid,
                               double psd_rel = 1e-9) {
  const auto n = static_cast<Eigen::Index>(model.dims.n);
  auto rhs = [&](Scalar t, const Mat<Scalar>& Sig) -> Mat<Scalar> {
    const auto c = sample(model.coeffs, t);
    const Mat<Scalar> KinvH = detail::solve_general<Scalar>(c.K, c.H, Errc::SingularK, "K");
    const Mat<Scalar> F = c.A - c.C * KinvH;
    // Sigma H^T N^-1 H Sigma = (K^-1 H Sigma)^T (K^-1 H Sigma)
    const Mat<Scalar> KinvHSig = KinvH * Sig;
    return F * Sig + Sig * F.transpose() - KinvHSig.transpose() * KinvHSig + c.D * c.D.transpose();
  };
  auto path = integrate_matrix_ode<Scalar>(rhs, Mat<Scalar>::Zero(n, n), grid, Direction::Forward,
                                           Symmetrize{});
  detail::require_psd(path, psd_rel, "Sigma");
  return path;
}

/// Delta = Sigma (K^-1 H)^T, node by node; column i is Delta_i.
template <typename Scalar>
MatrixPath<Scalar> compute_Delta(const MatrixPath<Scalar>& Sigma, const ModelSpec<Scalar>& model) {
  MatrixPath<Scalar> out;
  out.grid = Sigma.grid;
  out.values.reserve(Sigma.values.size());
  for (std::size_t i = 0; i < Sigma.grid.nodes(); ++i) {
    const auto c = sample(model.coeffs, Sigma.grid.time(i));
    const Mat<Scalar> KinvH = detail::solve_general<Scalar>(c.K, c.H, Errc::SingularK, "K");
    out.values.push_back(Sigma[i] * KinvH.transpose());
  }
  return out;
}

/// curlyA = A - (Sigma H^T + C K^T) N^-1 H, node by node.
template <typename Scalar>
Mat<Scalar> curlyA_at(const CoefficientSample<Scalar>& c, const Mat<Scalar>& Sigma) {
  const Mat<Scalar> N = c.K * c.K.transpose();
  const Mat<Scalar> NinvH = detail::solve_spd<Scalar>(N, c.H, Errc::SingularN, "N");
  return c.A - (Sigma * c.H.transpose() + c.C * c.K.transpose()) * NinvH;
}

template <typename Scalar>
MatrixPath<Scalar> compute_curlyA(const ModelSpec<Scalar>& model, const MatrixPath<Scalar>& Sigma) {
  MatrixPath<Scalar> out;
  out.grid = Sigma.grid;
  out.values.reserve(Sigma.values.size());
  for (std::size_t i = 0; i < Sigma.grid.nodes(); ++i)
    out.values.push_back(curlyA_at(sample(model.coeffs, Sigma.grid.time(i)), Sigma[i]));
  return out;
}

/// Backward Lyapunov equation Pi' = -Pi curlyA - curlyA^T Pi - Q, Pi(T) = G.
template <typename Scalar>
MatrixPath<Scalar> solve_Pi(const ModelSpec<Scalar>& model, const MatrixPath<Scalar>& curlyA,
                            const TimeGrid<Scalar>& grid, double psd_rel = 1e-9) {
  detail::require_grid(grid, curlyA.grid, "curlyA");
  auto rhs = [&](Scalar t, const Mat<Scalar>& Pi) -> Mat<Scalar> {
    const Mat<Scalar> cA = curlyA.at(t);
    return -(Pi * cA + cA.transpose() * Pi + sample(model.cost, t).Q);
  };
  auto path = integrate_matrix_ode<Scalar>(rhs, model.cost.G, grid, Direction::Backward, Symmetrize{});
  detail::require_psd(path, psd_rel, "Pi");
  return path;
}

/// Backward affine equation pi' = -curlyA^T pi - q, pi(T) = g.
template <typename Scalar>
VectorPath<Scalar> solve_pi(const ModelSpec<Scalar>& model, const MatrixPath<Scalar>& curlyA,
                            const TimeGrid<Scalar>& grid) {
  detail::require_grid(grid, curlyA.grid, "curlyA");
  auto rhs = [&](Scalar t, const Mat<Scalar>& pi) -> Mat<Scalar> {
    return -(curlyA.at(t).transpose() * pi + sample(model.cost, t).q);
  };
  return detail::to_vector_path(
      integrate_matrix_ode<Scalar>(rhs, detail::vec_as_mat(model.cost.g), grid, Direction::Backward));
}

/// Everything in dependency order: P -> Theta -> phi and Sigma -> Delta -> curlyA -> Pi, pi.
template <typename Scalar>
DeterministicSolution<Scalar> solve_all(const ModelSpec<Scalar>& model, const TimeGrid<Scalar>& grid,
                                        double psd_rel = 1e-9) {
  if (grid.T != model.T) throw Error(Errc::ShapeMismatch, "solver grid must span [0, T]");
  DeterministicSolution<Scalar> sol;
  sol.P = solve_P(model, grid, psd_rel);
  sol.Theta = compute_Theta(sol.P, model);
  sol.phi = solve_phi(model, sol.Theta, sol.P, grid);
  sol.Sigma = solve_Sigma(model, grid, psd_rel);
  sol.Delta = compute_Delta(sol.Sigma, model);
  sol.curlyA = compute_curlyA(model, sol.Sigma);
  sol.Pi = solve_Pi(model, sol.curlyA, grid, psd_rel);
  sol.pi_vec = solve_pi(model, sol.curlyA, grid);
  return sol;
}

}  // namespace polq
