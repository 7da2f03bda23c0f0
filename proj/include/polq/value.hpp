// Closed-form scalar quantities: path cost integrands, the optimal value
// term by term, its control-dependent and estimation parts, and the
// completed-square residual.
#pragma once

#include "polq/core.hpp"
#include "polq/detsolve.hpp"
#include "polq/model.hpp"

#include <vector>

namespace polq {

template <typename Scalar = double>
struct ValueBreakdown {
  Scalar quadratic_term{0};     // <P(0) x, x>
  Scalar linear_term{0};        // 2 <phi(0), x>
  Scalar PiD_integral{0};       // int sum_i <Pi D_i, D_i>
  Scalar PiDelta_integral{0};   // int sum_i <Pi Delta_i, Delta_i>
  Scalar PDeltaC_integral{0};   // int sum_i <P (Delta_i + C_i), Delta_i + C_i>
  Scalar Rinv_integral{0};      // -int <R^-1 (B^T phi + r), B^T phi + r>, signed
  Scalar phia_integral{0};      // int 2 <phi, a>
  Scalar total{0};

  Scalar sum_of_parts() const {
    return quadratic_term + linear_term + PiD_integral + PiDelta_integral + PDeltaC_integral +
           Rinv_integral + phia_integral;
  }
};

/// Composite trapezoid rule over node values.
template <typename Scalar>
Scalar trapezoid(const std::vector<Scalar>& f, const TimeGrid<Scalar>& grid) {
  if (f.size() != grid.nodes()) throw Error(Errc::ShapeMismatch, "integrand length does not match grid");
  Scalar acc = (f.front() + f.back()) / Scalar(2);
  for (std::size_t i = 1; i + 1 < f.size(); ++i) acc += f[i];
  return acc * grid.step();
}

/// <Qx,x> + 2<Sx,u> + <Ru,u> + 2<q,x> + 2<r,u> with the weights at t.
template <typename Scalar>
Scalar running_cost(const CostSample<Scalar>& w, const Vec<Scalar>& x, const Vec<Scalar>& u) {
  return x.dot(w.Q * x) + Scalar(2) * u.dot(w.S * x) + u.dot(w.R * u) + Scalar(2) * w.q.dot(x) +
         Scalar(2) * w.r.dot(u);
}

template <typename Scalar>
Scalar running_cost(Scalar t, const Vec<Scalar>& x, const Vec<Scalar>& u, const ModelSpec<Scalar>& model) {
  return running_cost(sample(model.cost, t), x, u);
}

template <typename Scalar>
Scalar terminal_cost(const Vec<Scalar>& xT, const ModelSpec<Scalar>& model) {
  return xT.dot(model.cost.G * xT) + Scalar(2) * model.cost.g.dot(xT);
}

namespace detail {

// Node values of every integrand appearing in the optimal value.
template <typename Scalar>
struct ValueIntegrands {
  std::vector<Scalar> PiD, PiDelta, PDeltaC, Rinv, phia;
};

template <typename Scalar>
ValueIntegrands<Scalar> value_integrands(const DeterministicSolution<Scalar>& sol,
                                         const ModelSpec<Scalar>& model) {
  const auto& grid = sol.grid();
  ValueIntegrands<Scalar> f;
  for (auto* v : {&f.PiD, &f.PiDelta, &f.PDeltaC, &f.Rinv, &f.phia}) v->resize(grid.nodes());
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    const Scalar t = grid.time(i);
    const auto c = sample(model.coeffs, t);
    const auto w = sample(model.cost, t);
    const Mat<Scalar>& P = sol.P[i];
    const Mat<Scalar>& Pi = sol.Pi[i];
    const Mat<Scalar>& Delta = sol.Delta[i];
    // sum_i <M x_i, x_i> over columns x_i of X is trace(X^T M X)
    f.PiD[i] = (c.D.transpose() * Pi * c.D).trace();
    f.PiDelta[i] = (Delta.transpose() * Pi * Delta).trace();
    const Mat<Scalar> DC = Delta + c.C;
    f.PDeltaC[i] = (DC.transpose() * P * DC).trace();
    const Vec<Scalar> b = c.B.transpose() * sol.phi[i] + w.r;
    f.Rinv[i] = -b.dot(solve_spd<Scalar>(w.R, b, Errc::SingularR, "R").col(0));
    f.phia[i] = Scalar(2) * sol.phi[i].dot(c.a);
  }
  return f;
}

}  // namespace detail

/// Optimal value at initial state x, each term reported separately.
template <typename Scalar>
ValueBreakdown<Scalar> optimal_value(const Vec<Scalar>& x, const DeterministicSolution<Scalar>& sol,
                                     const ModelSpec<Scalar>& model) {
  const auto& grid = sol.grid();
  const auto f = detail::value_integrands(sol, model);
  ValueBreakdown<Scalar> v;
  v.quadratic_term = x.dot(sol.P[0] * x);
  v.linear_term = Scalar(2) * sol.phi[0].dot(x);
  v.PiD_integral = trapezoid(f.PiD, grid);
  v.PiDelta_integral = trapezoid(f.PiDelta, grid);
  v.PDeltaC_integral = trapezoid(f.PDeltaC, grid);
  v.Rinv_integral = trapezoid(f.Rinv, grid);
  v.phia_integral = trapezoid(f.phia, grid);
  v.total = v.sum_of_parts();
  return v;
}

/// Control-independent estimation cost.
template <typename Scalar>
Scalar tilde_J(const DeterministicSolution<Scalar>& sol, const ModelSpec<Scalar>& model) {
  const auto f = detail::value_integrands(sol, model);
  std::vector<Scalar> sum(f.PiD.size());
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = f.PiD[i] + f.PiDelta[i];
  return trapezoid(sum, sol.grid());
}

/// Infimum of the filtered cost over admissible controls (the residual square dropped).
template <typename Scalar>
Scalar hat_J_floor(const Vec<Scalar>& x, const DeterministicSolution<Scalar>& sol,
                   const ModelSpec<Scalar>& model) {
  const auto f = detail::value_integrands(sol, model);
  std::vector<Scalar> sum(f.PiD.size());
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = f.Rinv[i] + f.phia[i] + f.PDeltaC[i];
  return x.dot(sol.P[0] * x) + Scalar(2) * sol.phi[0].dot(x) + trapezoid(sum, sol.grid());
}

/// Feedback law Theta(t) xhat - R(t)^-1 (B(t)^T phi(t) + r(t)) at grid node i.
template <typename Scalar>
Vec<Scalar> policy_feedback_at_node(std::size_t i, const Vec<Scalar>& xhat, const DeterministicSolution<Scalar>& sol,
                                    const ModelSpec<Scalar>& model) {
  const Scalar t = sol.grid().time(i);
  const auto c = sample(model.coeffs, t);
  const auto w = sample(model.cost, t);
  const Vec<Scalar> b = c.B.transpose() * sol.phi[i] + w.r;
  return sol.Theta[i] * xhat - detail::solve_spd<Scalar>(w.R, b, Errc::SingularR, "R").col(0);
}

/// Feedback law at a grid time t.
template <typename Scalar>
Vec<Scalar> policy_feedback(Scalar t, const Vec<Scalar>& xhat, const DeterministicSolution<Scalar>& sol,
                            const ModelSpec<Scalar>& model) {
  const std::size_t i = sol.grid().nearest(t);
  if (sol.grid().time(i) != t) throw Error(Errc::OutOfRange, "feedback time is not a grid node");
  return policy_feedback_at_node(i, xhat, sol, model);
}

/// <R w, w> with w = Theta xhat - R^-1 (B^T phi + r) - u; zero iff u is the feedback law.
template <typename Scalar>
Scalar square_residual(Scalar t, const Vec<Scalar>& xhat, const Vec<Scalar>& u,
                       const DeterministicSolution<Scalar>& sol, const ModelSpec<Scalar>& model) {
  const Vec<Scalar> w = policy_feedback(t, xhat, sol, model) - u;
  return w.dot(sample(model.cost, t).R * w);
}

}  // namespace polq
