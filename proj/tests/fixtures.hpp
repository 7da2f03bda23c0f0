// Shared models for the test binaries.
#pragma once

#include "polq/model.hpp"

#include <cmath>
#include <random>

namespace polq::test {

inline MatrixXd m1(double v) { return MatrixXd::Constant(1, 1, v); }
inline VectorXd v1(double v) { return VectorXd::Constant(1, v); }

struct ScalarParams {
  double A = 0, B = 1, a = 0, C = 0, D = 1, H = 1, h = 0, K = 1;
  double Q = 1, S = 0, R = 1, q = 0, r = 0, G = 0, g = 0;
  double T = 1, x0 = 1;
};

inline ModelSpec<double> scalar_model(const ScalarParams& p = {}) {
  ModelSpec<double> model;
  model.dims = {1, 1, 1, 1};
  model.T = p.T;
  model.x0 = v1(p.x0);
  model.coeffs = CoefficientTable<double>::constant(
      p.T, {m1(p.A), m1(p.B), v1(p.a), m1(p.C), m1(p.D), m1(p.H), v1(p.h), m1(p.K)});
  model.cost = CostWeights<double>::constant(p.T, m1(p.G), v1(p.g), {m1(p.Q), m1(p.S), m1(p.R), v1(p.q), v1(p.r)});
  return model;
}

/// A=0, B=1, C=0, D=1, H=1, K=1, Q=1, R=1, everything else zero, T=1, x0=1.
inline ModelSpec<double> scalar_benchmark() { return scalar_model({}); }

/// Randomized model that satisfies the standing assumptions. Coefficients
/// vary piecewise-linearly over `table_steps` intervals.
inline ModelSpec<double> random_model(std::mt19937_64& rng, Dimensions dims, std::size_t table_steps = 4,
                                      double T = 1.0) {
  std::normal_distribution<double> N01(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(dims.n);
  const auto m = static_cast<Eigen::Index>(dims.m);
  const auto d = static_cast<Eigen::Index>(dims.d);
  const auto k = static_cast<Eigen::Index>(dims.k);
  auto rnd = [&](Eigen::Index r, Eigen::Index c, double scale) {
    MatrixXd M(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) M(i, j) = scale * N01(rng);
    return M;
  };
  auto rndv = [&](Eigen::Index r, double scale) { return VectorXd(rnd(r, 1, scale)); };

  ModelSpec<double> model;
  model.dims = dims;
  model.T = T;
  model.x0 = rndv(n, 1.0);
  model.coeffs.grid = TimeGrid<double>(T, table_steps);
  model.cost.grid = TimeGrid<double>(T, table_steps);
  for (std::size_t i = 0; i <= table_steps; ++i) {
    model.coeffs.A.push_back(-0.5 * MatrixXd::Identity(n, n) + rnd(n, n, 0.3));
    model.coeffs.B.push_back(rnd(n, m, 0.7));
    model.coeffs.a.push_back(rndv(n, 0.3));
    model.coeffs.C.push_back(rnd(n, d, 0.3));
    model.coeffs.D.push_back(rnd(n, k, 0.5));
    model.coeffs.H.push_back(rnd(d, n, 0.8));
    model.coeffs.h.push_back(rndv(d, 0.2));
    model.coeffs.K.push_back(MatrixXd::Identity(d, d) + rnd(d, d, 0.15));

    const MatrixXd Rf = rnd(m, m, 0.5);
    const MatrixXd R = Rf * Rf.transpose() + 0.5 * MatrixXd::Identity(m, m);
    const MatrixXd S = rnd(m, n, 0.3);
    const MatrixXd Qf = rnd(n, n, 0.5);
    MatrixXd Q = Qf * Qf.transpose() + S.transpose() * R.ldlt().solve(S);
    Q = 0.5 * (Q + Q.transpose()).eval();
    model.cost.Q.push_back(Q);
    model.cost.S.push_back(S);
    model.cost.R.push_back(R);
    model.cost.q.push_back(rndv(n, 0.3));
    model.cost.r.push_back(rndv(m, 0.3));
  }
  const MatrixXd Gf = rnd(n, n, 0.5);
  model.cost.G = Gf * Gf.transpose();
  model.cost.g = rndv(n, 0.3);
  model.cost.delta = 1e-6;
  return model;
}

}  // namespace polq::test
