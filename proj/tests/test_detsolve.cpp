#include "doctest.h"
#include "fixtures.hpp"
#include "polq/detsolve.hpp"

#include <cmath>
#include <random>

using namespace polq;
using namespace polq::test;

namespace {

double max_abs_diff(const MatrixPath<double>& path, double (*f)(double)) {
  double worst = 0;
  for (std::size_t i = 0; i < path.grid.nodes(); ++i)
    worst = std::max(worst, std::abs(path[i](0, 0) - f(path.grid.time(i))));
  return worst;
}

double sym_defect(const MatrixXd& m) { return (m - m.transpose()).norm() / (1.0 + m.norm()); }

}  // namespace

TEST_SUITE("detsolve") {
  TEST_CASE("zero dynamics keep the boundary in both directions") {
    const TimeGrid<double> grid(1.0, 10);
    const MatrixXd I = MatrixXd::Identity(2, 2);
    auto zero = [](double, const MatrixXd& y) { return MatrixXd::Zero(y.rows(), y.cols()).eval(); };
    for (auto dir : {Direction::Forward, Direction::Backward}) {
      const auto path = integrate_matrix_ode<double>(zero, I, grid, dir);
      for (const auto& v : path.values) CHECK(v == I);
    }
  }

  TEST_CASE("exponential growth forward reaches e") {
    const TimeGrid<double> grid(1.0, 100);
    auto rhs = [](double, const MatrixXd& y) { return y; };
    const auto path = integrate_matrix_ode<double>(rhs, m1(1.0), grid, Direction::Forward);
    CHECK(std::abs(path[100](0, 0) - std::exp(1.0)) < 1e-8);
  }

  TEST_CASE("backward y' = y^2 from y(1) = 1 gives y(0) = 1/2") {
    const TimeGrid<double> grid(1.0, 100);
    auto rhs = [](double, const MatrixXd& y) { return (y * y).eval(); };
    const auto path = integrate_matrix_ode<double>(rhs, m1(1.0), grid, Direction::Backward);
    CHECK(std::abs(path[0](0, 0) - 0.5) < 1e-8);
    for (std::size_t i = 0; i <= 100; ++i) CHECK(std::abs(path[i](0, 0) - 1.0 / (2.0 - grid.time(i))) < 1e-8);
  }

  TEST_CASE("blow-up reports the first non-finite node") {
    const TimeGrid<double> grid(2.0, 20);
    auto rhs = [](double, const MatrixXd& y) { return (y * y * y * y).eval(); };
    try {
      integrate_matrix_ode<double>(rhs, m1(10.0), grid, Direction::Forward);
      FAIL("expected NonFinite");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NonFinite);
      REQUIRE(e.node().has_value());
      CHECK(*e.node() >= 1);
    }
    auto nan_rhs = [](double, const MatrixXd& y) { return MatrixXd::Constant(y.rows(), y.cols(), NAN).eval(); };
    CHECK_THROWS_AS(integrate_matrix_ode<double>(nan_rhs, m1(0.0), grid, Direction::Backward), Error);
  }

  TEST_CASE("P vanishes without cost") {
    ScalarParams p;
    p.Q = 0;
    p.A = 0.7;
    const auto model = scalar_model(p);
    const auto P = solve_P(model, TimeGrid<double>(1.0, 50));
    for (const auto& v : P.values) CHECK(v(0, 0) == 0.0);
  }

  TEST_CASE("scalar Riccati P(t) = tanh(1 - t)") {
    const auto model = scalar_benchmark();
    const auto P = solve_P(model, TimeGrid<double>(1.0, 1000));
    CHECK(max_abs_diff(P, [](double t) { return std::tanh(1.0 - t); }) < 1e-10);
    CHECK(P[0](0, 0) == doctest::Approx(0.761594155955765).epsilon(1e-12));
    const auto Theta = compute_Theta(P, model);
    CHECK(max_abs_diff(Theta, [](double t) { return -std::tanh(1.0 - t); }) < 1e-10);
  }

  TEST_CASE("Lyapunov case B = 0, A = -1 gives (1 - e^-2) / 2") {
    ScalarParams p;
    p.A = -1;
    p.B = 0;
    const auto model = scalar_model(p);
    const auto P = solve_P(model, TimeGrid<double>(1.0, 200));
    CHECK(std::abs(P[0](0, 0) - 0.43233235838169365) < 1e-9);
    const auto Theta = compute_Theta(P, model);
    for (const auto& v : Theta.values) CHECK(v(0, 0) == 0.0);
  }

  TEST_CASE("Theta = -R^-1 S when B = 0") {
    ScalarParams p;
    p.B = 0;
    p.S = 0.5;
    p.R = 2.0;
    const auto model = scalar_model(p);
    const auto Theta = compute_Theta(solve_P(model, TimeGrid<double>(1.0, 20)), model);
    for (const auto& v : Theta.values) CHECK(v(0, 0) == doctest::Approx(-0.25));
  }

  TEST_CASE("phi examples") {
    const TimeGrid<double> grid(1.0, 100);
    {
      const auto model = scalar_benchmark();
      const auto P = solve_P(model, grid);
      const auto phi = solve_phi(model, compute_Theta(P, model), P, grid);
      for (const auto& v : phi.values) CHECK(v(0) == 0.0);
    }
    {
      ScalarParams p;
      p.B = 0;
      p.q = 1;
      const auto model = scalar_model(p);
      const auto P = solve_P(model, grid);
      const auto phi = solve_phi(model, compute_Theta(P, model), P, grid);
      for (std::size_t i = 0; i <= 100; ++i) CHECK(std::abs(phi[i](0) - (1.0 - grid.time(i))) < 1e-12);
    }
    {
      ScalarParams p;
      p.A = 1;
      p.B = 0;
      p.Q = 0;
      p.g = 1;
      const auto model = scalar_model(p);
      const auto P = solve_P(model, grid);
      const auto phi = solve_phi(model, compute_Theta(P, model), P, grid);
      for (std::size_t i = 0; i <= 100; ++i) CHECK(std::abs(phi[i](0) - std::exp(1.0 - grid.time(i))) < 1e-8);
    }
  }

  TEST_CASE("Sigma examples") {
    const TimeGrid<double> grid(1.0, 1000);
    {
      ScalarParams p;
      p.D = 0;
      const auto S = solve_Sigma(scalar_model(p), grid);
      for (const auto& v : S.values) CHECK(v(0, 0) == 0.0);
    }
    {
      const auto S = solve_Sigma(scalar_benchmark(), grid);
      CHECK(max_abs_diff(S, [](double t) { return std::tanh(t); }) < 1e-10);
      CHECK(std::abs(S[500](0, 0) - 0.46211715726001) < 1e-10);
    }
    {
      ScalarParams p;
      p.H = 0;
      const auto S = solve_Sigma(scalar_model(p), grid);
      CHECK(max_abs_diff(S, [](double t) { return t; }) < 1e-12);
    }
  }

  TEST_CASE("Delta and curlyA examples") {
    const TimeGrid<double> grid(1.0, 400);
    const auto model = scalar_benchmark();
    const auto S = solve_Sigma(model, grid);
    CHECK(max_abs_diff(compute_Delta(S, model), [](double t) { return std::tanh(t); }) < 1e-10);
    CHECK(max_abs_diff(compute_curlyA(model, S), [](double t) { return -std::tanh(t); }) < 1e-10);

    ScalarParams p;
    p.H = 0;
    p.A = 0.3;
    p.C = 0.4;
    const auto m2 = scalar_model(p);
    const auto S2 = solve_Sigma(m2, grid);
    for (const auto& v : compute_Delta(S2, m2).values) CHECK(v(0, 0) == 0.0);
    for (const auto& v : compute_curlyA(m2, S2).values) CHECK(v(0, 0) == 0.3);

    ScalarParams q;
    q.D = 0;
    q.A = -0.2;
    const auto m3 = scalar_model(q);
    const auto S3 = solve_Sigma(m3, grid);
    for (const auto& v : compute_Delta(S3, m3).values) CHECK(v(0, 0) == 0.0);
    for (const auto& v : compute_curlyA(m3, S3).values) CHECK(v(0, 0) == -0.2);
  }

  TEST_CASE("Pi examples") {
    const TimeGrid<double> grid(1.0, 1000);
    {
      ScalarParams p;
      p.Q = 0;
      const auto model = scalar_model(p);
      const auto Pi = solve_Pi(model, compute_curlyA(model, solve_Sigma(model, grid)), grid);
      for (const auto& v : Pi.values) CHECK(v(0, 0) == 0.0);
    }
    {
      ScalarParams p;
      p.H = 0;  // curlyA = A = 0
      const auto model = scalar_model(p);
      const auto Pi = solve_Pi(model, compute_curlyA(model, solve_Sigma(model, grid)), grid);
      CHECK(max_abs_diff(Pi, [](double t) { return 1.0 - t; }) < 1e-12);
    }
    {
      // curlyA = -tanh t: closed form cosh^2(t) (tanh 1 - tanh t).
      const auto model = scalar_benchmark();
      const auto Pi = solve_Pi(model, compute_curlyA(model, solve_Sigma(model, grid)), grid);
      auto exact = [](double t) { return std::cosh(t) * std::cosh(t) * (std::tanh(1.0) - std::tanh(t)); };
      CHECK(max_abs_diff(Pi, exact) < 1e-9);
      CHECK(Pi[0](0, 0) == doctest::Approx(0.761594155955765).epsilon(1e-9));
      // Independent quadrature of the integral form at step 1e-5.
      const int n = 100000;
      double acc = 0;
      for (int j = 0; j <= n; ++j) {
        const double s = static_cast<double>(j) / n;
        const double w = (j == 0 || j == n) ? 0.5 : 1.0;
        acc += w / (std::cosh(s) * std::cosh(s));
      }
      CHECK(std::abs(Pi[0](0, 0) - acc / n) < 1e-9);
    }
  }

  TEST_CASE("pi examples") {
    const TimeGrid<double> grid(1.0, 200);
    {
      const auto model = scalar_benchmark();
      const auto pv = solve_pi(model, compute_curlyA(model, solve_Sigma(model, grid)), grid);
      for (const auto& v : pv.values) CHECK(v(0) == 0.0);
    }
    {
      ScalarParams p;
      p.H = 0;
      p.q = 1;
      const auto model = scalar_model(p);
      const auto pv = solve_pi(model, compute_curlyA(model, solve_Sigma(model, grid)), grid);
      for (std::size_t i = 0; i <= 200; ++i) CHECK(std::abs(pv[i](0) - (1.0 - grid.time(i))) < 1e-12);
    }
    {
      ScalarParams p;
      p.H = 0;
      p.A = 1;
      p.g = 1;
      const auto model = scalar_model(p);
      const auto pv = solve_pi(model, compute_curlyA(model, solve_Sigma(model, grid)), grid);
      for (std::size_t i = 0; i <= 200; ++i) CHECK(std::abs(pv[i](0) - std::exp(1.0 - grid.time(i))) < 1e-8);
    }
  }

  TEST_CASE("solve_all on the scalar benchmark") {
    const TimeGrid<double> grid(1.0, 1000);
    const auto sol = solve_all(scalar_benchmark(), grid);
    CHECK(std::abs(sol.P[0](0, 0) - std::tanh(1.0)) < 1e-10);
    CHECK(max_abs_diff(sol.Sigma, [](double t) { return std::tanh(t); }) < 1e-10);
    CHECK(max_abs_diff(sol.Theta, [](double t) { return -std::tanh(1.0 - t); }) < 1e-10);
    CHECK(max_abs_diff(sol.curlyA, [](double t) { return -std::tanh(t); }) < 1e-10);
    for (std::size_t i = 0; i < grid.nodes(); ++i) {
      CHECK(sol.phi[i](0) == 0.0);
      CHECK(sol.pi_vec[i](0) == 0.0);
    }
  }

  TEST_CASE("zero cost data leaves Sigma untouched") {
    ScalarParams p;
    p.Q = 0;
    const TimeGrid<double> grid(1.0, 100);
    const auto sol = solve_all(scalar_model(p), grid);
    const auto ref = solve_all(scalar_benchmark(), grid);
    for (std::size_t i = 0; i < grid.nodes(); ++i) {
      CHECK(sol.P[i](0, 0) == 0.0);
      CHECK(sol.phi[i](0) == 0.0);
      CHECK(sol.Pi[i](0, 0) == 0.0);
      CHECK(sol.pi_vec[i](0) == 0.0);
      CHECK(sol.Sigma[i] == ref.Sigma[i]);
    }
  }

  TEST_CASE("one-step grid runs") {
    std::mt19937_64 rng(2);
    const auto model = random_model(rng, {2, 1, 1, 1}, 1);
    CHECK_NOTHROW(solve_all(model, TimeGrid<double>(1.0, 1)));
    CHECK_NOTHROW(solve_all(scalar_benchmark(), TimeGrid<double>(1.0, 1)));
  }

  TEST_CASE("grid must span the model horizon") {
    CHECK_THROWS_AS(solve_all(scalar_benchmark(), TimeGrid<double>(2.0, 10)), Error);
  }

  TEST_CASE("RK4 order on the scalar Riccati") {
    const auto model = scalar_benchmark();
    const double e100 = std::abs(solve_P(model, TimeGrid<double>(1.0, 100))[0](0, 0) - std::tanh(1.0));
    const double e200 = std::abs(solve_P(model, TimeGrid<double>(1.0, 200))[0](0, 0) - std::tanh(1.0));
    CHECK(e100 / e200 >= 12.0);
  }

  TEST_CASE("forward Sigma equals the time-reversed backward solve") {
    const TimeGrid<double> grid(1.0, 1000);
    const auto Sigma = solve_Sigma(scalar_benchmark(), grid);
    // R(s) = Sigma(T - s) solves R' = -(1 - R^2) with R(T) = 0.
    auto rhs = [](double, const MatrixXd& r) { return (-(MatrixXd::Ones(1, 1) - r * r)).eval(); };
    const auto R = integrate_matrix_ode<double>(rhs, m1(0.0), grid, Direction::Backward, Symmetrize{});
    double worst = 0;
    for (std::size_t i = 0; i < grid.nodes(); ++i)
      worst = std::max(worst, std::abs(R[grid.steps - i](0, 0) - Sigma[i](0, 0)));
    CHECK(worst <= 1e-9);
  }

  TEST_CASE("symmetry, PSD and exact boundaries on random models") {
    std::mt19937_64 rng(17);
    for (std::size_t trial = 0; trial < 20; ++trial) {
      const Dimensions dims{1 + trial % 3, 1 + trial % 2, 1 + (trial / 2) % 2, 1 + (trial / 3) % 2};
      const auto model = random_model(rng, dims, 1 + trial % 4);
      const TimeGrid<double> grid(1.0, 200);
      const auto sol = solve_all(model, grid);
      CHECK(sol.P[grid.steps] == model.cost.G);
      CHECK(sol.Pi[grid.steps] == model.cost.G);
      CHECK(sol.phi[grid.steps] == model.cost.g);
      CHECK(sol.pi_vec[grid.steps] == model.cost.g);
      CHECK(sol.Sigma[0] == MatrixXd::Zero(dims.n, dims.n));
      for (std::size_t i = 0; i < grid.nodes(); ++i) {
        for (const auto* path : {&sol.P, &sol.Sigma, &sol.Pi}) {
          const auto& v = (*path)[i];
          CHECK(sym_defect(v) <= 1e-12);
          CHECK(min_eigenvalue(v) >= -1e-9 * (1.0 + v.norm()));
        }
      }
    }
  }

  TEST_CASE("PSD guard rejects an indefinite path") {
    MatrixPath<double> path;
    path.grid = TimeGrid<double>(1.0, 2);
    path.values = {m1(1.0), m1(-0.5), m1(0.0)};
    try {
      detail::require_psd(path, 1e-9, "test");
      FAIL("expected PSDViolation");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::PSDViolation);
      CHECK(*e.node() == 1);
    }
  }

  TEST_CASE("path interpolation is exact at nodes and fourth order between") {
    const auto sol = solve_all(scalar_benchmark(), TimeGrid<double>(1.0, 50));
    CHECK(sol.Sigma.at(0.2)(0, 0) == sol.Sigma[10](0, 0));
    CHECK(std::abs(sol.Sigma.at(0.213)(0, 0) - std::tanh(0.213)) < 1e-7);
    CHECK(std::abs(sol.P.at(0.999)(0, 0) - std::tanh(0.001)) < 1e-7);
    CHECK_THROWS_AS(sol.P.at(1.5), Error);
  }

  TEST_CASE("long double instantiation") {
    ModelSpec<long double> model;
    using LM = Mat<long double>;
    using LV = Vec<long double>;
    auto c = [](long double v) { return LM::Constant(1, 1, v); };
    auto v = [](long double x) { return LV::Constant(1, x); };
    model.dims = {1, 1, 1, 1};
    model.T = 1;
    model.x0 = v(1);
    model.coeffs = CoefficientTable<long double>::constant(1, {c(0), c(1), v(0), c(0), c(1), c(1), v(0), c(1)});
    model.cost = CostWeights<long double>::constant(1, c(0), v(0), {c(1), c(0), c(1), v(0), v(0)});
    const auto sol = solve_all(model, TimeGrid<long double>(1, 2000));
    CHECK(std::abs(static_cast<double>(sol.P[0](0, 0) - std::tanh(1.0L))) < 1e-13);
  }
}
