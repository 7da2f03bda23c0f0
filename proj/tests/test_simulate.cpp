#include "doctest.h"
#include "fixtures.hpp"
#include "polq/philox.hpp"
#include "polq/simulate.hpp"

#include <cmath>
#include <random>

using namespace polq;
using namespace polq::test;

namespace {

double max_norm(const MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_SUITE("simulate") {
  TEST_CASE("Philox4x32-10 known-answer vectors") {
    using C = Philox4x32::Counter;
    using K = Philox4x32::Key;
    CHECK(Philox4x32::block(C{0, 0, 0, 0}, K{0, 0}) == C{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    CHECK(Philox4x32::block(C{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, K{0xffffffffu, 0xffffffffu}) ==
          C{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    CHECK(Philox4x32::block(C{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, K{0xa4093822u, 0x299f31d0u}) ==
          C{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
  }

  TEST_CASE("uniforms stay inside the open unit interval") {
    CHECK(open_unit(0) > 0.0);
    CHECK(open_unit(~std::uint64_t{0}) < 1.0);
  }

  TEST_CASE("noise draws are deterministic and stream-separated") {
    const TimeGrid<double> grid(1.0, 50);
    const Dimensions dims{2, 1, 3, 2};
    const auto a = draw_noise(42, 0, grid, dims);
    const auto b = draw_noise(42, 0, grid, dims);
    const auto c = draw_noise(42, 1, grid, dims);
    const auto e = draw_noise(43, 0, grid, dims);
    CHECK(a.dW == b.dW);
    CHECK(a.dWp == b.dWp);
    CHECK(a.dW != c.dW);
    CHECK(a.dW != e.dW);
    CHECK(a.dW.rows() == 3);
    CHECK(a.dWp.rows() == 2);
    CHECK(a.dW.cols() == 50);
  }

  TEST_CASE("increments have mean 0 and variance h") {
    const TimeGrid<double> grid(1.0, 100);
    const double h = grid.step();
    const Dimensions dims{1, 1, 1, 1};
    double sum = 0;
    double sum2 = 0;
    const int paths = 1000;
    for (int p = 0; p < paths; ++p) {
      const auto nd = draw_noise(7, static_cast<std::uint64_t>(p), grid, dims);
      sum += nd.dW.sum();
      sum2 += nd.dW.squaredNorm();
    }
    const double count = paths * 100.0;
    const double mean = sum / count;
    const double var = sum2 / count - mean * mean;
    CHECK(std::abs(mean) < 4.0 * std::sqrt(h / count));
    CHECK(std::abs(var - h) < 0.05 * h);
  }

  TEST_CASE("W and W' are uncorrelated") {
    const TimeGrid<double> grid(1.0, 100);
    double cross = 0;
    double count = 0;
    for (int p = 0; p < 500; ++p) {
      const auto nd = draw_noise(3, static_cast<std::uint64_t>(p), grid, {1, 1, 1, 1});
      cross += nd.dW.cwiseProduct(nd.dWp).sum();
      count += 100;
    }
    const double h = grid.step();
    CHECK(std::abs(cross / count) < 4.0 * h / std::sqrt(count));
  }

  TEST_CASE("coarsening sums adjacent increments") {
    const TimeGrid<double> grid(1.0, 8);
    const auto fine = draw_noise(1, 2, grid, {1, 1, 2, 1});
    const auto coarse = coarsen(fine, 2);
    CHECK(coarse.grid == TimeGrid<double>(1.0, 4));
    for (Eigen::Index j = 0; j < 4; ++j) {
      CHECK(coarse.dW.col(j) == fine.dW.col(2 * j) + fine.dW.col(2 * j + 1));
      CHECK(coarse.dWp.col(j) == fine.dWp.col(2 * j) + fine.dWp.col(2 * j + 1));
    }
    CHECK_THROWS_AS(coarsen(fine, 3), Error);
  }

  TEST_CASE("noiseless zero-control path follows the Euler flow") {
    ScalarParams p;
    p.A = -0.7;
    p.D = 0;
    p.x0 = 2;
    const auto model = scalar_model(p);
    const TimeGrid<double> grid(1.0, 40);
    const auto sol = solve_all(model, grid);
    NoiseDraw<double> noise{grid, MatrixXd::Zero(1, 40), MatrixXd::Zero(1, 40)};
    const auto b = simulate_closed_loop(model, sol, ControlPolicy<double>::zero(), noise);
    const double h = grid.step();
    for (std::size_t i = 0; i < grid.nodes(); ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      CHECK(b.X(0, c) == doctest::Approx(2.0 * std::pow(1.0 - 0.7 * h, static_cast<double>(i))).epsilon(1e-13));
      CHECK(b.Xhat(0, c) == b.X(0, c));
      CHECK(b.V(0, c) == 0.0);
      CHECK(b.Xtil(0, c) == 0.0);
    }
  }

  TEST_CASE("zero state and zero noise cost nothing") {
    ScalarParams p;
    p.D = 0;
    p.x0 = 0;
    const auto model = scalar_model(p);
    const TimeGrid<double> grid(1.0, 20);
    const auto sol = solve_all(model, grid);
    NoiseDraw<double> noise{grid, MatrixXd::Zero(1, 20), MatrixXd::Zero(1, 20)};
    CHECK(simulate_closed_loop(model, sol, ControlPolicy<double>::zero(), noise).cost == 0.0);
  }

  TEST_CASE("initial conditions and per-step innovation law") {
    std::mt19937_64 rng(41);
    const auto model = random_model(rng, {3, 2, 2, 2});
    const TimeGrid<double> grid(1.0, 100);
    const auto sol = solve_all(model, grid);
    const ClosedLoopSimulator<double> sim(model, sol);
    const auto noise = draw_noise(5, 0, grid, model.dims);
    const auto b = sim.run(ControlPolicy<double>::feedback(), noise);
    CHECK(b.X.col(0) == model.x0);
    CHECK(b.Xhat.col(0) == model.x0);
    CHECK(b.Y.col(0).isZero(0));
    CHECK(b.V.col(0).isZero(0));
    CHECK(b.Xtil.col(0).isZero(0));
    const double h = grid.step();
    for (Eigen::Index i = 0; i < 100; ++i) {
      const auto& s = sim.step_data(static_cast<std::size_t>(i));
      const VectorXd dV = b.V.col(i + 1) - b.V.col(i);
      const VectorXd law = s.H * b.Xtil.col(i) * h + s.K * noise.dW.col(i);
      CHECK((dV - law).norm() <= 1e-12 * (1.0 + dV.norm()));
      CHECK((b.Xtil.col(i + 1) - (b.X.col(i + 1) - b.Xhat.col(i + 1))).norm() == 0.0);
    }
  }

  TEST_CASE("discrete error identity on random models") {
    std::mt19937_64 rng(43);
    for (std::size_t trial = 0; trial < 12; ++trial) {
      const Dimensions dims{1 + trial % 3, 1 + trial % 2, 1 + (trial / 2) % 2, 1 + (trial / 3) % 2};
      const auto model = random_model(rng, dims, 1 + trial % 3);
      const TimeGrid<double> grid(1.0, 200);
      const auto sol = solve_all(model, grid);
      const ClosedLoopSimulator<double> sim(model, sol);
      for (std::uint64_t path = 0; path < 5; ++path) {
        const auto noise = draw_noise(11, path, grid, dims);
        for (const auto& policy :
             {ControlPolicy<double>::feedback(), ControlPolicy<double>::zero(),
              ControlPolicy<double>::perturbed_constant(VectorXd::Constant(static_cast<Eigen::Index>(dims.m), 0.3),
                                                        grid.nodes())}) {
          const auto b = sim.run(policy, noise);
          const MatrixXd direct = sim.run_error_direct(noise);
          CHECK(max_norm(b.Xtil - direct) <= 1e-10 * (1.0 + max_norm(b.X)));
        }
      }
    }
  }

  TEST_CASE("error recursion degenerate cases") {
    const TimeGrid<double> grid(1.0, 50);
    const auto model = scalar_benchmark();
    const auto sol = solve_all(model, grid);
    NoiseDraw<double> zero{grid, MatrixXd::Zero(1, 50), MatrixXd::Zero(1, 50)};
    CHECK(simulate_error_direct(model, sol, zero).isZero(0));

    ScalarParams p;
    p.D = 0;
    const auto m2 = scalar_model(p);
    const auto s2 = solve_all(m2, grid);
    CHECK(simulate_error_direct(m2, s2, draw_noise(1, 0, grid, m2.dims)).isZero(0));
  }

  TEST_CASE("feedback leaves no square residual") {
    const auto model = scalar_benchmark();
    const TimeGrid<double> grid(1.0, 100);
    const auto sol = solve_all(model, grid);
    const auto b = simulate_closed_loop(model, sol, ControlPolicy<double>::feedback(), draw_noise(9, 0, grid, model.dims));
    for (std::size_t i = 0; i < grid.nodes(); ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      CHECK(square_residual(grid.time(i), VectorXd(b.Xhat.col(c)), VectorXd(b.u.col(c)), sol, model) <= 1e-28);
    }
  }

  TEST_CASE("zero perturbation reproduces feedback bitwise") {
    std::mt19937_64 rng(47);
    const auto model = random_model(rng, {2, 2, 1, 2});
    const TimeGrid<double> grid(1.0, 80);
    const auto sol = solve_all(model, grid);
    const auto noise = draw_noise(13, 4, grid, model.dims);
    const auto a = simulate_closed_loop(model, sol, ControlPolicy<double>::feedback(), noise);
    const auto b = simulate_closed_loop(model, sol, ControlPolicy<double>::perturbed(MatrixXd::Zero(2, 81)), noise);
    CHECK(a.cost == b.cost);
    CHECK(a.X == b.X);
    CHECK(a.Xhat == b.Xhat);
  }

  TEST_CASE("open-loop control applies the table") {
    const auto model = scalar_benchmark();
    const TimeGrid<double> grid(1.0, 10);
    const auto sol = solve_all(model, grid);
    MatrixXd table(1, 11);
    for (Eigen::Index i = 0; i < 11; ++i) table(0, i) = 0.1 * static_cast<double>(i);
    const auto b = simulate_closed_loop(model, sol, ControlPolicy<double>::open_loop(table),
                                        draw_noise(1, 0, grid, model.dims));
    CHECK(b.u == table);
  }

  TEST_CASE("realized cost is the left Riemann sum plus terminal cost") {
    ScalarParams p;
    p.G = 0.5;
    p.g = 0.2;
    p.q = 0.1;
    const auto model = scalar_model(p);
    const TimeGrid<double> grid(1.0, 25);
    const auto sol = solve_all(model, grid);
    const auto b = simulate_closed_loop(model, sol, ControlPolicy<double>::feedback(), draw_noise(2, 3, grid, model.dims));
    double running = 0;
    for (std::size_t i = 0; i < 25; ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      running += running_cost(grid.time(i), VectorXd(b.X.col(c)), VectorXd(b.u.col(c)), model);
    }
    const double expected = running * grid.step() + terminal_cost(VectorXd(b.X.col(25)), model);
    CHECK(b.cost == doctest::Approx(expected).epsilon(1e-13));
  }

  TEST_CASE("blow-up and shape errors") {
    ScalarParams p;
    p.A = 1e200;
    p.D = 0;
    p.Q = 0;
    const auto model = scalar_model(p);
    const TimeGrid<double> grid(1.0, 10);
    const auto sol = solve_all(model, grid);
    try {
      simulate_closed_loop(model, sol, ControlPolicy<double>::zero(), draw_noise(1, 0, grid, model.dims));
      FAIL("expected NonFinite");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NonFinite);
      CHECK(e.node().has_value());
    }
    const auto bench = scalar_benchmark();
    const auto bsol = solve_all(bench, grid);
    CHECK_THROWS_AS(simulate_closed_loop(bench, bsol, ControlPolicy<double>::feedback(),
                                         draw_noise(1, 0, TimeGrid<double>(1.0, 20), bench.dims)),
                    Error);
    CHECK_THROWS_AS(simulate_closed_loop(bench, bsol, ControlPolicy<double>::open_loop(MatrixXd::Zero(1, 3)),
                                         draw_noise(1, 0, grid, bench.dims)),
                    Error);
  }
}
