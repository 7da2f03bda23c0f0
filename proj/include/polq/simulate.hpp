// Euler-Maruyama simulation of the state, the observation, the filter and
// the innovation under a control policy that only sees (t_i, xhat_i).
#pragma once

#include "polq/core.hpp"
#include "polq/detsolve.hpp"
#include "polq/model.hpp"
#include "polq/philox.hpp"
#include "polq/value.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace polq {

/// Brownian increments for one path. Column i holds the increment over
/// [t_i, t_{i+1}]: dW is d x steps, dWp is k x steps.
template <typename Scalar = double>
struct NoiseDraw {
  TimeGrid<Scalar> grid;
  Mat<Scalar> dW;
  Mat<Scalar> dWp;
};

/// Increments keyed by (seed, path_index, step, component); W components
/// come first, then W'.
template <typename Scalar = double>
NoiseDraw<Scalar> draw_noise(std::uint64_t seed, std::uint64_t path_index, const TimeGrid<Scalar>& grid,
                             const Dimensions& dims) {
  NoiseDraw<Scalar> noise;
  noise.grid = grid;
  const auto d = static_cast<Eigen::Index>(dims.d);
  const auto k = static_cast<Eigen::Index>(dims.k);
  const auto steps = static_cast<Eigen::Index>(grid.steps);
  noise.dW.resize(d, steps);
  noise.dWp.resize(k, steps);
  using std::sqrt;
  const double scale = static_cast<double>(sqrt(grid.step()));
  const Eigen::Index total = d + k;
  for (Eigen::Index s = 0; s < steps; ++s) {
    for (Eigen::Index c = 0; c < total; c += 2) {
      const auto [z0, z1] =
          normal_pair(seed, path_index, static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(c / 2));
      const double zs[2] = {z0, z1};
      for (Eigen::Index j = 0; j < 2 && c + j < total; ++j) {
        const Eigen::Index comp = c + j;
        const auto value = static_cast<Scalar>(scale * zs[j]);
        if (comp < d)
          noise.dW(comp, s) = value;
        else
          noise.dWp(comp - d, s) = value;
      }
    }
  }
  return noise;
}

/// Sums groups of `factor` consecutive increments: the same Brownian path
/// seen on a grid with steps / factor intervals.
template <typename Scalar>
NoiseDraw<Scalar> coarsen(const NoiseDraw<Scalar>& fine, std::size_t factor) {
  if (factor == 0 || fine.grid.steps % factor != 0)
    throw Error(Errc::ShapeMismatch, "coarsening factor must divide the step count");
  NoiseDraw<Scalar> out;
  out.grid = TimeGrid<Scalar>(fine.grid.T, fine.grid.steps / factor);
  const auto cols = static_cast<Eigen::Index>(out.grid.steps);
  const auto f = static_cast<Eigen::Index>(factor);
  out.dW = Mat<Scalar>::Zero(fine.dW.rows(), cols);
  out.dWp = Mat<Scalar>::Zero(fine.dWp.rows(), cols);
  for (Eigen::Index s = 0; s < cols; ++s)
    for (Eigen::Index j = 0; j < f; ++j) {
      out.dW.col(s) += fine.dW.col(s * f + j);
      out.dWp.col(s) += fine.dWp.col(s * f + j);
    }
  return out;
}

enum class PolicyKind { FilterFeedback, ZeroControl, OpenLoop, PerturbedFeedback };

constexpr std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::FilterFeedback: return "filter_feedback";
    case PolicyKind::ZeroControl: return "zero_control";
    case PolicyKind::OpenLoop: return "open_loop";
    case PolicyKind::PerturbedFeedback: return "perturbed_feedback";
  }
  return "unknown";
}

/// Admissible control policies. `table` is m x nodes (one column per grid
/// node) for OpenLoop and PerturbedFeedback and empty otherwise.
template <typename Scalar = double>
struct ControlPolicy {
  PolicyKind kind{PolicyKind::FilterFeedback};
  Mat<Scalar> table;
  std::string label;

  static ControlPolicy feedback() { return {PolicyKind::FilterFeedback, {}, "filter_feedback"}; }
  static ControlPolicy zero() { return {PolicyKind::ZeroControl, {}, "zero_control"}; }
  static ControlPolicy open_loop(Mat<Scalar> u) { return {PolicyKind::OpenLoop, std::move(u), "open_loop"}; }
  static ControlPolicy perturbed(Mat<Scalar> eps, std::string label = "perturbed_feedback") {
    return {PolicyKind::PerturbedFeedback, std::move(eps), std::move(label)};
  }
  /// Same offset at every node.
  static ControlPolicy perturbed_constant(const Vec<Scalar>& eps, std::size_t nodes,
                                          std::string label = "perturbed_feedback") {
    return perturbed(eps.replicate(1, static_cast<Eigen::Index>(nodes)), std::move(label));
  }
};

template <typename Scalar = double>
struct PathBundle {
  TimeGrid<Scalar> grid;
  Mat<Scalar> X;       // n x nodes
  Mat<Scalar> Y;       // d x nodes
  Mat<Scalar> Xhat;    // n x nodes
  Mat<Scalar> Xtil;    // n x nodes, X - Xhat
  Mat<Scalar> V;       // d x nodes, innovation
  Mat<Scalar> Vcheck;  // d x nodes, K^-1-normalized innovation
  Mat<Scalar> u;       // m x nodes, control applied on [t_i, t_{i+1})
  Scalar cost{0};
};

/// Coefficients and gains sampled once at the left endpoint of every step.
template <typename Scalar = double>
struct StepData {
  Mat<Scalar> A, B, C, D, H, K;
  Vec<Scalar> a, h;
  Mat<Scalar> Kinv;
  Mat<Scalar> gain;       // (Sigma H^T + C K^T) N^-1
  Mat<Scalar> Theta;
  Vec<Scalar> offset;     // -R^-1 (B^T phi + r)
  Mat<Scalar> curlyA;
  Mat<Scalar> error_dW;   // -Sigma (K^-1 H)^T
  CostSample<Scalar> cost;
};

/// Simulator bound to one model and its deterministic solution. Immutable
/// after construction; `run` may be called concurrently.
template <typename Scalar = double>
class ClosedLoopSimulator {
 public:
  ClosedLoopSimulator(const ModelSpec<Scalar>& model, const DeterministicSolution<Scalar>& sol)
      : model_(&model), grid_(sol.grid()) {
    check_shapes(model);
    if (grid_.T != model.T) throw Error(Errc::ShapeMismatch, "solution grid must span [0, T]");
    steps_.reserve(grid_.nodes());
    for (std::size_t i = 0; i < grid_.nodes(); ++i) {
      const Scalar t = grid_.time(i);
      const auto c = sample(model.coeffs, t);
      StepData<Scalar> s;
      s.A = c.A;
      s.B = c.B;
      s.C = c.C;
      s.D = c.D;
      s.H = c.H;
      s.K = c.K;
      s.a = c.a;
      s.h = c.h;
      s.Kinv = detail::solve_general<Scalar>(c.K, Mat<Scalar>::Identity(c.K.rows(), c.K.cols()),
                                             Errc::SingularK, "K");
      const Mat<Scalar> N = c.K * c.K.transpose();
      const Mat<Scalar> LT = detail::solve_spd<Scalar>(
          N, Mat<Scalar>((sol.Sigma[i] * c.H.transpose() + c.C * c.K.transpose()).transpose()),
          Errc::SingularN, "N");
      s.gain = LT.transpose();
      s.Theta = sol.Theta[i];
      s.cost = sample(model.cost, t);
      const Vec<Scalar> b = c.B.transpose() * sol.phi[i] + s.cost.r;
      s.offset = -detail::solve_spd<Scalar>(s.cost.R, b, Errc::SingularR, "R").col(0);
      s.curlyA = sol.curlyA[i];
      s.error_dW = -sol.Delta[i];
      steps_.push_back(std::move(s));
    }
  }

  const TimeGrid<Scalar>& grid() const { return grid_; }
  const StepData<Scalar>& step_data(std::size_t i) const { return steps_[i]; }

  /// Policy output at node i; sees only the filter state.
  Vec<Scalar> control(const ControlPolicy<Scalar>& policy, std::size_t i, const Vec<Scalar>& xhat) const {
    const auto& s = steps_[i];
    switch (policy.kind) {
      case PolicyKind::FilterFeedback: return s.Theta * xhat + s.offset;
      case PolicyKind::ZeroControl: return Vec<Scalar>::Zero(static_cast<Eigen::Index>(model_->dims.m));
      case PolicyKind::OpenLoop: return policy.table.col(static_cast<Eigen::Index>(i));
      case PolicyKind::PerturbedFeedback:
        return s.Theta * xhat + s.offset + policy.table.col(static_cast<Eigen::Index>(i));
    }
    throw Error(Errc::ShapeMismatch, "unknown policy kind");
  }

  PathBundle<Scalar> run(const ControlPolicy<Scalar>& policy, const NoiseDraw<Scalar>& noise) const {
    check_noise(noise);
    check_policy(policy);
    const auto& dims = model_->dims;
    const auto n = static_cast<Eigen::Index>(dims.n);
    const auto m = static_cast<Eigen::Index>(dims.m);
    const auto d = static_cast<Eigen::Index>(dims.d);
    const auto nodes = static_cast<Eigen::Index>(grid_.nodes());
    const Scalar h = grid_.step();

    PathBundle<Scalar> b;
    b.grid = grid_;
    b.X.resize(n, nodes);
    b.Y.resize(d, nodes);
    b.Xhat.resize(n, nodes);
    b.Xtil.resize(n, nodes);
    b.V.resize(d, nodes);
    b.Vcheck.resize(d, nodes);
    b.u.resize(m, nodes);
    b.X.col(0) = model_->x0;
    b.Y.col(0).setZero();
    b.Xhat.col(0) = model_->x0;
    b.Xtil.col(0).setZero();
    b.V.col(0).setZero();
    b.Vcheck.col(0).setZero();

    Vec<Scalar> u(m), dV(d), drift(n);
    Scalar running = 0;
    for (Eigen::Index i = 0; i + 1 < nodes; ++i) {
      const auto& s = steps_[static_cast<std::size_t>(i)];
      const auto x = b.X.col(i);
      const auto xhat = b.Xhat.col(i);
      const auto dW = noise.dW.col(i);
      const auto dWp = noise.dWp.col(i);

      u = control(policy, static_cast<std::size_t>(i), xhat);
      b.u.col(i) = u;
      running += running_cost(s.cost, Vec<Scalar>(x), u);

      drift.noalias() = s.A * x;
      drift.noalias() += s.B * u;
      drift += s.a;
      auto xn = b.X.col(i + 1);
      xn = x + h * drift;
      xn.noalias() += s.C * dW;
      xn.noalias() += s.D * dWp;

      auto yn = b.Y.col(i + 1);
      yn = b.Y.col(i) + h * s.h;
      yn.noalias() += h * (s.H * x);
      yn.noalias() += s.K * dW;

      // Same as dY - (H xhat + h) dt without cancellation in Y.
      dV.noalias() = h * (s.H * (x - xhat));
      dV.noalias() += s.K * dW;
      b.V.col(i + 1) = b.V.col(i) + dV;
      b.Vcheck.col(i + 1) = b.Vcheck.col(i);
      b.Vcheck.col(i + 1).noalias() += s.Kinv * dV;

      drift.noalias() = s.A * xhat;
      drift.noalias() += s.B * u;
      drift += s.a;
      auto xhn = b.Xhat.col(i + 1);
      xhn = xhat + h * drift;
      xhn.noalias() += s.gain * dV;

      b.Xtil.col(i + 1) = xn - xhn;
      if (!xn.allFinite() || !xhn.allFinite() || !yn.allFinite())
        throw Error(Errc::NonFinite, "path blew up at step " + std::to_string(i),
                    static_cast<std::size_t>(i + 1));
    }
    b.u.col(nodes - 1) = control(policy, grid_.steps, Vec<Scalar>(b.Xhat.col(nodes - 1)));
    b.cost = running * h + terminal_cost(Vec<Scalar>(b.X.col(nodes - 1)), *model_);
    return b;
  }

  /// Direct Euler recursion for the estimation error, started at zero.
  Mat<Scalar> run_error_direct(const NoiseDraw<Scalar>& noise) const {
    check_noise(noise);
    const auto n = static_cast<Eigen::Index>(model_->dims.n);
    const auto nodes = static_cast<Eigen::Index>(grid_.nodes());
    const Scalar h = grid_.step();
    Mat<Scalar> err(n, nodes);
    err.col(0).setZero();
    for (Eigen::Index i = 0; i + 1 < nodes; ++i) {
      const auto& s = steps_[static_cast<std::size_t>(i)];
      auto next = err.col(i + 1);
      next = err.col(i);
      next.noalias() += h * (s.curlyA * err.col(i));
      next.noalias() += s.error_dW * noise.dW.col(i);
      next.noalias() += s.D * noise.dWp.col(i);
      if (!next.allFinite())
        throw Error(Errc::NonFinite, "error path blew up at step " + std::to_string(i),
                    static_cast<std::size_t>(i + 1));
    }
    return err;
  }

 private:
  void check_noise(const NoiseDraw<Scalar>& noise) const {
    if (!(noise.grid == grid_)) throw Error(Errc::ShapeMismatch, "noise grid differs from solution grid");
    const auto steps = static_cast<Eigen::Index>(grid_.steps);
    if (noise.dW.rows() != static_cast<Eigen::Index>(model_->dims.d) || noise.dW.cols() != steps ||
        noise.dWp.rows() != static_cast<Eigen::Index>(model_->dims.k) || noise.dWp.cols() != steps)
      throw Error(Errc::ShapeMismatch, "noise arrays do not match dims and grid");
  }

  void check_policy(const ControlPolicy<Scalar>& policy) const {
    if (policy.kind != PolicyKind::OpenLoop && policy.kind != PolicyKind::PerturbedFeedback) return;
    if (policy.table.rows() != static_cast<Eigen::Index>(model_->dims.m) ||
        policy.table.cols() != static_cast<Eigen::Index>(grid_.nodes()))
      throw Error(Errc::ShapeMismatch, "policy table must be m x nodes");
    if (!policy.table.allFinite()) throw Error(Errc::NonFinite, "policy table is not finite");
  }

  const ModelSpec<Scalar>* model_;
  TimeGrid<Scalar> grid_;
  std::vector<StepData<Scalar>> steps_;
};

template <typename Scalar>
PathBundle<Scalar> simulate_closed_loop(const ModelSpec<Scalar>& model, const DeterministicSolution<Scalar>& sol,
                                        const ControlPolicy<Scalar>& policy, const NoiseDraw<Scalar>& noise) {
  return ClosedLoopSimulator<Scalar>(model, sol).run(policy, noise);
}

template <typename Scalar>
Mat<Scalar> simulate_error_direct(const ModelSpec<Scalar>& model, const DeterministicSolution<Scalar>& sol,
                                  const NoiseDraw<Scalar>& noise) {
  return ClosedLoopSimulator<Scalar>(model, sol).run_error_direct(noise);
}

}  // namespace polq
