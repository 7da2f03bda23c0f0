// Core aliases, the shared time grid, and the error type used across polq.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace polq {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Mat<double>;
using VectorXd = Vec<double>;

enum class Errc {
  ShapeMismatch,
  EmptyGrid,
  OutOfRange,
  NonFinite,
  PSDViolation,
  SingularR,
  SingularK,
  SingularN,
  InsufficientPaths,
  SyntaxError,
  ValidationFailure,
  UnknownField,
  Io,
  CheckFailure,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptyGrid: return "EmptyGrid";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::NonFinite: return "NonFinite";
    case Errc::PSDViolation: return "PSDViolation";
    case Errc::SingularR: return "SingularR";
    case Errc::SingularK: return "SingularK";
    case Errc::SingularN: return "SingularN";
    case Errc::InsufficientPaths: return "InsufficientPaths";
    case Errc::SyntaxError: return "SyntaxError";
    case Errc::ValidationFailure: return "ValidationFailure";
    case Errc::UnknownField: return "UnknownField";
    case Errc::Io: return "Io";
    case Errc::CheckFailure: return "CheckFailure";
  }
  return "Unknown";
}

/// Error raised by every polq operation. `node` carries the first offending
/// grid index for numerical failures.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, std::optional<std::size_t> node = std::nullopt)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), node_(node) {}

  Errc code() const noexcept { return code_; }
  std::optional<std::size_t> node() const noexcept { return node_; }

 private:
  Errc code_;
  std::optional<std::size_t> node_;
};

/// Uniform grid on [0, T] with `steps` intervals.
template <typename Scalar = double>
struct TimeGrid {
  Scalar T{1};
  std::size_t steps{1};

  TimeGrid() = default;
  TimeGrid(Scalar horizon, std::size_t n_steps) : T(horizon), steps(n_steps) {
    if (n_steps < 1) throw Error(Errc::EmptyGrid, "time grid needs at least one step");
    if (!(horizon > Scalar(0)) || !std::isfinite(static_cast<double>(horizon)))
      throw Error(Errc::OutOfRange, "horizon must be positive and finite");
  }

  std::size_t nodes() const noexcept { return steps + 1; }
  Scalar step() const noexcept { return T / static_cast<Scalar>(steps); }

  // The last node is T exactly; i*T/steps need not round to T.
  Scalar time(std::size_t i) const noexcept {
    if (i >= steps) return T;
    return T * static_cast<Scalar>(i) / static_cast<Scalar>(steps);
  }

  /// Nearest node index to t, clamped to the grid.
  std::size_t nearest(Scalar t) const noexcept {
    if (t <= Scalar(0)) return 0;
    if (t >= T) return steps;
    using std::round;
    return static_cast<std::size_t>(round(t / T * static_cast<Scalar>(steps)));
  }

  friend bool operator==(const TimeGrid& a, const TimeGrid& b) {
    return a.T == b.T && a.steps == b.steps;
  }
};

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

template <typename Scalar>
Mat<Scalar> symmetrized(const Mat<Scalar>& m) {
  return Scalar(0.5) * (m + m.transpose());
}

/// Smallest eigenvalue of the symmetric part of `m`.
template <typename Scalar>
Scalar min_eigenvalue(const Mat<Scalar>& m) {
  if (m.size() == 0) return Scalar(0);
  Eigen::SelfAdjointEigenSolver<Mat<Scalar>> es(symmetrized(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace polq
