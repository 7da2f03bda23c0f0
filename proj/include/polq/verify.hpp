// Monte Carlo batch engine and the statistical checks that confront the
// simulator with the closed-form results. All bands are 3 standard errors
// plus, where stated, a discretization allowance measured by step halving.
#pragma once

#include "polq/detsolve.hpp"
#include "polq/model.hpp"
#include "polq/simulate.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace polq {

struct Estimate {
  double mean{0};
  double se{0};
};

/// Sample mean and standard error (sample std / sqrt(n)).
Estimate mean_se(std::span<const double> values);

struct ProbeStats {
  std::size_t node{0};
  double t{0};
  MatrixXd emp_error_cov;  // (1/N) sum Xtil Xtil^T
  MatrixXd cov_se;         // elementwise standard error
  MatrixXd Sigma;          // Sigma at the node
  double orth_mean{0};     // mean <Xtil, Xhat>
  double orth_se{0};
};

struct ComponentBrownianity {
  Estimate increment_mean;     // target 0
  Estimate increment_var;      // target h
  Estimate lag1_autocorr;      // target 0
  Estimate terminal_var;       // target T
};

struct BrownianityStats {
  std::size_t n_paths{0};
  std::size_t steps{0};
  double h{0};
  double T{0};
  std::vector<ComponentBrownianity> components;
  double qv_ratio{0};  // sum ||dVcheck||^2 / (n_paths d T)
};

/// Streaming accumulator for the normalized-innovation statistics. Feeding
/// paths in a fixed order gives bitwise-reproducible results.
class BrownianityAccumulator {
 public:
  BrownianityAccumulator(std::size_t d, const TimeGrid<double>& grid);
  void add(const MatrixXd& vcheck);
  void merge(const BrownianityAccumulator& other);
  BrownianityStats finish() const;

 private:
  struct Sums {
    double inc{0}, inc2{0}, inc4{0}, lag{0}, lag2{0}, term{0}, term2{0}, term4{0};
  };
  TimeGrid<double> grid_;
  std::size_t paths_{0};
  std::vector<Sums> sums_;
};

BrownianityStats brownianity_report(std::span<const PathBundle<double>> bundles);

struct BatchReport {
  std::size_t n_paths{0};
  std::size_t steps{0};
  std::string policy;
  double cost_mean{0};
  double cost_se{0};
  double analytic_value{0};
  std::vector<ProbeStats> probes;
  VectorXd innovation_increment_mean;
  double innovation_qv_ratio{0};
  BrownianityStats brownianity;
  Estimate J_hat;           // filtered-state cost
  Estimate J_tilde;         // estimation-error cost
  Estimate cross_residual;  // J - J_hat - J_tilde per path
  std::map<std::string, Estimate> per_policy_costs;
};

/// Simulates n_paths independent paths (seed, path index 0..n_paths-1).
/// `threads` only changes wall time, never the result.
BatchReport run_batch(const ModelSpec<double>& model, const DeterministicSolution<double>& sol,
                      const ControlPolicy<double>& policy, std::size_t n_paths, std::uint64_t seed,
                      const std::vector<std::size_t>& probe_nodes, unsigned threads = 1);

struct PolicyCost {
  std::string label;
  Estimate cost;
  Estimate excess_over_feedback;  // paired difference against FilterFeedback
};

/// Common random numbers across policies; sorted by ascending mean cost.
std::vector<PolicyCost> compare_policies(const ModelSpec<double>& model, const DeterministicSolution<double>& sol,
                                         const std::vector<ControlPolicy<double>>& policies, std::size_t n_paths,
                                         std::uint64_t seed, unsigned threads = 1);

struct DecompositionRecord {
  Estimate J;
  Estimate J_hat;
  Estimate J_tilde;
  Estimate residual;            // J_hat + J_tilde - J per path
  double tilde_J_analytic{0};
  double tilde_J_allowance{0};  // step-halving discretization allowance
  bool residual_ok{false};
  bool tilde_ok{false};
};

DecompositionRecord decomposition_check(const ModelSpec<double>& model, const DeterministicSolution<double>& sol,
                                        std::size_t n_paths, std::uint64_t seed, unsigned threads = 1);

/// Second moment of the Euler error recursion X~_{i+1} = (I + h curlyA) X~_i
/// - Delta dW + D dW', exact for the discrete scheme. With `refine` > 1 the
/// recursion runs on a grid refined by that factor (sol paths interpolated)
/// and one matrix per refined node is returned.
std::vector<MatrixXd> discrete_error_covariance(const ModelSpec<double>& model,
                                                const DeterministicSolution<double>& sol,
                                                std::size_t refine = 1);

/// Exact expectation of the realized path cost under the Euler scheme, from
/// the mean and covariance of (X, Xhat) propagated step by step. No sampling
/// error; differs from the continuous value only by discretization bias.
double expected_discrete_cost(const ModelSpec<double>& model, const DeterministicSolution<double>& sol,
                              const ControlPolicy<double>& policy);

/// Mean costs of one policy on grid h and h/2, driven by the same Brownian
/// paths (fine increments summed pairwise for the coarse grid).
struct StepHalvingStudy {
  std::size_t steps{0};
  Estimate coarse;        // cost on steps
  Estimate fine;          // cost on 2 * steps
  Estimate difference;    // coarse - fine, paired
  Estimate extrapolated;  // 2 fine - coarse, paired
  double allowance{0};    // C_h = 2 |mean difference|
};

StepHalvingStudy step_halving_cost(const ModelSpec<double>& model, const DeterministicSolution<double>& coarse_sol,
                                   const DeterministicSolution<double>& fine_sol,
                                   const ControlPolicy<double>& coarse_policy,
                                   const ControlPolicy<double>& fine_policy, std::size_t n_paths,
                                   std::uint64_t seed, unsigned threads = 1);

/// Same as above for the paired excess of `perturbed` over FilterFeedback.
StepHalvingStudy step_halving_excess(const ModelSpec<double>& model, const DeterministicSolution<double>& coarse_sol,
                                     const DeterministicSolution<double>& fine_sol,
                                     const ControlPolicy<double>& coarse_perturbed,
                                     const ControlPolicy<double>& fine_perturbed, std::size_t n_paths,
                                     std::uint64_t seed, unsigned threads = 1);

/// One line of the verification table.
struct CheckRow {
  std::string name;
  double estimate{0};
  double se{0};
  double target{0};
  double band{0};  // pass iff |estimate - target| <= band
  bool passed{false};
};

struct VerificationConfig {
  std::size_t n_paths{20000};
  std::uint64_t seed{20240607};
  std::vector<double> probe_times;  // empty: T/4, T/2, 3T/4, T
  double perturbation{0.5};         // constant offset added to every control component
  unsigned threads{1};
  double debug_sigma_scale{1.0};    // != 1 deliberately breaks the filter covariance
  double psd_rel{1e-9};
};

struct VerificationResult {
  BatchReport report;
  std::vector<CheckRow> checks;
  StepHalvingStudy value_study;
  StepHalvingStudy perturbation_study;
  DecompositionRecord decomposition;
  std::vector<PolicyCost> policies;
  bool passed() const;
  std::vector<std::string> failures() const;
};

/// Scales Sigma (and everything derived from it) for the failure-injection flag.
DeterministicSolution<double> with_scaled_sigma(const ModelSpec<double>& model,
                                                const DeterministicSolution<double>& sol, double scale);

/// The full suite: optimal value with step-halving allowance, error
/// covariance and orthogonality at probe nodes, innovation Brownianity,
/// strict suboptimality of perturbed and zero controls, cost decomposition.
VerificationResult run_verification(const ModelSpec<double>& model, const TimeGrid<double>& grid,
                                    const VerificationConfig& config);

}  // namespace polq
