#pragma once

// Tikhonov functional ‖T g - h‖² + α‖g‖²_μ over the constraint set, its
// minimization by penalty continuation with projected gradient descent and
// seeded restarts, parameter-choice rules and the Bregman distance.

#include "ivtik/constraints.hpp"
#include "ivtik/error.hpp"
#include "ivtik/field.hpp"
#include "ivtik/operator.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ivtik {

/// Geometric grid of normalized prices covering {p/z} over the source grid.
GridPtr normalized_grid_for(const Grid& source, int resolution);

struct TikhonovProblem {
  DiscreteOperator op;   // T or T^δ on Ω_X -> Ω_W
  GridFunction rhs;      // h or h^γ on Ω_W, k channels
  double alpha = 1.0;
  SobolevWeight mu{1.0};
  GridPtr normalized;    // representation grid for g̃
  /// Off: unconstrained quadratic minimization (unique minimizer).
  bool constrained = true;

  void validate() const;
};

/// ‖T E g̃ - h‖² + α ‖E g̃‖²_μ with E the homogeneous expansion onto Ω_X.
double tikhonov_value(const GridFunction& gtilde, const TikhonovProblem& prob);
double data_misfit(const GridFunction& gtilde, const TikhonovProblem& prob);

struct SolverOptions {
  int restarts = 5;
  int stages = 20;  // augmented-Lagrangian outer iterations (upper bound)
  double initial_weight = 1.0;
  double weight_factor = 10.0;
  int max_iterations = 200;  // Gauss-Newton steps per stage
  double gradient_tolerance = 1e-6;
  double stall_tolerance = 1e-10;  // relative objective decrease per step
  double armijo = 1e-4;
  double feasibility_tolerance = 1e-4;
  double perturbation_std = 0.2;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  double degeneracy_tolerance = 1e-8;  // D(T) threshold when μ = 0
  bool trace = false;
};

struct TraceRow {
  int restart = 0;
  int stage = 0;
  int iteration = 0;
  double objective = 0.0;
  double penalty = 0.0;
  double step = 0.0;
};

struct SolveResult {
  SolveResult(GridFunction m, GridFunction e) : minimizer(std::move(m)), expanded(std::move(e)) {}

  GridFunction minimizer;  // g̃ on the normalized grid
  GridFunction expanded;   // E g̃ on Ω_X
  double objective = 0.0;
  double data_misfit = 0.0;
  double regularization = 0.0;  // ‖E g̃‖²_μ
  ConstraintReport penalty_residuals;
  int restarts = 0;
  int best_restart = 0;
  std::vector<double> restart_objectives;
  std::vector<bool> restart_feasible;
  bool converged = false;
  int iterations = 0;
  std::vector<TraceRow> trace;
};

class InfeasibleSolve : public Error {
 public:
  InfeasibleSolve(const std::string& what, SolveResult best)
      : Error(ErrorKind::infeasibility, what), best_(std::move(best)) {}
  const SolveResult& best() const noexcept { return best_; }

 private:
  SolveResult best_;
};

SolveResult solve(const TikhonovProblem& prob, const SolverOptions& opts = {});

/// Budget-feasible starting field g̃_i = 1/(k p̃_i).
GridFunction equal_share_field(const GridPtr& normalized, int k);

/// Drives g̃ into X by penalty continuation and projection alone (no data
/// term). Returns the final field; check feasibility with the report.
GridFunction restore_feasibility(const GridFunction& gtilde, const SolverOptions& opts);

/// Random feasible fields around g̃†: smooth perturbations at the given
/// radii (relative to ‖g̃†‖), projected into X. Infeasible draws are dropped.
std::vector<GridFunction> feasible_samples(const GridFunction& gdag_tilde, const std::vector<double>& radii,
                                           int per_radius, std::uint64_t seed, const SolverOptions& opts);

double choose_alpha_deterministic(double delta, double gamma, double c = 1.0);

struct StochasticParameters {
  double alpha = 0.0;
  double sigma = 0.0;
};

StochasticParameters choose_parameters_stochastic(long long n, int k, int rho, double c_alpha = 1.0,
                                                  double c_sigma = 1.0);

/// ‖g‖²_μ - ‖g†‖²_μ - ⟨2(μg† - Δg†), g - g†⟩.
double bregman_distance(const GridFunction& g, const GridFunction& gdag, SobolevWeight w,
                        double neumann_tolerance = 1e-6);

std::string to_key_value(const SolveResult& r);
void write_trace_csv(const SolveResult& r, std::ostream& out);

}  // namespace ivtik
