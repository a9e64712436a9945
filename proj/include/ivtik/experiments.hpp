#pragma once

// Rate studies: deterministic (perturbed T and h, α = c·max{δ,γ}) and
// stochastic (kernel estimates from n samples), with error-bound checks and
// log-log slope fits.

#include "ivtik/config.hpp"
#include "ivtik/constraints.hpp"
#include "ivtik/operator.hpp"
#include "ivtik/synthesis.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ivtik {

struct FitResult {
  double slope = 0.0;
  double std_error = 0.0;
  double intercept = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;  // trailing points dropped at the floor
};

/// OLS of log y on log x. With exclude_floor, trailing points whose y is
/// within 2× of `floor` are dropped first.
FitResult fit_loglog(const std::vector<double>& x, const std::vector<double>& y, bool exclude_floor = false,
                     double floor = 0.0);

struct LevelResult {
  double level = 0.0;    // max{δ,γ} or n
  double delta = 0.0;    // achieved
  double gamma = 0.0;    // achieved
  double alpha = 0.0;
  double sigma = 0.0;    // stochastic only
  double error_sq = 0.0;         // ‖g_α − g†‖²_μ (median over replications)
  double error_q10 = 0.0;
  double error_q90 = 0.0;
  double misfit_sq = 0.0;        // ‖T(g_α − g†)‖²
  double op_error_sq = 0.0;      // ‖T̂ − T‖² (stochastic, median)
  double rhs_error_sq = 0.0;     // ‖ĥ − h‖² (stochastic, median)
  double bandwidth_check = 0.0;  // log(n) / (n σ^{2k+2})
  double bound_error = 0.0;      // bound on β‖g_α − g†‖²_μ
  double bound_misfit = 0.0;     // bound on ‖T(g_α − g†)‖²
  bool bound_applicable = false; // β > 0
  bool bound_ok = true;
  double restart_spread = 0.0;   // max − min objective over feasible restarts
  int replications = 1;
  int failures = 0;              // infeasible or failed solves
  bool failed = false;           // deterministic: infeasible; stochastic: > 50% failures
  std::vector<double> replicate_errors;
  std::vector<double> replicate_op_errors;
};

struct RateReport {
  ExperimentMode mode = ExperimentMode::deterministic;
  int k = 1;
  double mu = 1.0;
  std::vector<LevelResult> levels;
  bool has_floor = false;
  LevelResult floor;  // exact-data solve (deterministic)
  FitResult fit;
  bool fit_ok = false;
  std::string fit_error;
  double theoretical_slope = 0.0;
  double slope_tolerance = 0.0;
  bool slope_pass = false;
  bool bounds_pass = true;
  std::size_t bound_violations = 0;
  bool bandwidth_monotone = true;
  bool op_error_decreasing = true;
  OperatorConstants constants;
  std::optional<SourceConditionDiagnostic> diagnostic;
  std::size_t tau_samples = 0;
  bool pass = false;
};

/// Per-level bound for β‖g_α − g†‖²_μ and ‖T(g_α − g†)‖² given (β, C).
struct ErrorBounds {
  double error = 0.0;
  double misfit = 0.0;
};
ErrorBounds error_bounds(double alpha, double delta, double gamma, double C, const TruthNorms& truth,
                         double d_mult);

RateReport run_deterministic(const ExperimentConfig& config);
RateReport run_stochastic(const ExperimentConfig& config);
RateReport run_experiment(const ExperimentConfig& config);

}  // namespace ivtik
