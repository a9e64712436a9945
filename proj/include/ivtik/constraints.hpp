#pragma once

// The integrability constraint set X: nonnegativity, 0-homogeneity, budget,
// Slutsky symmetry and negative semidefiniteness. Membership reports, the
// exterior penalty used by the solver, and the proximal-normal-cone and
// source-condition diagnostics.

#include "ivtik/field.hpp"
#include "ivtik/operator.hpp"

#include <limits>
#include <string>
#include <vector>

namespace ivtik {

/// Per-node k×k matrices. Derivative-based constraints are only imposed at
/// interior nodes; boundary matrices use one-sided differences.
struct SlutskyField {
  GridPtr grid;
  std::vector<Eigen::MatrixXd> matrices;
};

/// S_ij = ∂g_i/∂p_j + ∂g_i/∂z · g_j for g on a grid over (p_1..p_k, z).
SlutskyField slutsky(const GridFunction& g);

/// Normalized form on a k-dim grid of p̃ = p/z:
/// S̃_ij = ∂_j g̃_i - (Σ_m p̃_m ∂_m g̃_i) g̃_j, with S(p, z) = S̃(p/z) / z.
SlutskyField slutsky_normalized(const GridFunction& gtilde);

struct ConstraintTolerances {
  double nonneg = 1e-6;
  double budget = 1e-6;
  double homogeneity = 1e-6;
  double asym = 1e-6;
  double psd = 1e-6;

  static ConstraintTolerances uniform(double tol) { return {tol, tol, tol, tol, tol}; }
};

struct ConstraintReport {
  double nonneg_violation = 0.0;
  double budget_violation = 0.0;
  double homogeneity_violation = 0.0;
  double slutsky_asym = 0.0;
  double slutsky_psd_excess = 0.0;
  bool member = false;
};

/// g on a grid over (p, z).
ConstraintReport check_membership(const GridFunction& g, const ConstraintTolerances& tol = {});
/// g̃ on the normalized grid; budget is |⟨p̃,g̃⟩ - 1| and Slutsky metrics are
/// those of S̃ (the z = 1 slice). Homogeneity holds by representation.
ConstraintReport check_membership_normalized(const GridFunction& gtilde,
                                             const ConstraintTolerances& tol = {});

struct PenaltyWeights {
  double nonneg = 1.0;
  double budget = 1.0;
  double asym = 1.0;
  double nsd = 1.0;
};

struct PenaltyResult {
  double value = 0.0;
  GridFunction gradient;
};

/// Quadrature-weighted exterior penalty on the normalized representation:
/// w1 Σ max(0,-g)² + w2 Σ (⟨p̃,g̃⟩-1)² + w3 Σ ‖S̃-S̃ᵀ‖²_F + w4 Σ max(0,λ(sym S̃))².
PenaltyResult penalty(const GridFunction& gtilde, const PenaltyWeights& weights);

/// Scaled multipliers of the augmented Lagrangian: with a shift the Slutsky
/// terms read w3 Σ ‖S̃-S̃ᵀ+U‖²_F and w4 Σ ‖Π₊(sym S̃ + V)‖²_F, Π₊ the PSD part.
struct PenaltyShift {
  std::vector<Eigen::MatrixXd> asym;  // per node; empty means zero
  std::vector<Eigen::MatrixXd> nsd;
};

/// penalty() with the derivative operators built once per grid.
class PenaltyEvaluator {
 public:
  explicit PenaltyEvaluator(GridPtr normalized);

  PenaltyResult operator()(const Eigen::MatrixXd& values, const PenaltyWeights& weights,
                           const PenaltyShift* shift = nullptr) const;
  /// U += S̃-S̃ᵀ and V = Π₊(sym S̃ + V) at interior nodes.
  void update_shift(const Eigen::MatrixXd& values, PenaltyShift& shift) const;
  /// JᵀJ of the Slutsky residuals (the Gauss-Newton half-Hessian of the
  /// penalty), indexed by n + N·i for node n and channel i.
  Eigen::SparseMatrix<double> gauss_newton(const Eigen::MatrixXd& values, const PenaltyWeights& weights,
                                           const PenaltyShift* shift = nullptr) const;

 private:
  GridPtr grid_;
  std::vector<Eigen::SparseMatrix<double>> D_;
  std::vector<Eigen::SparseMatrix<double, Eigen::RowMajor>> Drow_;
  Eigen::MatrixXd P_;
  std::vector<Eigen::Index> interior_;
};

/// Per-node Euclidean projection onto {g ≥ 0, ⟨p̃, g⟩ = 1}.
GridFunction project_budget(const GridFunction& gtilde);
/// Projection of y onto {g ≥ 0, ⟨p, g⟩ = 1} for one node.
Eigen::VectorXd project_budget_node(const Eigen::VectorXd& y, const Eigen::VectorXd& p);

/// max(0, max_g ⟨ζ, g-g†⟩ / ‖g-g†‖²) over samples distinct from g†: a lower
/// bound on the proximal-normal constant τ(ζ, g†). Samples within 1e-10(1 + ‖g†‖)
/// of g† count as copies of it.
double tau_estimate(const GridFunction& zeta, const GridFunction& gdag,
                    const std::vector<GridFunction>& samples);

struct SourceConditionDiagnostic {
  GridFunction omega;
  GridFunction zeta;
  double omega_norm = 0.0;
  double residual_norm = 0.0;  // ‖ζ‖
  double tau_hat = 0.0;
  double e_const = 0.0;
  double beta = 0.0;
  bool smallness_ok = false;  // beta > 0
  double neumann_defect = 0.0;
};

struct SourceFitOptions {
  double ridge = 1e-10;
  /// Boundary normal-derivative tolerance, relative to max |∇g†|.
  double neumann_tolerance = 1e-6;
  bool require_neumann = true;
};

/// r = 2(μg† - Δg†) = T*ω + ζ with ω from ridge-stabilized normal equations.
/// τ is estimated for -ζ, the sign under which ⟨-ζ, g-g†⟩ ≤ τ‖g-g†‖² is the
/// inequality the error estimate consumes.
SourceConditionDiagnostic source_condition_fit(const GridFunction& gdag, const DiscreteOperator& T,
                                               SobolevWeight w, const OperatorConstants& consts,
                                               const std::vector<GridFunction>& samples,
                                               const SourceFitOptions& opts = {});

struct VariationalReport {
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // samples with ‖T(g-g†)‖ ≥ s
  std::size_t violations = 0;
  double worst_margin = -std::numeric_limits<double>::infinity();  // max lhs - rhs
};

/// β‖g-g†‖²_μ ≤ ‖g‖²_μ - ‖g†‖²_μ + C‖T(g-g†)‖ for each sample with
/// ‖T(g-g†)‖ < s.
VariationalReport variational_inequality_check(const GridFunction& gdag, double beta, double C,
                                               SobolevWeight w, const DiscreteOperator& T,
                                               const std::vector<GridFunction>& samples,
                                               double s = std::numeric_limits<double>::infinity());

std::string to_key_value(const ConstraintReport& r);
std::string csv_header(const ConstraintReport&);
std::string csv_row(const ConstraintReport& r);
std::string to_key_value(const SourceConditionDiagnostic& d);
std::string csv_header(const SourceConditionDiagnostic&);
std::string csv_row(const SourceConditionDiagnostic& d);

}  // namespace ivtik
