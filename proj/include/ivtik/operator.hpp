#pragma once

// Discrete conditional-expectation operator T: L²(Ω_X) -> L²(Ω_W), its
// adjoint, norms, and the constants governing norm equivalence and the
// error bounds of the regularized solutions.

#include "ivtik/field.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ivtik {

/// kernel(j, i) = w_i f_XW(x_i, w_j) / f_W(w_j); applied channelwise.
class DiscreteOperator {
 public:
  DiscreteOperator(GridPtr source, GridPtr target, Eigen::MatrixXd kernel);

  const GridPtr& source() const noexcept { return source_; }
  const GridPtr& target() const noexcept { return target_; }
  const Eigen::MatrixXd& kernel() const noexcept { return kernel_; }

  /// max_j |Σ_i kernel(j,i) - 1|
  double row_sum_residual() const;

 private:
  GridPtr source_;
  GridPtr target_;
  Eigen::MatrixXd kernel_;
};

using JointDensity = std::function<double(const Eigen::VectorXd& x, const Eigen::VectorXd& w)>;
using MarginalDensity = std::function<double(const Eigen::VectorXd& w)>;

DiscreteOperator assemble_operator(const JointDensity& f_xw, const MarginalDensity& f_w,
                                   GridPtr source, GridPtr target);

GridFunction apply(const DiscreteOperator& T, const GridFunction& g);
/// Weighted transpose: ⟨Tg, u⟩_W = ⟨g, T*u⟩_X.
GridFunction adjoint_apply(const DiscreteOperator& T, const GridFunction& u);

struct PowerIterationOptions {
  double tolerance = 1e-10;
  int max_iterations = 10000;
};

/// Largest singular value of T between the quadrature-weighted L² spaces.
double operator_norm(const DiscreteOperator& T, PowerIterationOptions opts = {});
/// ‖A - B‖ on a common pair of grids.
double operator_distance(const DiscreteOperator& A, const DiscreteOperator& B,
                         PowerIterationOptions opts = {});

struct DConstant {
  double value = 0.0;        // ‖T1‖
  double sampled_min = 0.0;  // min over random unit c of ‖T(c·1)‖
};

/// D(T) = min over unit constants c of ‖T c‖.
DConstant d_constant(const DiscreteOperator& T, int channels, std::uint64_t seed = 1,
                     int samples = 100);

/// C in ‖g - Pg‖ ≤ C ‖∇g‖: 1/sqrt of the smallest nonzero eigenvalue of the
/// discrete Neumann Laplacian on the grid.
double poincare_constant(const Grid& grid);

struct OperatorConstants {
  double op_norm = 0.0;
  double d_const = 0.0;
  double poincare_c = 0.0;
  double a_const = 0.0;  // 2(C + 1)

  static OperatorConstants make(double op_norm, double d_const, double poincare_c);
};

OperatorConstants compute_constants(const DiscreteOperator& T, int channels);

/// ‖g‖_T² = ‖g‖_μ² + ‖Tg‖².
double t_norm(const DiscreteOperator& T, const GridFunction& g, SobolevWeight w);

struct EquivalenceReport {
  double mu = 0.0;
  std::size_t fields = 0;
  // ‖g‖_T ≤ upper_factor ‖g‖_H¹ with upper_factor = ‖T‖
  double upper_factor = 0.0;
  double worst_upper_ratio = 0.0;
  std::size_t upper_violations = 0;
  // ‖g‖_T ≤ sqrt(max(μ,1) + ‖T‖²) ‖g‖_H¹, which holds for every operator
  double corrected_upper_factor = 0.0;
  double worst_corrected_upper_ratio = 0.0;
  std::size_t corrected_upper_violations = 0;
  // ‖g‖_H¹ ≤ lower_factor ‖g‖_T
  double lower_factor = 0.0;
  double worst_lower_ratio = 0.0;
  std::size_t lower_violations = 0;
};

/// Evaluates both sides of the norm-equivalence inequalities on the given
/// fields (ratios are lhs / (factor * rhs); a violation is a ratio above
/// 1 + tolerance).
EquivalenceReport equivalence_bounds(const DiscreteOperator& T, SobolevWeight w,
                                     const OperatorConstants& consts,
                                     const std::vector<GridFunction>& fields,
                                     double tolerance = 1e-8);

/// Smooth random test fields on the source grid.
std::vector<GridFunction> random_fields(const GridPtr& grid, int channels, std::size_t count,
                                        std::uint64_t seed);

struct TruthNorms {
  double l2 = 0.0;       // ‖g†‖
  double mu_norm = 0.0;  // ‖g†‖_μ
  double grad = 0.0;     // ‖∇g†‖
};

/// D_μ for μ > 0, D_0 for μ = 0.
double error_multiplier(SobolevWeight w, double alpha, double delta, double gamma,
                        const TruthNorms& gdag, const OperatorConstants& consts, double h_norm);

/// kernel.csv (W rows × X columns) plus kernel.meta (key=value).
void export_operator(const DiscreteOperator& T, const std::string& csv_path,
                     const std::string& meta_path);

}  // namespace ivtik
