#pragma once

// Order-l boundary-corrected kernels and the plug-in estimators of the joint
// and marginal densities, the operator T̂ and the right-hand side ĥ.
// All estimation runs in coordinates rescaled affinely to [0,1] per axis.

#include "ivtik/field.hpp"
#include "ivtik/operator.hpp"

#include <iosfwd>

namespace ivtik {

struct KernelSpec {
  int order = 2;
  double sigma = 0.2;
  double clip_floor = 1e-3;

  void validate() const;
};

/// K_t(v) = (Σ_{m<l} β_m v^m) base(v) on [max(-1,(t-1)/σ), min(1,t/σ)],
/// with ∫ v^j K_t = δ_{j0} for j < l. base is the biweight (15/16)(1-v²)².
class BoundaryKernel {
 public:
  BoundaryKernel(int order, double sigma, double t);

  double operator()(double v) const;
  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  const Eigen::VectorXd& coefficients() const noexcept { return beta_; }
  /// max |K_t| on its support, sampled finely.
  double sup_abs() const;
  /// ∫ v^j K_t(v) dv by Gauss-Legendre quadrature.
  double moment(int j) const;

  static double base(double v);

 private:
  double lo_ = -1.0;
  double hi_ = 1.0;
  Eigen::VectorXd beta_;
};

struct KernelSelfTest {
  int positions = 0;
  double max_defect = 0.0;  // max_{t, j<l} |∫ v^j K_t - δ_{j0}|
  bool support_ok = true;   // support is exactly [max(-1,(t-1)/σ), min(1,t/σ)]
};

/// Moment and support check at `positions` evenly spaced t in [0, 1].
KernelSelfTest kernel_self_test(int order, double sigma, int positions = 101);

/// Rows are observations. y: n×k, x: n×dim(Ω_X), w: n×dim(Ω_W).
struct Sample {
  Eigen::MatrixXd y;
  Eigen::MatrixXd x;
  Eigen::MatrixXd w;

  std::size_t size() const noexcept { return static_cast<std::size_t>(y.rows()); }
};

/// Header y (or y_0..y_{c-1}), x_0.., w_0...
void write_sample_csv(const Sample& s, std::ostream& out);
Sample read_sample_csv(std::istream& in);

struct ResponseAxis {
  double lo = 0.0;  // padded empirical range
  double hi = 1.0;
  Eigen::VectorXd nodes;    // raw y values
  Eigen::VectorXd weights;  // normalized trapezoid weights
};

/// Densities w.r.t. the normalized (unit-volume) measure on each domain.
struct DensityEstimates {
  Eigen::MatrixXd f_xw;               // source nodes × target nodes, clipped at 0
  Eigen::VectorXd f_w;                // target nodes, clipped at clip_floor
  std::vector<Eigen::MatrixXd> f_yw;  // per response channel: y nodes × target nodes
  std::vector<ResponseAxis> y_axes;
  double clip_floor = 0.0;
  std::size_t clipped_nodes = 0;  // target nodes where f_w hit the floor
  double kernel_sup = 0.0;        // sup |K_t| over all kernels used
};

/// Y-axis nodes per response channel; the range is padded by σ·range.
constexpr int kResponseNodes = 65;

DensityEstimates estimate_densities(const Sample& sample, const KernelSpec& spec, const Grid& x_grid,
                                    const Grid& w_grid, int y_nodes = kResponseNodes);

struct OperatorEstimate {
  DiscreteOperator T;
  GridFunction h;
  DensityEstimates densities;
};

OperatorEstimate estimate_operator(const Sample& sample, const KernelSpec& spec, const GridPtr& source,
                                   const GridPtr& target);

}  // namespace ivtik
