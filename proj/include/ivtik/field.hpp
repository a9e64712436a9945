#pragma once

// Tensor-grid discretization of the box domains, grid-function arithmetic,
// finite-difference operators and the weighted Sobolev norms.

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <array>
#include <cstddef>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace ivtik {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

/// Price and budget axes must stay inside the positive orthant; instrument
/// and response axes may touch zero.
enum class AxisRole { positive, free };

/// Geometric axes have nodes equally spaced in log-coordinate. They are used
/// for the normalized-price parameterization of demand fields.
enum class AxisSpacing { uniform, geometric };

class Grid {
 public:
  /// Uniform nodes per axis with normalized trapezoidal weights.
  static Grid build(const std::vector<Interval>& bounds, const std::vector<int>& resolution,
                    AxisRole role = AxisRole::positive);
  /// Nodes equally spaced in log(x); requires lo > 0 on every axis.
  static Grid build_geometric(const std::vector<Interval>& bounds,
                              const std::vector<int>& resolution);

  std::size_t dim() const noexcept { return axes_.size(); }
  std::size_t size() const noexcept { return weights_.size(); }
  int resolution(std::size_t axis) const { return static_cast<int>(axes_[axis].size()); }
  const std::vector<double>& axis_nodes(std::size_t axis) const { return axes_[axis]; }
  const Interval& bounds(std::size_t axis) const { return bounds_[axis]; }
  AxisSpacing spacing(std::size_t axis) const { return spacing_[axis]; }
  AxisRole role() const noexcept { return role_; }

  /// Step in the axis' native coordinate: x for uniform axes, log(x) for
  /// geometric axes.
  double step(std::size_t axis) const { return steps_[axis]; }

  /// Quadrature weights in flat node order; they sum to one.
  const Eigen::VectorXd& weights() const noexcept { return weights_; }

  /// Row-major flattening: the first axis varies slowest.
  std::size_t flat_index(const std::vector<int>& multi) const;
  std::vector<int> multi_index(std::size_t flat) const;
  std::size_t stride(std::size_t axis) const { return strides_[axis]; }
  double coordinate(std::size_t flat, std::size_t axis) const;
  Eigen::VectorXd point(std::size_t flat) const;

  bool is_boundary(std::size_t flat) const;
  bool is_interior(std::size_t flat) const { return !is_boundary(flat); }

  bool operator==(const Grid& other) const;

 private:
  Grid() = default;
  void finish();

  std::vector<std::vector<double>> axes_;
  std::vector<Interval> bounds_;
  std::vector<AxisSpacing> spacing_;
  std::vector<double> steps_;
  std::vector<std::size_t> strides_;
  AxisRole role_ = AxisRole::positive;
  Eigen::VectorXd weights_;
};

using GridPtr = std::shared_ptr<const Grid>;

inline GridPtr make_grid(Grid grid) { return std::make_shared<const Grid>(std::move(grid)); }

bool same_grid(const GridPtr& a, const GridPtr& b);

/// Sampled vector-valued function: values(node, channel).
class GridFunction {
 public:
  GridFunction(GridPtr grid, Eigen::MatrixXd values);
  static GridFunction zeros(GridPtr grid, int channels);
  static GridFunction constant(GridPtr grid, const Eigen::VectorXd& value);

  const GridPtr& grid() const noexcept { return grid_; }
  int channels() const noexcept { return static_cast<int>(values_.cols()); }
  std::size_t size() const noexcept { return static_cast<std::size_t>(values_.rows()); }
  const Eigen::MatrixXd& values() const noexcept { return values_; }
  Eigen::MatrixXd& values() noexcept { return values_; }

  GridFunction& operator+=(const GridFunction& other);
  GridFunction& operator-=(const GridFunction& other);
  GridFunction& operator*=(double s);

 private:
  GridPtr grid_;
  Eigen::MatrixXd values_;
};

GridFunction operator+(GridFunction a, const GridFunction& b);
GridFunction operator-(GridFunction a, const GridFunction& b);
GridFunction operator*(double s, GridFunction a);

struct SobolevWeight {
  double mu = 1.0;
  explicit SobolevWeight(double m = 1.0);
};

void require_same_shape(const GridFunction& f, const GridFunction& g, const char* where);

/// Nodal second-order derivative along one axis, in physical coordinates:
/// central differences inside, one-sided three-point stencils on the boundary.
Eigen::SparseMatrix<double> derivative_matrix(const Grid& grid, std::size_t axis);

/// Gradient with channels*dim components; component c*dim + a holds d f_c / d x_a.
GridFunction gradient(const GridFunction& f);

/// Second differences per axis with ghost-node reflection (f_{-1} = f_1) on
/// the boundary, i.e. the Neumann Laplacian. Uniform axes only.
GridFunction laplacian(const GridFunction& f);

/// Sparse stiffness matrix K of the Dirichlet energy fᵀKf, assembled from
/// forward differences on cells with the matching product weights. The
/// Neumann Laplacian above equals -diag(w)^{-1} K exactly.
Eigen::SparseMatrix<double> stiffness_matrix(const Grid& grid);

double inner_l2(const GridFunction& f, const GridFunction& g);
double norm_l2(const GridFunction& f);

/// ‖∇f‖² on the staggered cells (see stiffness_matrix).
double gradient_norm_sq(const GridFunction& f);
double sobolev_mu_norm_sq(const GridFunction& f, SobolevWeight w);
/// Standard H¹ norm, i.e. the μ = 1 case.
double h1_norm(const GridFunction& f);

/// Largest magnitude of the one-sided normal derivative over boundary nodes.
double neumann_defect(const GridFunction& f);
/// Largest |∂f/∂x_a| over all nodes, axes and channels (nodal gradient).
double max_abs_gradient(const GridFunction& f);
/// Overwrites each boundary layer so the one-sided normal derivative vanishes.
GridFunction enforce_discrete_neumann(GridFunction f);

/// Interpolation matrix from a normalized-price grid (k axes) onto a target
/// grid over (p_1..p_k, z): row r holds the multilinear weights at p/z.
Eigen::SparseMatrix<double> expansion_matrix(const Grid& normalized, const Grid& target);

/// output(p, z) = gtilde(p / z). Throws extent error when some p/z leaves
/// the normalized grid.
GridFunction expand_homogeneous(const GridFunction& gtilde, const GridPtr& target);

/// Shortest round-trip decimal.
std::string format_double(double v);

/// CSV: axis_0..axis_{d-1}, ch_0..ch_{c-1}, one row per node in flat order.
void write_csv(const GridFunction& f, std::ostream& out);
/// Rebuilds the grid from the coordinate columns (uniform or geometric axes).
GridFunction read_csv(std::istream& in, AxisRole role = AxisRole::positive);

}  // namespace ivtik
