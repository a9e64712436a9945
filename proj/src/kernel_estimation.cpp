#include "ivtik/kernel_estimation.hpp"

#include "ivtik/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace ivtik {

void KernelSpec::validate() const {
  if (order < 2) throw Error(ErrorKind::configuration, "kernel order must be at least 2");
  if (!(sigma > 0.0 && sigma < 1.0)) throw Error(ErrorKind::configuration, "bandwidth must lie in (0, 1)");
  if (!(clip_floor > 0.0)) throw Error(ErrorKind::configuration, "clip floor must be positive");
}

double BoundaryKernel::base(double v) {
  if (v < -1.0 || v > 1.0) return 0.0;
  const double s = 1.0 - v * v;
  return 15.0 / 16.0 * s * s;
}

namespace {

// ∫_a^b v^p base(v) dv in closed form.
double base_moment(int p, double a, double b) {
  auto mono = [&](int q) { return (std::pow(b, q + 1) - std::pow(a, q + 1)) / (q + 1); };
  return 15.0 / 16.0 * (mono(p) - 2.0 * mono(p + 2) + mono(p + 4));
}

}  // namespace

BoundaryKernel::BoundaryKernel(int order, double sigma, double t) {
  lo_ = std::max(-1.0, (t - 1.0) / sigma);
  hi_ = std::min(1.0, t / sigma);
  if (!(hi_ > lo_)) throw Error(ErrorKind::bandwidth, "empty boundary-kernel support at t = " + format_double(t));
  Eigen::MatrixXd M(order, order);
  for (int j = 0; j < order; ++j)
    for (int m = 0; m < order; ++m) M(j, m) = base_moment(j + m, lo_, hi_);
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
  if (lu.rank() < order || lu.rcond() < 1e-13) {
    throw Error(ErrorKind::bandwidth, "singular moment system at t = " + format_double(t) +
                                          " (sigma " + format_double(sigma) + ")");
  }
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(order);
  e0[0] = 1.0;
  beta_ = lu.solve(e0);
}

double BoundaryKernel::operator()(double v) const {
  if (v < lo_ || v > hi_) return 0.0;
  double poly = 0.0;
  for (Eigen::Index m = beta_.size() - 1; m >= 0; --m) poly = poly * v + beta_[m];
  return poly * base(v);
}

double BoundaryKernel::sup_abs() const {
  double best = 0.0;
  constexpr int kSteps = 2000;
  for (int s = 0; s <= kSteps; ++s) best = std::max(best, std::abs((*this)(lo_ + (hi_ - lo_) * s / kSteps)));
  return best;
}

double BoundaryKernel::moment(int j) const {
  // Gauss-Legendre (Golub-Welsch); exact for polynomial × biweight of degree < 40
  constexpr int m = 20;
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, m);
  for (int i = 1; i < m; ++i) J(i, i - 1) = J(i - 1, i) = i / std::sqrt(4.0 * i * i - 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  double acc = 0.0;
  for (int i = 0; i < m; ++i) {
    const double v = 0.5 * (hi_ - lo_) * es.eigenvalues()[i] + 0.5 * (hi_ + lo_);
    const double e0 = es.eigenvectors()(0, i);
    acc += (hi_ - lo_) * e0 * e0 * std::pow(v, j) * (*this)(v);
  }
  return acc;
}

KernelSelfTest kernel_self_test(int order, double sigma, int positions) {
  if (positions < 2) throw Error(ErrorKind::input, "kernel self-test needs at least 2 positions");
  KernelSelfTest r;
  r.positions = positions;
  for (int s = 0; s < positions; ++s) {
    const double t = static_cast<double>(s) / (positions - 1);
    const BoundaryKernel K(order, sigma, t);
    for (int j = 0; j < order; ++j) r.max_defect = std::max(r.max_defect, std::abs(K.moment(j) - (j == 0 ? 1.0 : 0.0)));
    r.support_ok = r.support_ok && K.lo() == std::max(-1.0, (t - 1.0) / sigma) && K.hi() == std::min(1.0, t / sigma) &&
                   K(std::nextafter(K.lo(), -2.0)) == 0.0 && K(std::nextafter(K.hi(), 2.0)) == 0.0;
  }
  return r;
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

double parse_cell(const std::string& cell, std::size_t line) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  while (first < last && *first == ' ') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw Error(ErrorKind::input, "line " + std::to_string(line) + ": cannot parse '" + cell + "'");
  }
  return v;
}

}  // namespace

void write_sample_csv(const Sample& s, std::ostream& out) {
  const auto ky = s.y.cols();
  if (ky == 1) {
    out << "y";
  } else {
    for (Eigen::Index c = 0; c < ky; ++c) out << (c ? "," : "") << "y_" << c;
  }
  for (Eigen::Index a = 0; a < s.x.cols(); ++a) out << ",x_" << a;
  for (Eigen::Index a = 0; a < s.w.cols(); ++a) out << ",w_" << a;
  out << '\n';
  for (Eigen::Index i = 0; i < s.y.rows(); ++i) {
    for (Eigen::Index c = 0; c < ky; ++c) out << (c ? "," : "") << format_double(s.y(i, c));
    for (Eigen::Index a = 0; a < s.x.cols(); ++a) out << ',' << format_double(s.x(i, a));
    for (Eigen::Index a = 0; a < s.w.cols(); ++a) out << ',' << format_double(s.w(i, a));
    out << '\n';
  }
}

Sample read_sample_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::input, "line 1: missing sample header");
  const auto header = split(line);
  Eigen::Index ny = 0, nx = 0, nw = 0;
  for (const auto& h : header) {
    if (h == "y" || h.rfind("y_", 0) == 0) ++ny;
    else if (h.rfind("x_", 0) == 0) ++nx;
    else if (h.rfind("w_", 0) == 0) ++nw;
    else throw Error(ErrorKind::input, "line 1: unknown column '" + h + "'");
  }
  if (ny == 0 || nx == 0 || nw == 0) throw Error(ErrorKind::input, "line 1: need y, x_* and w_* columns");
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorKind::input, "line " + std::to_string(lineno) + ": expected " +
                                        std::to_string(header.size()) + " columns");
    }
    std::vector<double> r;
    r.reserve(cells.size());
    for (const auto& c : cells) r.push_back(parse_cell(c, lineno));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw Error(ErrorKind::input, "sample file has no rows");
  const auto n = static_cast<Eigen::Index>(rows.size());
  Sample s{Eigen::MatrixXd(n, ny), Eigen::MatrixXd(n, nx), Eigen::MatrixXd(n, nw)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (Eigen::Index c = 0; c < ny; ++c) s.y(i, c) = r[static_cast<std::size_t>(c)];
    for (Eigen::Index a = 0; a < nx; ++a) s.x(i, a) = r[static_cast<std::size_t>(ny + a)];
    for (Eigen::Index a = 0; a < nw; ++a) s.w(i, a) = r[static_cast<std::size_t>(ny + nx + a)];
  }
  return s;
}

namespace {

constexpr Eigen::Index kBlock = 2048;

// Column of sample coordinates rescaled to [0,1].
Eigen::VectorXd rescale(const Eigen::VectorXd& raw, double lo, double hi, const char* what) {
  Eigen::VectorXd t = (raw.array() - lo) / (hi - lo);
  const double slack = 1e-12;
  if (t.minCoeff() < -slack || t.maxCoeff() > 1.0 + slack) {
    throw Error(ErrorKind::input, std::string(what) + " observation outside its domain");
  }
  return t.cwiseMax(0.0).cwiseMin(1.0);
}

// Per-axis kernel evaluation: rows are axis nodes, columns are observations
// of the current block; entries K_t((t - s)/σ)/σ.
struct AxisKernels {
  std::vector<double> nodes;  // rescaled node positions
  std::vector<BoundaryKernel> kernels;
  Eigen::VectorXd samples;  // rescaled observations

  AxisKernels(std::vector<double> t, int order, double sigma, Eigen::VectorXd s)
      : nodes(std::move(t)), samples(std::move(s)) {
    kernels.reserve(nodes.size());
    for (double tn : nodes) kernels.emplace_back(order, sigma, tn);
  }

  Eigen::MatrixXd block(Eigen::Index b0, Eigen::Index len, double sigma) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(nodes.size()), len);
    for (std::size_t r = 0; r < nodes.size(); ++r) {
      for (Eigen::Index i = 0; i < len; ++i) {
        out(static_cast<Eigen::Index>(r), i) = kernels[r]((nodes[r] - samples[b0 + i]) / sigma) / sigma;
      }
    }
    return out;
  }

  double sup() const {
    double s = 0.0;
    for (const auto& k : kernels) s = std::max(s, k.sup_abs());
    return s;
  }
};

std::vector<AxisKernels> grid_kernels(const Grid& g, const Eigen::MatrixXd& obs, const KernelSpec& spec,
                                      const char* what) {
  if (obs.cols() != static_cast<Eigen::Index>(g.dim())) {
    throw Error(ErrorKind::shape, std::string(what) + " columns do not match the grid dimension");
  }
  std::vector<AxisKernels> out;
  for (std::size_t a = 0; a < g.dim(); ++a) {
    const auto& b = g.bounds(a);
    std::vector<double> t;
    for (double x : g.axis_nodes(a)) t.push_back(std::clamp((x - b.lo) / (b.hi - b.lo), 0.0, 1.0));
    out.emplace_back(std::move(t), spec.order, spec.sigma,
                     rescale(obs.col(static_cast<Eigen::Index>(a)), b.lo, b.hi, what));
  }
  return out;
}

// Tensor-product kernel rows for every grid node over one block.
Eigen::MatrixXd tensor_block(const Grid& g, const std::vector<AxisKernels>& axes, Eigen::Index b0,
                             Eigen::Index len, double sigma) {
  std::vector<Eigen::MatrixXd> per_axis;
  for (const auto& ax : axes) per_axis.push_back(ax.block(b0, len, sigma));
  Eigen::MatrixXd out(static_cast<Eigen::Index>(g.size()), len);
  for (std::size_t n = 0; n < g.size(); ++n) {
    const auto m = g.multi_index(n);
    auto row = out.row(static_cast<Eigen::Index>(n));
    row = per_axis[0].row(m[0]);
    for (std::size_t a = 1; a < per_axis.size(); ++a) row.array() *= per_axis[a].row(m[a]).array();
  }
  return out;
}

}  // namespace

DensityEstimates estimate_densities(const Sample& sample, const KernelSpec& spec, const Grid& x_grid,
                                    const Grid& w_grid, int y_nodes) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(sample.size());
  if (n == 0) throw Error(ErrorKind::input, "empty sample");
  if (sample.x.rows() != n || sample.w.rows() != n) throw Error(ErrorKind::shape, "sample columns differ in length");
  if (y_nodes < 3) throw Error(ErrorKind::configuration, "response axis needs at least 3 nodes");

  const auto xk = grid_kernels(x_grid, sample.x, spec, "x");
  const auto wk = grid_kernels(w_grid, sample.w, spec, "w");

  DensityEstimates d;
  d.clip_floor = spec.clip_floor;
  std::vector<AxisKernels> yk;
  for (Eigen::Index c = 0; c < sample.y.cols(); ++c) {
    const Eigen::VectorXd y = sample.y.col(c);
    const double lo = y.minCoeff(), hi = y.maxCoeff();
    const double range = hi - lo;
    double pad = spec.sigma * range;
    if (!(pad > 0.0)) pad = spec.sigma * std::abs(hi);
    if (!(pad > 0.0)) pad = spec.sigma;
    ResponseAxis ax;
    ax.lo = lo - pad;
    ax.hi = hi + pad;
    const Grid yg = Grid::build({{ax.lo, ax.hi}}, {y_nodes}, AxisRole::free);
    ax.nodes = Eigen::Map<const Eigen::VectorXd>(yg.axis_nodes(0).data(), y_nodes);
    ax.weights = yg.weights();
    std::vector<double> t(static_cast<std::size_t>(y_nodes));
    for (int r = 0; r < y_nodes; ++r) t[static_cast<std::size_t>(r)] = static_cast<double>(r) / (y_nodes - 1);
    yk.emplace_back(std::move(t), spec.order, spec.sigma, rescale(y, ax.lo, ax.hi, "y"));
    d.y_axes.push_back(std::move(ax));
  }

  d.f_xw = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(x_grid.size()), static_cast<Eigen::Index>(w_grid.size()));
  d.f_w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(w_grid.size()));
  d.f_yw.assign(yk.size(), Eigen::MatrixXd::Zero(y_nodes, static_cast<Eigen::Index>(w_grid.size())));

  for (Eigen::Index b0 = 0; b0 < n; b0 += kBlock) {
    const Eigen::Index len = std::min(kBlock, n - b0);
    const Eigen::MatrixXd KW = tensor_block(w_grid, wk, b0, len, spec.sigma);
    const Eigen::MatrixXd KX = tensor_block(x_grid, xk, b0, len, spec.sigma);
    d.f_xw.noalias() += KX * KW.transpose();
    d.f_w += KW.rowwise().sum();
    for (std::size_t c = 0; c < yk.size(); ++c) d.f_yw[c].noalias() += yk[c].block(b0, len, spec.sigma) * KW.transpose();
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  d.f_xw = (d.f_xw * inv_n).cwiseMax(0.0);
  for (auto& f : d.f_yw) f = (f * inv_n).cwiseMax(0.0);
  d.f_w *= inv_n;
  for (Eigen::Index j = 0; j < d.f_w.size(); ++j) {
    if (d.f_w[j] < spec.clip_floor) {
      d.f_w[j] = spec.clip_floor;
      ++d.clipped_nodes;
    }
  }
  for (const std::vector<AxisKernels>* group : {&xk, &wk, static_cast<const std::vector<AxisKernels>*>(&yk)})
    for (const auto& ax : *group) d.kernel_sup = std::max(d.kernel_sup, ax.sup());
  return d;
}

OperatorEstimate estimate_operator(const Sample& sample, const KernelSpec& spec, const GridPtr& source,
                                   const GridPtr& target) {
  DensityEstimates d = estimate_densities(sample, spec, *source, *target);
  const Eigen::VectorXd inv_fw = d.f_w.cwiseInverse();
  Eigen::MatrixXd K = inv_fw.asDiagonal() * d.f_xw.transpose();
  K = K * source->weights().asDiagonal();

  const auto channels = static_cast<Eigen::Index>(d.f_yw.size());
  Eigen::MatrixXd h(static_cast<Eigen::Index>(target->size()), channels);
  for (Eigen::Index c = 0; c < channels; ++c) {
    const auto& ax = d.y_axes[static_cast<std::size_t>(c)];
    const Eigen::VectorXd qy = ax.weights.cwiseProduct(ax.nodes);
    h.col(c) = (d.f_yw[static_cast<std::size_t>(c)].transpose() * qy).cwiseProduct(inv_fw);
  }
  DiscreteOperator T(source, target, std::move(K));
  GridFunction hh(target, std::move(h));
  return OperatorEstimate{std::move(T), std::move(hh), std::move(d)};
}

}  // namespace ivtik
