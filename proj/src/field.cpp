#include "ivtik/field.hpp"

#include "ivtik/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace ivtik {

namespace {

std::vector<double> trapezoid_weights(const std::vector<double>& nodes) {
  const std::size_t n = nodes.size();
  std::vector<double> w(n, 0.0);
  const double length = nodes.back() - nodes.front();
  for (std::size_t i = 0; i < n; ++i) {
    const double left = i > 0 ? nodes[i] - nodes[i - 1] : 0.0;
    const double right = i + 1 < n ? nodes[i + 1] - nodes[i] : 0.0;
    w[i] = 0.5 * (left + right) / length;
  }
  return w;
}

void check_resolution(const std::vector<Interval>& bounds, const std::vector<int>& resolution) {
  if (bounds.empty() || bounds.size() != resolution.size()) {
    throw Error(ErrorKind::configuration, "grid needs one resolution entry per axis");
  }
  for (std::size_t a = 0; a < bounds.size(); ++a) {
    if (resolution[a] < 3) {
      throw Error(ErrorKind::configuration,
                  "axis " + std::to_string(a) + " has fewer than 3 nodes");
    }
    if (!(bounds[a].hi > bounds[a].lo) || !std::isfinite(bounds[a].lo) ||
        !std::isfinite(bounds[a].hi)) {
      throw Error(ErrorKind::configuration, "axis " + std::to_string(a) + " has an empty interval");
    }
  }
}

// Native coordinate of a node: x on uniform axes, log(x) on geometric ones.
double native(const Grid& grid, std::size_t axis, double x) {
  return grid.spacing(axis) == AxisSpacing::geometric ? std::log(x) : x;
}

}  // namespace

Grid Grid::build(const std::vector<Interval>& bounds, const std::vector<int>& resolution,
                 AxisRole role) {
  check_resolution(bounds, resolution);
  Grid g;
  g.role_ = role;
  for (std::size_t a = 0; a < bounds.size(); ++a) {
    if (role == AxisRole::positive && !(bounds[a].lo > 0.0)) {
      throw Error(ErrorKind::domain, "price/budget axis " + std::to_string(a) +
                                         " must have a positive lower bound");
    }
    const int n = resolution[a];
    const double h = (bounds[a].hi - bounds[a].lo) / (n - 1);
    std::vector<double> nodes(n);
    for (int i = 0; i < n; ++i) nodes[i] = bounds[a].lo + i * h;
    nodes.back() = bounds[a].hi;
    g.axes_.push_back(std::move(nodes));
    g.bounds_.push_back(bounds[a]);
    g.spacing_.push_back(AxisSpacing::uniform);
    g.steps_.push_back(h);
  }
  g.finish();
  return g;
}

Grid Grid::build_geometric(const std::vector<Interval>& bounds,
                           const std::vector<int>& resolution) {
  check_resolution(bounds, resolution);
  Grid g;
  g.role_ = AxisRole::positive;
  for (std::size_t a = 0; a < bounds.size(); ++a) {
    if (!(bounds[a].lo > 0.0)) {
      throw Error(ErrorKind::domain, "geometric axis " + std::to_string(a) +
                                         " must have a positive lower bound");
    }
    const int n = resolution[a];
    const double lo = std::log(bounds[a].lo);
    const double h = (std::log(bounds[a].hi) - lo) / (n - 1);
    std::vector<double> nodes(n);
    for (int i = 0; i < n; ++i) nodes[i] = std::exp(lo + i * h);
    nodes.front() = bounds[a].lo;
    nodes.back() = bounds[a].hi;
    g.axes_.push_back(std::move(nodes));
    g.bounds_.push_back(bounds[a]);
    g.spacing_.push_back(AxisSpacing::geometric);
    g.steps_.push_back(h);
  }
  g.finish();
  return g;
}

void Grid::finish() {
  const std::size_t d = axes_.size();
  strides_.assign(d, 1);
  for (std::size_t a = d - 1; a > 0; --a) strides_[a - 1] = strides_[a] * axes_[a].size();
  std::size_t total = strides_[0] * axes_[0].size();

  std::vector<std::vector<double>> axis_w;
  for (const auto& nodes : axes_) axis_w.push_back(trapezoid_weights(nodes));
  weights_.resize(static_cast<Eigen::Index>(total));
  for (std::size_t n = 0; n < total; ++n) {
    double w = 1.0;
    std::size_t rem = n;
    for (std::size_t a = 0; a < d; ++a) {
      w *= axis_w[a][rem / strides_[a]];
      rem %= strides_[a];
    }
    weights_[static_cast<Eigen::Index>(n)] = w;
  }
}

std::size_t Grid::flat_index(const std::vector<int>& multi) const {
  std::size_t flat = 0;
  for (std::size_t a = 0; a < dim(); ++a) flat += strides_[a] * static_cast<std::size_t>(multi[a]);
  return flat;
}

std::vector<int> Grid::multi_index(std::size_t flat) const {
  std::vector<int> m(dim());
  for (std::size_t a = 0; a < dim(); ++a) {
    m[a] = static_cast<int>(flat / strides_[a]);
    flat %= strides_[a];
  }
  return m;
}

double Grid::coordinate(std::size_t flat, std::size_t axis) const {
  return axes_[axis][(flat / strides_[axis]) % axes_[axis].size()];
}

Eigen::VectorXd Grid::point(std::size_t flat) const {
  Eigen::VectorXd x(static_cast<Eigen::Index>(dim()));
  for (std::size_t a = 0; a < dim(); ++a) x[static_cast<Eigen::Index>(a)] = coordinate(flat, a);
  return x;
}

bool Grid::is_boundary(std::size_t flat) const {
  for (std::size_t a = 0; a < dim(); ++a) {
    const std::size_t i = (flat / strides_[a]) % axes_[a].size();
    if (i == 0 || i + 1 == axes_[a].size()) return true;
  }
  return false;
}

bool Grid::operator==(const Grid& other) const {
  return axes_ == other.axes_ && spacing_ == other.spacing_;
}

bool same_grid(const GridPtr& a, const GridPtr& b) {
  return a == b || (a && b && *a == *b);
}

GridFunction::GridFunction(GridPtr grid, Eigen::MatrixXd values)
    : grid_(std::move(grid)), values_(std::move(values)) {
  if (!grid_) throw Error(ErrorKind::shape, "grid function without grid");
  if (static_cast<std::size_t>(values_.rows()) != grid_->size() || values_.cols() < 1) {
    throw Error(ErrorKind::shape, "values must have one row per node and at least one channel");
  }
  if (!values_.allFinite()) throw Error(ErrorKind::input, "grid function has non-finite values");
}

GridFunction GridFunction::zeros(GridPtr grid, int channels) {
  const auto n = static_cast<Eigen::Index>(grid->size());
  return GridFunction(std::move(grid), Eigen::MatrixXd::Zero(n, channels));
}

GridFunction GridFunction::constant(GridPtr grid, const Eigen::VectorXd& value) {
  const auto n = static_cast<Eigen::Index>(grid->size());
  Eigen::MatrixXd v = Eigen::VectorXd::Ones(n) * value.transpose();
  return GridFunction(std::move(grid), std::move(v));
}

void require_same_shape(const GridFunction& f, const GridFunction& g, const char* where) {
  if (!same_grid(f.grid(), g.grid()) || f.channels() != g.channels()) {
    throw Error(ErrorKind::shape, std::string(where) + ": grid or channel mismatch");
  }
}

GridFunction& GridFunction::operator+=(const GridFunction& other) {
  require_same_shape(*this, other, "operator+=");
  values_ += other.values_;
  return *this;
}

GridFunction& GridFunction::operator-=(const GridFunction& other) {
  require_same_shape(*this, other, "operator-=");
  values_ -= other.values_;
  return *this;
}

GridFunction& GridFunction::operator*=(double s) {
  values_ *= s;
  return *this;
}

GridFunction operator+(GridFunction a, const GridFunction& b) { return a += b; }
GridFunction operator-(GridFunction a, const GridFunction& b) { return a -= b; }
GridFunction operator*(double s, GridFunction a) { return a *= s; }

SobolevWeight::SobolevWeight(double m) : mu(m) {
  if (!(m >= 0.0) || !std::isfinite(m)) {
    throw Error(ErrorKind::configuration, "Sobolev weight mu must be finite and >= 0");
  }
}

Eigen::SparseMatrix<double> derivative_matrix(const Grid& grid, std::size_t axis) {
  const std::size_t total = grid.size();
  const std::size_t s = grid.stride(axis);
  const int n = grid.resolution(axis);
  const double h = grid.step(axis);
  const bool geometric = grid.spacing(axis) == AxisSpacing::geometric;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(total * 3);
  for (std::size_t node = 0; node < total; ++node) {
    const int i = static_cast<int>((node / s) % static_cast<std::size_t>(n));
    // d/dx = (1/x) d/du on geometric axes
    const double scale = (geometric ? 1.0 / grid.coordinate(node, axis) : 1.0) / (2.0 * h);
    const auto r = static_cast<Eigen::Index>(node);
    auto at = [&](int offset) { return static_cast<Eigen::Index>(node + offset * static_cast<long>(s)); };
    if (i == 0) {
      trip.emplace_back(r, at(0), -3.0 * scale);
      trip.emplace_back(r, at(1), 4.0 * scale);
      trip.emplace_back(r, at(2), -1.0 * scale);
    } else if (i == n - 1) {
      trip.emplace_back(r, at(0), 3.0 * scale);
      trip.emplace_back(r, at(-1), -4.0 * scale);
      trip.emplace_back(r, at(-2), 1.0 * scale);
    } else {
      trip.emplace_back(r, at(1), scale);
      trip.emplace_back(r, at(-1), -scale);
    }
  }
  Eigen::SparseMatrix<double> D(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(total));
  D.setFromTriplets(trip.begin(), trip.end());
  return D;
}

GridFunction gradient(const GridFunction& f) {
  const Grid& grid = *f.grid();
  const auto d = static_cast<int>(grid.dim());
  Eigen::MatrixXd out(f.values().rows(), f.channels() * d);
  for (int a = 0; a < d; ++a) {
    const auto D = derivative_matrix(grid, static_cast<std::size_t>(a));
    for (int c = 0; c < f.channels(); ++c) out.col(c * d + a) = D * f.values().col(c);
  }
  return GridFunction(f.grid(), std::move(out));
}

GridFunction laplacian(const GridFunction& f) {
  const Grid& grid = *f.grid();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(f.values().rows(), f.channels());
  for (std::size_t a = 0; a < grid.dim(); ++a) {
    if (grid.spacing(a) != AxisSpacing::uniform) {
      throw Error(ErrorKind::configuration, "laplacian requires uniform axes");
    }
    const std::size_t s = grid.stride(a);
    const int n = grid.resolution(a);
    const double inv_h2 = 1.0 / (grid.step(a) * grid.step(a));
    for (std::size_t node = 0; node < grid.size(); ++node) {
      const int i = static_cast<int>((node / s) % static_cast<std::size_t>(n));
      const auto r = static_cast<Eigen::Index>(node);
      const auto up = static_cast<Eigen::Index>(node + s);
      const auto dn = static_cast<Eigen::Index>(node - s);
      for (int c = 0; c < f.channels(); ++c) {
        const auto& v = f.values();
        double lap;
        if (i == 0) {
          lap = 2.0 * (v(up, c) - v(r, c));
        } else if (i == n - 1) {
          lap = 2.0 * (v(dn, c) - v(r, c));
        } else {
          lap = v(up, c) - 2.0 * v(r, c) + v(dn, c);
        }
        out(r, c) += lap * inv_h2;
      }
    }
  }
  return GridFunction(f.grid(), std::move(out));
}

Eigen::SparseMatrix<double> stiffness_matrix(const Grid& grid) {
  const std::size_t d = grid.dim();
  std::vector<std::vector<double>> axis_w;
  for (std::size_t a = 0; a < d; ++a) axis_w.push_back(trapezoid_weights(grid.axis_nodes(a)));

  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t a = 0; a < d; ++a) {
    const auto& nodes = grid.axis_nodes(a);
    const double length = nodes.back() - nodes.front();
    const std::size_t s = grid.stride(a);
    for (std::size_t node = 0; node < grid.size(); ++node) {
      const auto m = grid.multi_index(node);
      if (m[a] + 1 >= grid.resolution(a)) continue;
      const double dx = nodes[m[a] + 1] - nodes[m[a]];
      double cell = dx / length;
      for (std::size_t b = 0; b < d; ++b) {
        if (b != a) cell *= axis_w[b][m[b]];
      }
      const double k = cell / (dx * dx);
      const auto i = static_cast<Eigen::Index>(node);
      const auto j = static_cast<Eigen::Index>(node + s);
      trip.emplace_back(i, i, k);
      trip.emplace_back(j, j, k);
      trip.emplace_back(i, j, -k);
      trip.emplace_back(j, i, -k);
    }
  }
  const auto total = static_cast<Eigen::Index>(grid.size());
  Eigen::SparseMatrix<double> K(total, total);
  K.setFromTriplets(trip.begin(), trip.end());
  return K;
}

double inner_l2(const GridFunction& f, const GridFunction& g) {
  require_same_shape(f, g, "inner_l2");
  const Eigen::VectorXd rowdot = f.values().cwiseProduct(g.values()).rowwise().sum();
  return f.grid()->weights().dot(rowdot);
}

double norm_l2(const GridFunction& f) { return std::sqrt(inner_l2(f, f)); }

double gradient_norm_sq(const GridFunction& f) {
  const auto K = stiffness_matrix(*f.grid());
  double total = 0.0;
  for (int c = 0; c < f.channels(); ++c) {
    const Eigen::VectorXd col = f.values().col(c);
    total += col.dot(K * col);
  }
  return total;
}

double sobolev_mu_norm_sq(const GridFunction& f, SobolevWeight w) {
  return w.mu * inner_l2(f, f) + gradient_norm_sq(f);
}

double h1_norm(const GridFunction& f) { return std::sqrt(sobolev_mu_norm_sq(f, SobolevWeight(1.0))); }

double neumann_defect(const GridFunction& f) {
  const Grid& grid = *f.grid();
  double worst = 0.0;
  for (std::size_t a = 0; a < grid.dim(); ++a) {
    const auto D = derivative_matrix(grid, a);
    const Eigen::MatrixXd df = D * f.values();
    const std::size_t s = grid.stride(a);
    const auto n = static_cast<std::size_t>(grid.resolution(a));
    for (std::size_t node = 0; node < grid.size(); ++node) {
      const std::size_t i = (node / s) % n;
      if (i == 0 || i + 1 == n) {
        worst = std::max(worst, df.row(static_cast<Eigen::Index>(node)).cwiseAbs().maxCoeff());
      }
    }
  }
  return worst;
}

double max_abs_gradient(const GridFunction& f) {
  return gradient(f).values().cwiseAbs().maxCoeff();
}

GridFunction enforce_discrete_neumann(GridFunction f) {
  const Grid& grid = *f.grid();
  auto& v = f.values();
  for (std::size_t a = 0; a < grid.dim(); ++a) {
    const std::size_t s = grid.stride(a);
    const auto n = static_cast<std::size_t>(grid.resolution(a));
    for (std::size_t node = 0; node < grid.size(); ++node) {
      const std::size_t i = (node / s) % n;
      const auto r = static_cast<Eigen::Index>(node);
      if (i == 0) {
        v.row(r) = (4.0 * v.row(r + static_cast<Eigen::Index>(s)) -
                    v.row(r + 2 * static_cast<Eigen::Index>(s))) / 3.0;
      } else if (i + 1 == n) {
        v.row(r) = (4.0 * v.row(r - static_cast<Eigen::Index>(s)) -
                    v.row(r - 2 * static_cast<Eigen::Index>(s))) / 3.0;
      }
    }
  }
  return f;
}

Eigen::SparseMatrix<double> expansion_matrix(const Grid& normalized, const Grid& target) {
  const std::size_t k = normalized.dim();
  if (target.dim() != k + 1) {
    throw Error(ErrorKind::shape, "target grid must have k price axes and one budget axis");
  }
  constexpr double snap = 1e-9;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(target.size() << k);
  std::vector<int> cell(k);
  std::vector<double> frac(k);
  for (std::size_t node = 0; node < target.size(); ++node) {
    const double z = target.coordinate(node, k);
    for (std::size_t j = 0; j < k; ++j) {
      const double ratio = target.coordinate(node, j) / z;
      const auto& nodes = normalized.axis_nodes(j);
      const double tol = 1e-12 * std::abs(nodes.back());
      if (ratio < nodes.front() - tol || ratio > nodes.back() + tol) {
        throw Error(ErrorKind::extent, "p/z = " + format_double(ratio) +
                                           " lies outside the normalized grid on axis " +
                                           std::to_string(j));
      }
      const double u = native(normalized, j, std::clamp(ratio, nodes.front(), nodes.back()));
      const int n = normalized.resolution(j);
      auto it = std::upper_bound(nodes.begin(), nodes.end(), std::clamp(ratio, nodes.front(), nodes.back()));
      int i = static_cast<int>(it - nodes.begin()) - 1;
      i = std::clamp(i, 0, n - 2);
      const double u0 = native(normalized, j, nodes[i]);
      const double u1 = native(normalized, j, nodes[i + 1]);
      double t = (u - u0) / (u1 - u0);
      if (t < snap) t = 0.0;
      if (t > 1.0 - snap) t = 1.0;
      cell[j] = i;
      frac[j] = t;
    }
    for (std::size_t corner = 0; corner < (std::size_t{1} << k); ++corner) {
      double w = 1.0;
      std::vector<int> m(k);
      for (std::size_t j = 0; j < k; ++j) {
        const bool upper = (corner >> j) & 1U;
        w *= upper ? frac[j] : 1.0 - frac[j];
        m[j] = cell[j] + (upper ? 1 : 0);
      }
      if (w != 0.0) {
        trip.emplace_back(static_cast<Eigen::Index>(node),
                          static_cast<Eigen::Index>(normalized.flat_index(m)), w);
      }
    }
  }
  Eigen::SparseMatrix<double> E(static_cast<Eigen::Index>(target.size()),
                                static_cast<Eigen::Index>(normalized.size()));
  E.setFromTriplets(trip.begin(), trip.end());
  return E;
}

GridFunction expand_homogeneous(const GridFunction& gtilde, const GridPtr& target) {
  const auto E = expansion_matrix(*gtilde.grid(), *target);
  return GridFunction(target, E * gtilde.values());
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_csv(const GridFunction& f, std::ostream& out) {
  const Grid& grid = *f.grid();
  for (std::size_t a = 0; a < grid.dim(); ++a) out << "axis_" << a << ',';
  for (int c = 0; c < f.channels(); ++c) out << "ch_" << c << (c + 1 < f.channels() ? "," : "\n");
  for (std::size_t node = 0; node < grid.size(); ++node) {
    for (std::size_t a = 0; a < grid.dim(); ++a) out << format_double(grid.coordinate(node, a)) << ',';
    for (int c = 0; c < f.channels(); ++c) {
      out << format_double(f.values()(static_cast<Eigen::Index>(node), c))
          << (c + 1 < f.channels() ? "," : "\n");
    }
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e) {
    throw Error(ErrorKind::input, "line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

GridFunction read_csv(std::istream& in, AxisRole role) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::input, "empty CSV");
  const auto header = split_csv_line(line);
  std::size_t dims = 0;
  std::size_t chans = 0;
  for (const auto& h : header) {
    if (h.rfind("axis_", 0) == 0) {
      if (chans > 0) throw Error(ErrorKind::input, "axis columns must precede channel columns");
      ++dims;
    } else if (h.rfind("ch_", 0) == 0) {
      ++chans;
    } else {
      throw Error(ErrorKind::input, "line 1: unexpected column '" + h + "'");
    }
  }
  if (dims == 0 || chans == 0) throw Error(ErrorKind::input, "line 1: need axis_ and ch_ columns");

  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != dims + chans) {
      throw Error(ErrorKind::input, "line " + std::to_string(lineno) + ": wrong column count");
    }
    std::vector<double> row;
    for (const auto& c : cells) row.push_back(parse_double(c, lineno));
    rows.push_back(std::move(row));
  }

  std::vector<std::vector<double>> axes(dims);
  for (std::size_t a = 0; a < dims; ++a) {
    for (const auto& r : rows) axes[a].push_back(r[a]);
    std::sort(axes[a].begin(), axes[a].end());
    axes[a].erase(std::unique(axes[a].begin(), axes[a].end()), axes[a].end());
  }
  std::vector<Interval> bounds;
  std::vector<int> res;
  bool geometric = false;
  for (std::size_t a = 0; a < dims; ++a) {
    const auto& x = axes[a];
    if (x.size() < 3) throw Error(ErrorKind::input, "axis " + std::to_string(a) + " has < 3 nodes");
    bounds.push_back({x.front(), x.back()});
    res.push_back(static_cast<int>(x.size()));
    const double h = (x.back() - x.front()) / static_cast<double>(x.size() - 1);
    bool uniform = true;
    for (std::size_t i = 1; i < x.size(); ++i) {
      if (std::abs(x[i] - x[i - 1] - h) > 1e-9 * (x.back() - x.front())) uniform = false;
    }
    if (!uniform) geometric = true;
  }
  Grid grid = geometric ? Grid::build_geometric(bounds, res) : Grid::build(bounds, res, role);
  if (grid.size() != rows.size()) throw Error(ErrorKind::input, "CSV rows do not form a full tensor grid");
  Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(chans));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<int> m(dims);
    for (std::size_t a = 0; a < dims; ++a) {
      const auto& nodes = grid.axis_nodes(a);
      auto it = std::lower_bound(nodes.begin(), nodes.end(), rows[r][a] - 1e-9 * std::abs(rows[r][a]));
      if (it == nodes.end() || std::abs(*it - rows[r][a]) > 1e-9 * (1.0 + std::abs(rows[r][a]))) {
        throw Error(ErrorKind::input, "CSV coordinates are not on a uniform or geometric grid");
      }
      m[a] = static_cast<int>(it - nodes.begin());
    }
    for (std::size_t c = 0; c < chans; ++c) {
      values(static_cast<Eigen::Index>(grid.flat_index(m)), static_cast<Eigen::Index>(c)) = rows[r][dims + c];
    }
  }
  return GridFunction(make_grid(std::move(grid)), std::move(values));
}

}  // namespace ivtik
