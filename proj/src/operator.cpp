#include "ivtik/operator.hpp"

#include "ivtik/error.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace ivtik {

DiscreteOperator::DiscreteOperator(GridPtr source, GridPtr target, Eigen::MatrixXd kernel)
    : source_(std::move(source)), target_(std::move(target)), kernel_(std::move(kernel)) {
  if (!source_ || !target_) throw Error(ErrorKind::shape, "operator needs source and target grids");
  if (static_cast<std::size_t>(kernel_.rows()) != target_->size() ||
      static_cast<std::size_t>(kernel_.cols()) != source_->size()) {
    throw Error(ErrorKind::shape, "kernel must be (target nodes) x (source nodes)");
  }
  if (!kernel_.allFinite()) throw Error(ErrorKind::input, "kernel has non-finite entries");
}

double DiscreteOperator::row_sum_residual() const {
  return (kernel_.rowwise().sum().array() - 1.0).abs().maxCoeff();
}

DiscreteOperator assemble_operator(const JointDensity& f_xw, const MarginalDensity& f_w,
                                   GridPtr source, GridPtr target) {
  const auto nx = static_cast<Eigen::Index>(source->size());
  const auto nw = static_cast<Eigen::Index>(target->size());
  Eigen::MatrixXd K(nw, nx);
  std::vector<Eigen::VectorXd> xs;
  xs.reserve(static_cast<std::size_t>(nx));
  for (Eigen::Index i = 0; i < nx; ++i) xs.push_back(source->point(static_cast<std::size_t>(i)));
  const Eigen::VectorXd& q = source->weights();
  for (Eigen::Index j = 0; j < nw; ++j) {
    const Eigen::VectorXd w = target->point(static_cast<std::size_t>(j));
    const double fw = f_w(w);
    if (!std::isfinite(fw)) throw Error(ErrorKind::input, "non-finite marginal density value");
    if (!(fw > 0.0)) {
      throw Error(ErrorKind::density, "marginal density vanishes at target node " + std::to_string(j));
    }
    for (Eigen::Index i = 0; i < nx; ++i) {
      const double f = f_xw(xs[static_cast<std::size_t>(i)], w);
      if (!std::isfinite(f)) throw Error(ErrorKind::input, "non-finite joint density value");
      K(j, i) = q[i] * f / fw;
    }
  }
  return DiscreteOperator(std::move(source), std::move(target), std::move(K));
}

GridFunction apply(const DiscreteOperator& T, const GridFunction& g) {
  if (!same_grid(g.grid(), T.source())) throw Error(ErrorKind::shape, "apply: field is not on the source grid");
  return GridFunction(T.target(), T.kernel() * g.values());
}

GridFunction adjoint_apply(const DiscreteOperator& T, const GridFunction& u) {
  if (!same_grid(u.grid(), T.target())) {
    throw Error(ErrorKind::shape, "adjoint_apply: field is not on the target grid");
  }
  const Eigen::MatrixXd weighted = T.target()->weights().asDiagonal() * u.values();
  Eigen::MatrixXd out = T.kernel().transpose() * weighted;
  out = T.source()->weights().cwiseInverse().asDiagonal() * out;
  return GridFunction(T.source(), std::move(out));
}

namespace {

// Spectral norm of Q_W^{1/2} K Q_X^{-1/2} by power iteration on its normal matrix.
double weighted_spectral_norm(const Eigen::MatrixXd& K, const Eigen::VectorXd& qx,
                              const Eigen::VectorXd& qw, PowerIterationOptions opts) {
  const Eigen::MatrixXd A =
      qw.cwiseSqrt().asDiagonal() * K * qx.cwiseSqrt().cwiseInverse().asDiagonal();
  if (A.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  Eigen::VectorXd v(A.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = 1.0 + 0.1 * std::sin(1.0 + static_cast<double>(i));
  v.normalize();
  double prev = 0.0;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const Eigen::VectorXd Av = A * v;
    const double est = Av.squaredNorm();
    Eigen::VectorXd next = A.transpose() * Av;
    const double nn = next.norm();
    if (nn == 0.0) return 0.0;
    v = next / nn;
    if (it > 1 && std::abs(est - prev) <= opts.tolerance * est) return std::sqrt(est);
    prev = est;
  }
  throw Error(ErrorKind::numerical, "power iteration did not converge in " +
                                        std::to_string(opts.max_iterations) + " iterations");
}

}  // namespace

double operator_norm(const DiscreteOperator& T, PowerIterationOptions opts) {
  return weighted_spectral_norm(T.kernel(), T.source()->weights(), T.target()->weights(), opts);
}

double operator_distance(const DiscreteOperator& A, const DiscreteOperator& B,
                         PowerIterationOptions opts) {
  if (!same_grid(A.source(), B.source()) || !same_grid(A.target(), B.target())) {
    throw Error(ErrorKind::shape, "operator_distance: operators live on different grids");
  }
  return weighted_spectral_norm(A.kernel() - B.kernel(), A.source()->weights(),
                                A.target()->weights(), opts);
}

DConstant d_constant(const DiscreteOperator& T, int channels, std::uint64_t seed, int samples) {
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(T.kernel().cols());
  const Eigen::VectorXd t1 = T.kernel() * ones;
  DConstant out;
  out.value = std::sqrt(T.target()->weights().dot(t1.cwiseAbs2()));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  out.sampled_min = std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    Eigen::VectorXd c(channels);
    for (int i = 0; i < channels; ++i) c[i] = normal(rng);
    c.normalize();
    const auto g = GridFunction::constant(T.source(), c);
    out.sampled_min = std::min(out.sampled_min, norm_l2(apply(T, g)));
  }
  return out;
}

namespace {

// Smallest nonzero generalized eigenvalue of K v = λ W v on one axis, by
// inverse iteration on the complement of constants.
double smallest_neumann_eigenvalue_1d(const std::vector<double>& nodes) {
  const Grid line = Grid::build({{nodes.front(), nodes.back()}}, {static_cast<int>(nodes.size())},
                                AxisRole::free);
  const Eigen::MatrixXd K = Eigen::MatrixXd(stiffness_matrix(line));
  const Eigen::VectorXd& w = line.weights();
  const Eigen::VectorXd Wone = w;  // W·1
  const Eigen::MatrixXd shifted = K + Wone * Wone.transpose();
  const Eigen::LLT<Eigen::MatrixXd> llt(shifted);
  if (llt.info() != Eigen::Success) throw Error(ErrorKind::numerical, "Neumann Laplacian factorization failed");

  const auto n = static_cast<Eigen::Index>(nodes.size());
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = std::cos(M_PI * static_cast<double>(i) / (n - 1)) + 0.01 * std::sin(3.0 * i);
  auto deflate = [&](Eigen::VectorXd& x) {
    x.array() -= w.dot(x);  // remove the W-mean (weights sum to one)
    x /= std::sqrt(x.dot(w.cwiseProduct(x)));
  };
  deflate(v);
  double lambda = v.dot(K * v);
  for (int it = 0; it < 10000; ++it) {
    Eigen::VectorXd next = llt.solve(w.cwiseProduct(v));
    deflate(next);
    const double est = next.dot(K * next);
    v = next;
    if (std::abs(est - lambda) <= 1e-14 * est) return est;
    lambda = est;
  }
  throw Error(ErrorKind::numerical, "Poincare eigen-solver did not converge");
}

}  // namespace

double poincare_constant(const Grid& grid) {
  double lambda = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < grid.dim(); ++a) {
    if (grid.spacing(a) != AxisSpacing::uniform) {
      throw Error(ErrorKind::configuration, "poincare_constant requires uniform axes");
    }
    lambda = std::min(lambda, smallest_neumann_eigenvalue_1d(grid.axis_nodes(a)));
  }
  return 1.0 / std::sqrt(lambda);
}

OperatorConstants OperatorConstants::make(double op_norm, double d_const, double poincare_c) {
  OperatorConstants c;
  c.op_norm = op_norm;
  c.d_const = d_const;
  c.poincare_c = poincare_c;
  c.a_const = 2.0 * (poincare_c + 1.0);
  return c;
}

OperatorConstants compute_constants(const DiscreteOperator& T, int channels) {
  return OperatorConstants::make(operator_norm(T), d_constant(T, channels).value,
                                 poincare_constant(*T.source()));
}

double t_norm(const DiscreteOperator& T, const GridFunction& g, SobolevWeight w) {
  const GridFunction tg = apply(T, g);
  return std::sqrt(sobolev_mu_norm_sq(g, w) + inner_l2(tg, tg));
}

EquivalenceReport equivalence_bounds(const DiscreteOperator& T, SobolevWeight w,
                                     const OperatorConstants& consts,
                                     const std::vector<GridFunction>& fields, double tolerance) {
  EquivalenceReport r;
  r.mu = w.mu;
  r.fields = fields.size();
  r.upper_factor = consts.op_norm;
  r.corrected_upper_factor = std::sqrt(std::max(w.mu, 1.0) + consts.op_norm * consts.op_norm);
  if (w.mu > 0.0) {
    r.lower_factor = 1.0 / std::min(std::sqrt(w.mu), 1.0);
  } else {
    if (!(consts.d_const > 1e-10)) {
      throw Error(ErrorKind::degeneracy, "mu = 0 and D(T) vanishes: T annihilates constants");
    }
    r.lower_factor = consts.a_const *
                     (consts.op_norm / consts.d_const + 1.0 / consts.d_const + 1.0);
  }
  for (const auto& g : fields) {
    const double tn = t_norm(T, g, w);
    const double h1 = h1_norm(g);
    const double up = tn / (r.upper_factor * h1);
    const double up_fixed = tn / (r.corrected_upper_factor * h1);
    const double low = h1 / (r.lower_factor * tn);
    r.worst_upper_ratio = std::max(r.worst_upper_ratio, up);
    r.worst_corrected_upper_ratio = std::max(r.worst_corrected_upper_ratio, up_fixed);
    r.worst_lower_ratio = std::max(r.worst_lower_ratio, low);
    if (up > 1.0 + tolerance) ++r.upper_violations;
    if (up_fixed > 1.0 + tolerance) ++r.corrected_upper_violations;
    if (low > 1.0 + tolerance) ++r.lower_violations;
  }
  return r;
}

std::vector<GridFunction> random_fields(const GridPtr& grid, int channels, std::size_t count,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<GridFunction> out;
  const std::size_t d = grid->dim();
  for (std::size_t f = 0; f < count; ++f) {
    Eigen::MatrixXd v(static_cast<Eigen::Index>(grid->size()), channels);
    for (int c = 0; c < channels; ++c) {
      const double offset = normal(rng);
      const double noise = 0.1 * unit(rng);
      std::vector<double> freq(d), phase(d);
      for (std::size_t a = 0; a < d; ++a) {
        freq[a] = 1.0 + 3.0 * unit(rng);
        phase[a] = 2.0 * M_PI * unit(rng);
      }
      const double amp = normal(rng);
      for (std::size_t n = 0; n < grid->size(); ++n) {
        double wave = 1.0;
        for (std::size_t a = 0; a < d; ++a) {
          const auto& b = grid->bounds(a);
          const double t = (grid->coordinate(n, a) - b.lo) / (b.hi - b.lo);
          wave *= std::cos(freq[a] * M_PI * t + phase[a]);
        }
        v(static_cast<Eigen::Index>(n), c) = offset + amp * wave + noise * normal(rng);
      }
    }
    out.emplace_back(grid, std::move(v));
  }
  return out;
}

double error_multiplier(SobolevWeight w, double alpha, double delta, double gamma,
                        const TruthNorms& gdag, const OperatorConstants& consts, double h_norm) {
  if (!(alpha > 0.0)) throw Error(ErrorKind::precondition, "alpha must be positive");
  if (w.mu > 0.0) {
    return (delta * gdag.l2 + gamma) / std::sqrt(w.mu * alpha) + gdag.mu_norm / std::sqrt(w.mu);
  }
  if (!(delta < consts.d_const)) {
    throw Error(ErrorKind::precondition, "mu = 0 requires delta < D(T)");
  }
  const double lead = consts.a_const * (consts.op_norm + consts.d_const + 1.0) / (consts.d_const - delta);
  const double sa = std::sqrt(alpha);
  return lead * (h_norm + gamma +
                 std::sqrt(2.0) * (delta * gdag.l2 + gamma + sa * gdag.grad) / std::min(sa, 1.0));
}

namespace {

void write_grid_meta(std::ostream& out, const std::string& prefix, const Grid& g) {
  out << prefix << "_dim=" << g.dim() << '\n';
  for (std::size_t a = 0; a < g.dim(); ++a) {
    out << prefix << "_axis_" << a << '=' << format_double(g.bounds(a).lo) << ','
        << format_double(g.bounds(a).hi) << ',' << g.resolution(a) << ','
        << (g.spacing(a) == AxisSpacing::uniform ? "uniform" : "geometric") << '\n';
  }
}

}  // namespace

void export_operator(const DiscreteOperator& T, const std::string& csv_path,
                     const std::string& meta_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw Error(ErrorKind::input, "cannot write " + csv_path);
  const auto& K = T.kernel();
  for (Eigen::Index j = 0; j < K.rows(); ++j) {
    for (Eigen::Index i = 0; i < K.cols(); ++i) csv << format_double(K(j, i)) << (i + 1 < K.cols() ? "," : "\n");
  }
  std::ofstream meta(meta_path);
  if (!meta) throw Error(ErrorKind::input, "cannot write " + meta_path);
  write_grid_meta(meta, "source", *T.source());
  write_grid_meta(meta, "target", *T.target());
  meta << "channels=channelwise\n";
  meta << "row_sum_residual=" << format_double(T.row_sum_residual()) << '\n';
}

}  // namespace ivtik
