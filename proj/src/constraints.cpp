#include "ivtik/constraints.hpp"

#include "ivtik/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace ivtik {

namespace {

using Sparse = Eigen::SparseMatrix<double>;

std::vector<Sparse> derivative_matrices(const Grid& grid) {
  std::vector<Sparse> d;
  d.reserve(grid.dim());
  for (std::size_t a = 0; a < grid.dim(); ++a) d.push_back(derivative_matrix(grid, a));
  return d;
}

// Largest eigenvalue of the symmetric part.
double max_sym_eigenvalue(const Eigen::MatrixXd& S) {
  const Eigen::MatrixXd sym = 0.5 * (S + S.transpose());
  if (sym.rows() == 1) return sym(0, 0);
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sym, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
}

}  // namespace

SlutskyField slutsky(const GridFunction& g) {
  const Grid& grid = *g.grid();
  const auto k = static_cast<std::size_t>(g.channels());
  if (grid.dim() != k + 1) {
    throw Error(ErrorKind::shape, "slutsky: expected k price axes plus one budget axis for k channels");
  }
  const auto D = derivative_matrices(grid);
  std::vector<Eigen::MatrixXd> dg(grid.dim());  // dg[a](:, i) = ∂g_i/∂x_a
  for (std::size_t a = 0; a < grid.dim(); ++a) dg[a] = D[a] * g.values();

  SlutskyField out{g.grid(), std::vector<Eigen::MatrixXd>(grid.size())};
  const auto& v = g.values();
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const auto row = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd S(k, k);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        S(i, j) = dg[j](row, i) + dg[k](row, i) * v(row, j);
      }
    }
    out.matrices[n] = std::move(S);
  }
  return out;
}

SlutskyField slutsky_normalized(const GridFunction& gtilde) {
  const Grid& grid = *gtilde.grid();
  const auto k = static_cast<std::size_t>(gtilde.channels());
  if (grid.dim() != k) throw Error(ErrorKind::shape, "slutsky_normalized: expected k normalized-price axes");
  const auto D = derivative_matrices(grid);
  std::vector<Eigen::MatrixXd> dg(k);
  for (std::size_t a = 0; a < k; ++a) dg[a] = D[a] * gtilde.values();

  SlutskyField out{gtilde.grid(), std::vector<Eigen::MatrixXd>(grid.size())};
  const auto& v = gtilde.values();
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const auto row = static_cast<Eigen::Index>(n);
    const Eigen::VectorXd p = grid.point(n);
    Eigen::MatrixXd S(k, k);
    for (std::size_t i = 0; i < k; ++i) {
      double euler = 0.0;
      for (std::size_t m = 0; m < k; ++m) euler += p[static_cast<Eigen::Index>(m)] * dg[m](row, i);
      for (std::size_t j = 0; j < k; ++j) S(i, j) = dg[j](row, i) - euler * v(row, j);
    }
    out.matrices[n] = std::move(S);
  }
  return out;
}

namespace {

void slutsky_metrics(const SlutskyField& s, ConstraintReport& r) {
  const Grid& grid = *s.grid;
  for (std::size_t n = 0; n < grid.size(); ++n) {
    if (!grid.is_interior(n)) continue;
    const auto& S = s.matrices[n];
    r.slutsky_asym = std::max(r.slutsky_asym, (S - S.transpose()).norm());
    r.slutsky_psd_excess = std::max(r.slutsky_psd_excess, max_sym_eigenvalue(S));
  }
}

void decide(ConstraintReport& r, const ConstraintTolerances& tol) {
  r.member = r.nonneg_violation <= tol.nonneg && r.budget_violation <= tol.budget &&
             r.homogeneity_violation <= tol.homogeneity && r.slutsky_asym <= tol.asym &&
             r.slutsky_psd_excess <= tol.psd;
}

}  // namespace

ConstraintReport check_membership(const GridFunction& g, const ConstraintTolerances& tol) {
  const Grid& grid = *g.grid();
  const auto k = static_cast<std::size_t>(g.channels());
  if (grid.dim() != k + 1) throw Error(ErrorKind::shape, "check_membership: grid must be (p_1..p_k, z)");
  ConstraintReport r;
  const auto& v = g.values();
  r.nonneg_violation = std::max(0.0, -v.minCoeff());

  std::map<std::vector<long long>, Eigen::Index> rays;
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const auto row = static_cast<Eigen::Index>(n);
    const Eigen::VectorXd x = grid.point(n);
    const double z = x[static_cast<Eigen::Index>(k)];
    const double budget = x.head(static_cast<Eigen::Index>(k)).dot(v.row(row).transpose());
    r.budget_violation = std::max(r.budget_violation, std::abs(budget - z) / z);

    std::vector<long long> key(k);
    for (std::size_t i = 0; i < k; ++i) key[i] = std::llround(x[static_cast<Eigen::Index>(i)] / z * 1e9);
    const auto [it, fresh] = rays.emplace(std::move(key), row);
    if (!fresh) {
      r.homogeneity_violation =
          std::max(r.homogeneity_violation, (v.row(row) - v.row(it->second)).cwiseAbs().maxCoeff());
    }
  }
  slutsky_metrics(slutsky(g), r);
  decide(r, tol);
  return r;
}

ConstraintReport check_membership_normalized(const GridFunction& gtilde, const ConstraintTolerances& tol) {
  const Grid& grid = *gtilde.grid();
  if (grid.dim() != static_cast<std::size_t>(gtilde.channels())) {
    throw Error(ErrorKind::shape, "check_membership_normalized: expected k axes for k channels");
  }
  ConstraintReport r;
  const auto& v = gtilde.values();
  r.nonneg_violation = std::max(0.0, -v.minCoeff());
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const double budget = grid.point(n).dot(v.row(static_cast<Eigen::Index>(n)).transpose());
    r.budget_violation = std::max(r.budget_violation, std::abs(budget - 1.0));
  }
  slutsky_metrics(slutsky_normalized(gtilde), r);
  decide(r, tol);
  return r;
}

namespace {

// Fixed-capacity storage: no heap traffic in the per-node loops.
using Small = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 4, 4>;

// PSD part of a symmetric matrix.
Small psd_part(const Small& sym) {
  if (sym.rows() == 1) return Small::Constant(1, 1, std::max(0.0, sym(0, 0)));
  Eigen::SelfAdjointEigenSolver<Small> es(sym);
  Small out = Small::Zero(sym.rows(), sym.cols());
  for (Eigen::Index e = 0; e < sym.rows(); ++e) {
    const double lam = es.eigenvalues()[e];
    if (lam > 0.0) out += lam * es.eigenvectors().col(e) * es.eigenvectors().col(e).transpose();
  }
  return out;
}

}  // namespace

PenaltyEvaluator::PenaltyEvaluator(GridPtr normalized) : grid_(std::move(normalized)) {
  const Grid& grid = *grid_;
  const auto k = static_cast<Eigen::Index>(grid.dim());
  if (k > 4) throw Error(ErrorKind::shape, "penalty: at most 4 goods are supported");
  D_ = derivative_matrices(grid);
  for (const auto& d : D_) Drow_.emplace_back(d);
  P_.resize(static_cast<Eigen::Index>(grid.size()), k);
  for (std::size_t n = 0; n < grid.size(); ++n) {
    P_.row(static_cast<Eigen::Index>(n)) = grid.point(n).transpose();
    if (grid.is_interior(n)) interior_.push_back(static_cast<Eigen::Index>(n));
  }
}

PenaltyResult PenaltyEvaluator::operator()(const Eigen::MatrixXd& v, const PenaltyWeights& w,
                                           const PenaltyShift* shift) const {
  const Grid& grid = *grid_;
  const auto k = static_cast<Eigen::Index>(grid.dim());
  if (v.cols() != k || v.rows() != static_cast<Eigen::Index>(grid.size())) {
    throw Error(ErrorKind::shape, "penalty: expected k axes for k channels");
  }
  const auto N = v.rows();
  const Eigen::VectorXd& q = grid.weights();
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(N, k);
  double value = 0.0;
  const bool has_u = shift && !shift->asym.empty();
  const bool has_v = shift && !shift->nsd.empty();

  // nonnegativity and budget are pointwise
  for (Eigen::Index n = 0; n < N; ++n) {
    for (Eigen::Index i = 0; i < k; ++i) {
      if (v(n, i) < 0.0) {
        value += w.nonneg * q[n] * v(n, i) * v(n, i);
        grad(n, i) += 2.0 * w.nonneg * q[n] * v(n, i);
      }
    }
    if (w.budget != 0.0) {
      const double b = P_.row(n).dot(v.row(n)) - 1.0;
      value += w.budget * q[n] * b * b;
      grad.row(n) += 2.0 * w.budget * q[n] * b * P_.row(n);
    }
  }

  if (w.asym != 0.0 || w.nsd != 0.0) {
    std::vector<Eigen::MatrixXd> dg(static_cast<std::size_t>(k));
    for (Eigen::Index a = 0; a < k; ++a) dg[static_cast<std::size_t>(a)] = D_[static_cast<std::size_t>(a)] * v;
    Eigen::MatrixXd euler = Eigen::MatrixXd::Zero(N, k);  // euler(n,i) = Σ_m p̃_m ∂_m g̃_i
    for (Eigen::Index m = 0; m < k; ++m) euler += P_.col(m).asDiagonal() * dg[static_cast<std::size_t>(m)];

    // dgamma[j](n, i) = ∂Φ/∂S_ij at node n
    std::vector<Eigen::MatrixXd> dgamma(static_cast<std::size_t>(k), Eigen::MatrixXd::Zero(N, k));
    Small S(k, k);
    for (const Eigen::Index n : interior_) {
      for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j) S(i, j) = dg[static_cast<std::size_t>(j)](n, i) - euler(n, i) * v(n, j);
      Small G = Small::Zero(k, k);
      if (w.asym != 0.0) {
        Small A = S - S.transpose();
        if (has_u) A += shift->asym[static_cast<std::size_t>(n)];
        value += w.asym * q[n] * A.squaredNorm();
        G += 4.0 * w.asym * q[n] * A;
      }
      if (w.nsd != 0.0) {
        Small sym = 0.5 * (S + S.transpose());
        if (has_v) sym += shift->nsd[static_cast<std::size_t>(n)];
        const Small plus = psd_part(sym);
        value += w.nsd * q[n] * plus.squaredNorm();
        G += 2.0 * w.nsd * q[n] * plus;
      }
      for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j) dgamma[static_cast<std::size_t>(j)](n, i) = G(i, j);
    }

    // chain rule through S_ij = D_j g_i - euler_i g_j
    Eigen::MatrixXd d_euler = Eigen::MatrixXd::Zero(N, k);
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto& Gj = dgamma[static_cast<std::size_t>(j)];
      grad += D_[static_cast<std::size_t>(j)].transpose() * Gj;
      grad.col(j) -= (Gj.cwiseProduct(euler)).rowwise().sum();
      d_euler -= Gj.cwiseProduct(v.col(j).replicate(1, k));
    }
    for (Eigen::Index m = 0; m < k; ++m) {
      grad += D_[static_cast<std::size_t>(m)].transpose() * (P_.col(m).asDiagonal() * d_euler);
    }
  }
  if (!std::isfinite(value) || !grad.allFinite()) throw Error(ErrorKind::numerical, "penalty produced non-finite values");
  return PenaltyResult{value, GridFunction(grid_, std::move(grad))};
}

void PenaltyEvaluator::update_shift(const Eigen::MatrixXd& v, PenaltyShift& shift) const {
  const auto k = static_cast<Eigen::Index>(grid_->dim());
  const std::size_t N = grid_->size();
  if (shift.asym.empty()) shift.asym.assign(N, Eigen::MatrixXd::Zero(k, k));
  if (shift.nsd.empty()) shift.nsd.assign(N, Eigen::MatrixXd::Zero(k, k));
  const SlutskyField s = slutsky_normalized(GridFunction(grid_, v));
  for (const Eigen::Index n : interior_) {
    const auto idx = static_cast<std::size_t>(n);
    const Eigen::MatrixXd& S = s.matrices[idx];
    shift.asym[idx] += S - S.transpose();
    const Small sym = 0.5 * (S + S.transpose()) + shift.nsd[idx];
    shift.nsd[idx] = psd_part(sym);
  }
}

Eigen::SparseMatrix<double> PenaltyEvaluator::gauss_newton(const Eigen::MatrixXd& v, const PenaltyWeights& w,
                                                          const PenaltyShift* shift) const {
  const auto k = static_cast<Eigen::Index>(grid_->dim());
  const auto N = v.rows();
  const Eigen::VectorXd& q = grid_->weights();
  const bool has_v = shift && !shift->nsd.empty();
  using Row = std::map<Eigen::Index, double>;  // sparse row over n + N·i

  std::vector<Eigen::Triplet<double>> jt;  // Jacobian triplets
  Eigen::Index rows = 0;
  auto emit = [&](const Row& r, double scale) {
    for (const auto& [c, x] : r) jt.emplace_back(rows, c, scale * x);
    ++rows;
  };
  std::vector<Eigen::MatrixXd> dg(static_cast<std::size_t>(k));
  for (Eigen::Index a = 0; a < k; ++a) dg[static_cast<std::size_t>(a)] = D_[static_cast<std::size_t>(a)] * v;

  for (const Eigen::Index n : interior_) {
    // euler row: Σ_m p̃_m D_m[n, :]
    Row euler_row;
    for (Eigen::Index m = 0; m < k; ++m)
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Drow_[static_cast<std::size_t>(m)], n); it; ++it)
        euler_row[it.col()] += P_(n, m) * it.value();
    Eigen::VectorXd euler(k);
    Small S(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
      euler[i] = 0.0;
      for (Eigen::Index m = 0; m < k; ++m) euler[i] += P_(n, m) * dg[static_cast<std::size_t>(m)](n, i);
    }
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j < k; ++j) S(i, j) = dg[static_cast<std::size_t>(j)](n, i) - euler[i] * v(n, j);
    // dS[i][j] = D_j[n,:] on channel i - g_j(n)·euler_row on channel i - euler_i(n) at (n, j)
    auto dS = [&](Eigen::Index i, Eigen::Index j, double c, Row& out) {
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Drow_[static_cast<std::size_t>(j)], n); it; ++it)
        out[it.col() + N * i] += c * it.value();
      for (const auto& [col, x] : euler_row) out[col + N * i] -= c * v(n, j) * x;
      out[n + N * j] -= c * euler[i];
    };
    if (w.asym != 0.0) {
      const double sc = std::sqrt(w.asym * q[n]);
      for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j) {
          if (i == j) continue;
          Row r;
          dS(i, j, 1.0, r);
          dS(j, i, -1.0, r);
          emit(r, sc);
        }
    }
    if (w.nsd != 0.0) {
      Small sym = 0.5 * (S + S.transpose());
      if (has_v) sym += shift->nsd[static_cast<std::size_t>(n)];
      const double sc = std::sqrt(w.nsd * q[n]);
      Eigen::SelfAdjointEigenSolver<Small> es(sym);
      for (Eigen::Index e = 0; e < k; ++e) {
        if (es.eigenvalues()[e] <= 0.0) continue;
        const auto vec = es.eigenvectors().col(e);
        Row r;
        for (Eigen::Index i = 0; i < k; ++i)
          for (Eigen::Index j = 0; j < k; ++j) dS(i, j, vec[i] * vec[j], r);
        emit(r, sc);
      }
    }
  }
  Eigen::SparseMatrix<double> J(rows, N * k);
  J.setFromTriplets(jt.begin(), jt.end());
  return Eigen::SparseMatrix<double>(J.transpose() * J);
}

PenaltyResult penalty(const GridFunction& gtilde, const PenaltyWeights& w) {
  return PenaltyEvaluator(gtilde.grid())(gtilde.values(), w);
}

Eigen::VectorXd project_budget_node(const Eigen::VectorXd& y, const Eigen::VectorXd& p) {
  // g_i = max(0, y_i - λ p_i) with Σ p_i g_i = 1; φ(λ) is piecewise linear and
  // decreasing, with breakpoints at y_i / p_i.
  const auto k = y.size();
  std::vector<double> br(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) br[static_cast<std::size_t>(i)] = y[i] / p[i];
  std::sort(br.begin(), br.end(), std::greater<>());
  double sum_py = 0.0, sum_pp = 0.0;
  double lambda = 0.0;
  for (std::size_t m = 0; m < br.size(); ++m) {
    // active set: the m+1 largest ratios
    for (Eigen::Index i = 0; i < k; ++i) {
      if (y[i] / p[i] == br[m]) {
        sum_py += p[i] * y[i];
        sum_pp += p[i] * p[i];
      }
    }
    while (m + 1 < br.size() && br[m + 1] == br[m]) ++m;
    lambda = (sum_py - 1.0) / sum_pp;
    const double next = m + 1 < br.size() ? br[m + 1] : -std::numeric_limits<double>::infinity();
    if (lambda >= next) break;
  }
  Eigen::VectorXd g(k);
  for (Eigen::Index i = 0; i < k; ++i) g[i] = std::max(0.0, y[i] - lambda * p[i]);
  return g;
}

GridFunction project_budget(const GridFunction& gtilde) {
  const Grid& grid = *gtilde.grid();
  Eigen::MatrixXd out(gtilde.values().rows(), gtilde.values().cols());
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const auto row = static_cast<Eigen::Index>(n);
    out.row(row) = project_budget_node(gtilde.values().row(row).transpose(), grid.point(n)).transpose();
  }
  return GridFunction(gtilde.grid(), std::move(out));
}

double tau_estimate(const GridFunction& zeta, const GridFunction& gdag,
                    const std::vector<GridFunction>& samples) {
  if (samples.empty()) throw Error(ErrorKind::input, "tau_estimate: empty sample set");
  require_same_shape(zeta, gdag, "tau_estimate");
  double tau = 0.0;
  const double floor = 1e-10 * (1.0 + norm_l2(gdag));
  for (const auto& g : samples) {
    require_same_shape(g, gdag, "tau_estimate");
    const GridFunction d = g - gdag;
    const double dd = inner_l2(d, d);
    if (std::sqrt(dd) <= floor) continue;  // round-off copies of g†
    tau = std::max(tau, inner_l2(zeta, d) / dd);
  }
  return tau;
}

SourceConditionDiagnostic source_condition_fit(const GridFunction& gdag, const DiscreteOperator& T,
                                               SobolevWeight w, const OperatorConstants& consts,
                                               const std::vector<GridFunction>& samples,
                                               const SourceFitOptions& opts) {
  if (!same_grid(gdag.grid(), T.source())) throw Error(ErrorKind::shape, "source_condition_fit: g† is not on the source grid");
  const double defect = neumann_defect(gdag);
  const double floor = 1e-12 * (1.0 + gdag.values().cwiseAbs().maxCoeff());
  if (opts.require_neumann && defect > opts.neumann_tolerance * max_abs_gradient(gdag) + floor) {
    throw Error(ErrorKind::precondition, "g† violates the Neumann boundary condition (defect " +
                                             format_double(defect) + ")");
  }
  // r = 2(μg† - Δg†)
  GridFunction r = laplacian(gdag);
  r *= -2.0;
  r += (2.0 * w.mu) * gdag;

  // (K Q_X^{-1} Kᵀ Q_W + ε) ω = K r, the operator form of min ‖T*ω - r‖² + ε‖ω‖²
  const Eigen::MatrixXd& K = T.kernel();
  const Eigen::VectorXd& qx = T.source()->weights();
  const Eigen::VectorXd& qw = T.target()->weights();
  Eigen::MatrixXd normal = K * qx.cwiseInverse().asDiagonal() * K.transpose() * qw.asDiagonal();
  // symmetrize in the Q_W inner product: multiply through by Q_W
  Eigen::MatrixXd lhs = qw.asDiagonal() * normal;
  lhs += opts.ridge * Eigen::MatrixXd(qw.asDiagonal());
  lhs = 0.5 * (lhs + lhs.transpose()).eval();
  const Eigen::MatrixXd rhs = qw.asDiagonal() * (K * r.values());
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(lhs);
  if (ldlt.info() != Eigen::Success) throw Error(ErrorKind::numerical, "source-condition normal equations failed");
  Eigen::MatrixXd omega = ldlt.solve(rhs);
  if (!omega.allFinite()) throw Error(ErrorKind::numerical, "source-condition solve produced non-finite values");

  SourceConditionDiagnostic d{GridFunction(T.target(), std::move(omega)), r, 0, 0, 0, 0, 0, false, defect};
  d.zeta = r - adjoint_apply(T, d.omega);
  d.omega_norm = norm_l2(d.omega);
  d.residual_norm = norm_l2(d.zeta);
  if (!samples.empty()) d.tau_hat = tau_estimate(-1.0 * d.zeta, gdag, samples);
  const double chain = consts.d_const > 0.0
                           ? consts.op_norm / consts.d_const + 1.0 / consts.d_const + 1.0
                           : std::numeric_limits<double>::infinity();
  d.e_const = consts.a_const * consts.a_const * chain * chain * d.tau_hat;
  if (d.tau_hat == 0.0) d.e_const = 0.0;
  d.beta = w.mu > 0.0 ? 1.0 - d.tau_hat / w.mu : 1.0 - d.e_const;
  d.smallness_ok = d.beta > 0.0;
  return d;
}

VariationalReport variational_inequality_check(const GridFunction& gdag, double beta, double C,
                                               SobolevWeight w, const DiscreteOperator& T,
                                               const std::vector<GridFunction>& samples, double s) {
  VariationalReport rep;
  const double base = sobolev_mu_norm_sq(gdag, w);
  for (const auto& g : samples) {
    const GridFunction d = g - gdag;
    const double td = norm_l2(apply(T, d));
    if (!(td < s)) {
      ++rep.skipped;
      continue;
    }
    ++rep.evaluated;
    const double lhs = beta * sobolev_mu_norm_sq(d, w);
    const double rhs = sobolev_mu_norm_sq(g, w) - base + C * td;
    const double margin = lhs - rhs;
    rep.worst_margin = std::max(rep.worst_margin, margin);
    if (margin > 1e-12 * std::max(1.0, base)) ++rep.violations;
  }
  return rep;
}

std::string to_key_value(const ConstraintReport& r) {
  std::ostringstream out;
  out << "nonneg_violation=" << format_double(r.nonneg_violation) << '\n'
      << "budget_violation=" << format_double(r.budget_violation) << '\n'
      << "homogeneity_violation=" << format_double(r.homogeneity_violation) << '\n'
      << "slutsky_asym=" << format_double(r.slutsky_asym) << '\n'
      << "slutsky_psd_excess=" << format_double(r.slutsky_psd_excess) << '\n'
      << "member=" << (r.member ? "true" : "false") << '\n';
  return out.str();
}

std::string csv_header(const ConstraintReport&) {
  return "nonneg_violation,budget_violation,homogeneity_violation,slutsky_asym,slutsky_psd_excess,member";
}

std::string csv_row(const ConstraintReport& r) {
  return format_double(r.nonneg_violation) + ',' + format_double(r.budget_violation) + ',' +
         format_double(r.homogeneity_violation) + ',' + format_double(r.slutsky_asym) + ',' +
         format_double(r.slutsky_psd_excess) + ',' + (r.member ? "1" : "0");
}

std::string to_key_value(const SourceConditionDiagnostic& d) {
  std::ostringstream out;
  out << "omega_norm=" << format_double(d.omega_norm) << '\n'
      << "residual_norm=" << format_double(d.residual_norm) << '\n'
      << "tau_hat=" << format_double(d.tau_hat) << '\n'
      << "e_const=" << format_double(d.e_const) << '\n'
      << "beta=" << format_double(d.beta) << '\n'
      << "smallness_ok=" << (d.smallness_ok ? "true" : "false") << '\n'
      << "neumann_defect=" << format_double(d.neumann_defect) << '\n';
  return out.str();
}

std::string csv_header(const SourceConditionDiagnostic&) {
  return "omega_norm,residual_norm,tau_hat,e_const,beta,smallness_ok,neumann_defect";
}

std::string csv_row(const SourceConditionDiagnostic& d) {
  return format_double(d.omega_norm) + ',' + format_double(d.residual_norm) + ',' +
         format_double(d.tau_hat) + ',' + format_double(d.e_const) + ',' + format_double(d.beta) +
         ',' + (d.smallness_ok ? "1" : "0") + ',' + format_double(d.neumann_defect);
}

}  // namespace ivtik
