#include "ivtik/tikhonov.hpp"

#include "ivtik/parallel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <sstream>

namespace ivtik {

GridPtr normalized_grid_for(const Grid& source, int resolution) {
  const std::size_t k = source.dim() - 1;
  if (k == 0) throw Error(ErrorKind::shape, "source grid needs price axes and a budget axis");
  const auto& zb = source.bounds(k);
  std::vector<Interval> bounds;
  for (std::size_t j = 0; j < k; ++j) {
    const auto& pb = source.bounds(j);
    bounds.push_back({pb.lo / zb.hi, pb.hi / zb.lo});
  }
  return make_grid(Grid::build_geometric(bounds, std::vector<int>(k, resolution)));
}

void TikhonovProblem::validate() const {
  if (!(alpha > 0.0)) throw Error(ErrorKind::precondition, "alpha must be positive");
  if (!same_grid(rhs.grid(), op.target())) throw Error(ErrorKind::shape, "right-hand side is not on the operator's target grid");
  if (!normalized) throw Error(ErrorKind::shape, "missing normalized-price grid");
  if (normalized->dim() + 1 != op.source()->dim()) {
    throw Error(ErrorKind::shape, "normalized grid must have one axis fewer than the source grid");
  }
  if (rhs.channels() != static_cast<int>(normalized->dim())) {
    throw Error(ErrorKind::shape, "right-hand side must have one channel per good");
  }
}

double data_misfit(const GridFunction& gtilde, const TikhonovProblem& prob) {
  const GridFunction r = apply(prob.op, expand_homogeneous(gtilde, prob.op.source())) - prob.rhs;
  return inner_l2(r, r);
}

double tikhonov_value(const GridFunction& gtilde, const TikhonovProblem& prob) {
  if (!same_grid(gtilde.grid(), prob.normalized)) throw Error(ErrorKind::shape, "field is not on the problem's normalized grid");
  const GridFunction g = expand_homogeneous(gtilde, prob.op.source());
  const GridFunction r = apply(prob.op, g) - prob.rhs;
  return inner_l2(r, r) + prob.alpha * sobolev_mu_norm_sq(g, prob.mu);
}

namespace {

// F(G) = tr(GᵀHG) - 2 tr(BᵀG) + c, the Tikhonov functional on the normalized
// representation.
struct Quadratic {
  Eigen::MatrixXd H;
  Eigen::MatrixXd B;
  double c = 0.0;

  double value(const Eigen::MatrixXd& G) const {
    return (G.transpose() * (H * G)).trace() - 2.0 * (B.cwiseProduct(G)).sum() + c;
  }
  Eigen::MatrixXd gradient(const Eigen::MatrixXd& G) const { return 2.0 * (H * G - B); }
};

Quadratic build_quadratic(const TikhonovProblem& prob) {
  const Grid& X = *prob.op.source();
  const Eigen::SparseMatrix<double> E = expansion_matrix(*prob.normalized, X);
  const Eigen::MatrixXd A = prob.op.kernel() * E;
  const Eigen::VectorXd& qw = prob.op.target()->weights();
  Eigen::SparseMatrix<double> R = stiffness_matrix(X);
  for (Eigen::Index i = 0; i < R.rows(); ++i) R.coeffRef(i, i) += prob.mu.mu * X.weights()[i];
  Quadratic q;
  q.H = A.transpose() * qw.asDiagonal() * A;
  q.H += prob.alpha * Eigen::MatrixXd(E.transpose() * (R * E));
  q.H = 0.5 * (q.H + q.H.transpose()).eval();
  q.B = A.transpose() * (qw.asDiagonal() * prob.rhs.values());
  q.c = (prob.rhs.values().transpose() * qw.asDiagonal() * prob.rhs.values()).trace();
  return q;
}

struct DescentOutcome {
  Eigen::MatrixXd G;
  int iterations = 0;
  int stages = 0;
  bool converged = true;  // every stage met the gradient tolerance
};

// Orthonormal basis of {x : ⟨p̃_n, x⟩ = 0} per node, as a sparse map from
// reduced coordinates (n + N·c) to full ones (n + N·i).
Eigen::SparseMatrix<double> budget_tangent_basis(const Grid& grid) {
  const auto N = static_cast<Eigen::Index>(grid.size());
  const auto k = static_cast<Eigen::Index>(grid.dim());
  std::vector<Eigen::Triplet<double>> t;
  for (Eigen::Index n = 0; n < N; ++n) {
    const Eigen::VectorXd p = grid.point(static_cast<std::size_t>(n));
    const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(p).householderQ() * Eigen::MatrixXd::Identity(k, k);
    for (Eigen::Index c = 0; c + 1 < k; ++c)
      for (Eigen::Index i = 0; i < k; ++i) t.emplace_back(n + N * i, n + N * c, Q(i, c + 1));
  }
  Eigen::SparseMatrix<double> Z(N * k, N * (k - 1));
  Z.setFromTriplets(t.begin(), t.end());
  return Z;
}

// Augmented Lagrangian on the Slutsky terms. Each stage is minimized by
// damped Gauss-Newton steps in the budget tangent space, projected back onto
// {g ≥ 0, ⟨p̃, g⟩ = 1} with Armijo backtracking. The weight grows only when a
// stage fails to cut the violation by 4x.
DescentOutcome descend(const GridPtr& grid, Eigen::MatrixXd G, const Quadratic* quad, const SolverOptions& opts,
                       int restart, std::vector<TraceRow>* trace) {
  const Eigen::VectorXd& q = grid->weights();
  const Eigen::VectorXd qinv = q.cwiseInverse();
  const auto N = static_cast<Eigen::Index>(grid->size());
  const auto k = static_cast<Eigen::Index>(grid->dim());
  auto project = [&](const Eigen::MatrixXd& M) { return project_budget(GridFunction(grid, M)).values(); };
  auto weighted_norm = [&](const Eigen::MatrixXd& M) { return std::sqrt((q.asDiagonal() * M.cwiseAbs2()).sum()); };

  DescentOutcome out;
  G = project(G);
  if (k == 1) {  // the budget fixes g̃ = 1/p̃
    out.G = std::move(G);
    return out;
  }
  const PenaltyEvaluator penalty(grid);
  const Eigen::SparseMatrix<double> Z = budget_tangent_basis(*grid);
  const Eigen::SparseMatrix<double> Zt = Z.transpose();
  PenaltyShift shift;
  auto violation = [&](const Eigen::MatrixXd& M) {
    const auto r = check_membership_normalized(GridFunction(grid, M));
    return std::max(r.slutsky_asym, r.slutsky_psd_excess);
  };

  double weight = opts.initial_weight;
  double last_violation = violation(G);
  double damping = 1e-6;
  for (int stage = 0; stage < opts.stages; ++stage) {
    const PenaltyWeights pw{0.0, 0.0, weight, weight};
    auto evaluate = [&](const Eigen::MatrixXd& M, double& pen, Eigen::MatrixXd& grad) {
      PenaltyResult p = penalty(M, pw, &shift);
      pen = p.value;
      grad = std::move(p.gradient.values());
      double f = pen;
      if (quad) {
        f += quad->value(M);
        grad += quad->gradient(M);
      }
      return f;
    };
    double pen = 0.0;
    Eigen::MatrixXd grad;
    double phi = evaluate(G, pen, grad);
    bool stage_converged = false;
    for (int it = 0; it < opts.max_iterations; ++it) {
      const double pg = weighted_norm(project(G - qinv.asDiagonal() * grad) - G);
      if (pg <= opts.gradient_tolerance * (1.0 + std::abs(phi))) {
        stage_converged = true;
        break;
      }
      // half-Hessian I⊗H + JᵀJ, reduced to the tangent space
      Eigen::MatrixXd M = Eigen::MatrixXd(penalty.gauss_newton(G, pw, &shift));
      if (quad) {
        for (Eigen::Index i = 0; i < k; ++i) M.block(N * i, N * i, N, N) += quad->H;
      }
      Eigen::MatrixXd R = Zt * (M * Z);
      R = 0.5 * (R + R.transpose()).eval();
      const double scale = std::max(R.diagonal().cwiseAbs().maxCoeff(), 1e-300);
      const Eigen::VectorXd rhs = -0.5 * (Zt * Eigen::Map<const Eigen::VectorXd>(grad.data(), grad.size()));

      Eigen::MatrixXd trial, trial_grad;
      double trial_phi = 0.0, trial_pen = 0.0, t = 1.0;
      bool accepted = false;
      for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
        Eigen::MatrixXd Rd = R;
        Rd.diagonal().array() += damping * scale;
        Eigen::LLT<Eigen::MatrixXd> llt(Rd);
        if (llt.info() != Eigen::Success) {
          damping *= 10.0;
          continue;
        }
        const Eigen::VectorXd dy = Z * llt.solve(rhs);
        const Eigen::Map<const Eigen::MatrixXd> dir(dy.data(), N, k);
        t = 1.0;
        for (int bt = 0; bt < 30; ++bt, t *= 0.5) {
          trial = project(G + t * dir);
          const double decrease = (grad.cwiseProduct(trial - G)).sum();
          if (!(decrease < 0.0)) continue;
          trial_phi = evaluate(trial, trial_pen, trial_grad);
          if (trial_phi <= phi + opts.armijo * decrease) {
            accepted = true;
            break;
          }
        }
        if (!accepted) damping *= 10.0;
      }
      if (!accepted) {
        stage_converged = true;  // no further decrease representable
        break;
      }
      damping = t == 1.0 ? std::max(damping * 0.1, 1e-12) : std::min(damping * 4.0, 1e6);
      const double gain = phi - trial_phi;
      G = std::move(trial);
      grad = std::move(trial_grad);
      phi = trial_phi;
      pen = trial_pen;
      ++out.iterations;
      if (trace) trace->push_back({restart, stage, it, phi - pen, pen, t});
      if (gain <= opts.stall_tolerance * (1.0 + std::abs(phi))) {
        stage_converged = true;
        break;
      }
    }
    out.converged = out.converged && stage_converged;
    ++out.stages;
    const double v = violation(G);
    if (v <= 0.1 * opts.feasibility_tolerance) break;
    penalty.update_shift(G, shift);
    if (v > 0.25 * last_violation) {
      // keep the multipliers w·U, w·V fixed across the weight change
      weight *= opts.weight_factor;
      for (auto& m : shift.asym) m /= opts.weight_factor;
      for (auto& m : shift.nsd) m /= opts.weight_factor;
    }
    last_violation = v;
  }
  out.G = std::move(G);
  return out;
}

Eigen::MatrixXd perturbed_start(const Eigen::MatrixXd& base, std::uint64_t seed, int restart, double std_dev) {
  if (restart == 0) return base;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(restart)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> nd(0.0, std_dev);
  Eigen::MatrixXd out = base;
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] *= std::exp(nd(rng));
  return out;
}

bool within(const ConstraintReport& r, double tol) {
  return r.nonneg_violation <= tol && r.budget_violation <= tol && r.homogeneity_violation <= tol &&
         r.slutsky_asym <= tol && r.slutsky_psd_excess <= tol;
}

}  // namespace

GridFunction equal_share_field(const GridPtr& normalized, int k) {
  Eigen::MatrixXd v(static_cast<Eigen::Index>(normalized->size()), k);
  for (std::size_t n = 0; n < normalized->size(); ++n)
    for (int i = 0; i < k; ++i)
      v(static_cast<Eigen::Index>(n), i) = 1.0 / (k * normalized->coordinate(n, static_cast<std::size_t>(i)));
  return GridFunction(normalized, std::move(v));
}

SolveResult solve(const TikhonovProblem& prob, const SolverOptions& opts) {
  prob.validate();
  const int k = prob.rhs.channels();
  if (prob.mu.mu == 0.0) {
    const double d = d_constant(prob.op, k).value;
    if (!(d > opts.degeneracy_tolerance)) {
      throw Error(ErrorKind::precondition, "mu = 0 requires T to keep nonzero constants away from zero");
    }
  }
  const Quadratic quad = build_quadratic(prob);
  auto finish = [&](Eigen::MatrixXd G) {
    SolveResult r(GridFunction(prob.normalized, std::move(G)), GridFunction::zeros(prob.op.source(), k));
    r.expanded = expand_homogeneous(r.minimizer, prob.op.source());
    r.data_misfit = data_misfit(r.minimizer, prob);
    r.regularization = sobolev_mu_norm_sq(r.expanded, prob.mu);
    r.objective = r.data_misfit + prob.alpha * r.regularization;
    r.penalty_residuals = check_membership_normalized(r.minimizer, ConstraintTolerances::uniform(opts.feasibility_tolerance));
    return r;
  };

  if (!prob.constrained) {
    // Nodes of the normalized grid that no p/z reaches are invisible to the
    // functional; the minimum-norm solution fixes them at zero.
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(quad.H);
    cod.setThreshold(1e-13);
    SolveResult r = finish(cod.solve(quad.B));
    r.restarts = 1;
    r.restart_objectives = {r.objective};
    r.restart_feasible = {r.penalty_residuals.member};
    r.converged = true;
    return r;
  }

  const Eigen::MatrixXd base = equal_share_field(prob.normalized, k).values();
  const auto n = static_cast<std::size_t>(std::max(1, opts.restarts));
  std::vector<SolveResult> results;
  results.reserve(n);
  for (std::size_t i = 0; i < n; ++i) results.push_back(finish(base));
  parallel_for(n, opts.threads, [&](std::size_t i) {
    std::vector<TraceRow> trace;
    const auto start = perturbed_start(base, opts.seed, static_cast<int>(i), opts.perturbation_std);
    DescentOutcome d = descend(prob.normalized, start, &quad, opts, static_cast<int>(i), opts.trace ? &trace : nullptr);
    SolveResult r = finish(std::move(d.G));
    r.iterations = d.iterations;
    r.converged = d.converged;
    r.trace = std::move(trace);
    results[i] = std::move(r);
  });

  // lowest objective among feasible restarts, ties to the lowest index
  int best = -1;
  std::vector<double> objectives;
  std::vector<bool> feasible;
  for (std::size_t i = 0; i < n; ++i) {
    objectives.push_back(results[i].objective);
    feasible.push_back(within(results[i].penalty_residuals, opts.feasibility_tolerance));
    if (feasible.back() && (best < 0 || results[i].objective < results[static_cast<std::size_t>(best)].objective)) {
      best = static_cast<int>(i);
    }
  }
  std::vector<TraceRow> all_trace;
  for (auto& r : results) all_trace.insert(all_trace.end(), r.trace.begin(), r.trace.end());
  if (best < 0) {
    SolveResult r = std::move(results.front());
    r.restarts = static_cast<int>(n);
    r.restart_objectives = objectives;
    r.restart_feasible = feasible;
    throw InfeasibleSolve("no restart reached the feasibility tolerance:\n" + to_key_value(r.penalty_residuals), std::move(r));
  }
  SolveResult r = std::move(results[static_cast<std::size_t>(best)]);
  r.restarts = static_cast<int>(n);
  r.best_restart = best;
  r.restart_objectives = std::move(objectives);
  r.restart_feasible = std::move(feasible);
  r.trace = std::move(all_trace);
  return r;
}

GridFunction restore_feasibility(const GridFunction& gtilde, const SolverOptions& opts) {
  DescentOutcome d = descend(gtilde.grid(), gtilde.values(), nullptr, opts, 0, nullptr);
  return GridFunction(gtilde.grid(), std::move(d.G));
}

std::vector<GridFunction> feasible_samples(const GridFunction& gdag_tilde, const std::vector<double>& radii,
                                           int per_radius, std::uint64_t seed, const SolverOptions& opts) {
  const double scale = norm_l2(gdag_tilde);
  const auto tol = ConstraintTolerances::uniform(opts.feasibility_tolerance);
  std::vector<GridFunction> out;
  std::uint64_t draw = seed;
  for (double r : radii) {
    const auto fields = random_fields(gdag_tilde.grid(), gdag_tilde.channels(), static_cast<std::size_t>(per_radius), draw++);
    for (auto f : fields) {
      const double fn = norm_l2(f);
      if (fn == 0.0) continue;
      f *= r * scale / fn;
      GridFunction cand = restore_feasibility(project_budget(gdag_tilde + f), opts);
      if (check_membership_normalized(cand, tol).member) out.push_back(std::move(cand));
    }
  }
  return out;
}

double choose_alpha_deterministic(double delta, double gamma, double c) {
  if (!(c > 0.0)) throw Error(ErrorKind::choice, "alpha constant must be positive");
  if (delta < 0.0 || gamma < 0.0) throw Error(ErrorKind::choice, "noise levels must be nonnegative");
  const double m = std::max(delta, gamma);
  if (!(m > 0.0)) throw Error(ErrorKind::choice, "delta = gamma = 0: use exact-data mode with a fixed alpha");
  return c * m;
}

StochasticParameters choose_parameters_stochastic(long long n, int k, int rho, double c_alpha, double c_sigma) {
  if (rho < 2) throw Error(ErrorKind::assumption, "rho = min(l, k+1) must be at least 2");
  if (n < 2) throw Error(ErrorKind::configuration, "sample size must be at least 2");
  if (!(c_alpha > 0.0 && c_sigma > 0.0)) throw Error(ErrorKind::configuration, "schedule constants must be positive");
  const double denom = 2.0 * (k + rho + 1);
  const double nn = static_cast<double>(n);
  return {c_alpha * std::pow(nn, -rho / denom), c_sigma * std::pow(nn, -1.0 / denom)};
}

double bregman_distance(const GridFunction& g, const GridFunction& gdag, SobolevWeight w, double neumann_tolerance) {
  require_same_shape(g, gdag, "bregman_distance");
  const double defect = neumann_defect(gdag);
  const double floor = 1e-12 * (1.0 + gdag.values().cwiseAbs().maxCoeff());
  if (defect > neumann_tolerance * max_abs_gradient(gdag) + floor) {
    throw Error(ErrorKind::precondition, "g† violates the Neumann boundary condition; the subdifferential is empty");
  }
  GridFunction xi = laplacian(gdag);
  xi *= -2.0;
  xi += (2.0 * w.mu) * gdag;
  return sobolev_mu_norm_sq(g, w) - sobolev_mu_norm_sq(gdag, w) - inner_l2(xi, g - gdag);
}

std::string to_key_value(const SolveResult& r) {
  std::ostringstream out;
  out << "objective=" << format_double(r.objective) << '\n'
      << "data_misfit=" << format_double(r.data_misfit) << '\n'
      << "regularization=" << format_double(r.regularization) << '\n'
      << "restarts=" << r.restarts << '\n'
      << "best_restart=" << r.best_restart << '\n'
      << "converged=" << (r.converged ? "true" : "false") << '\n'
      << "iterations=" << r.iterations << '\n';
  out << "restart_objectives=";
  for (std::size_t i = 0; i < r.restart_objectives.size(); ++i) {
    out << (i ? "," : "") << format_double(r.restart_objectives[i]);
  }
  out << '\n' << to_key_value(r.penalty_residuals);
  return out.str();
}

void write_trace_csv(const SolveResult& r, std::ostream& out) {
  out << "restart,stage,iteration,objective,penalty,step\n";
  for (const auto& t : r.trace) {
    out << t.restart << ',' << t.stage << ',' << t.iteration << ',' << format_double(t.objective) << ','
        << format_double(t.penalty) << ',' << format_double(t.step) << '\n';
  }
}

}  // namespace ivtik
