#include <doctest.h>

#include "ivtik/error.hpp"
#include "ivtik/tikhonov.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace ivtik;

namespace {

GridPtr box(int dim, double lo, double hi, int n, AxisRole role = AxisRole::positive) {
  return make_grid(Grid::build(std::vector<Interval>(static_cast<std::size_t>(dim), {lo, hi}),
                               std::vector<int>(static_cast<std::size_t>(dim), n), role));
}

// Source over (p_1..p_k, z) ∈ [1,2]^{k+1}, instruments on [0,1]^{k+1}.
DiscreteOperator smooth_operator(int k, int n) {
  const auto src = box(k + 1, 1.0, 2.0, n);
  const auto tgt = box(k + 1, 0.0, 1.0, n, AxisRole::free);
  const auto f = [](const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
    double v = 1.0;
    for (Eigen::Index a = 0; a < x.size(); ++a) v += 0.5 * std::cos(M_PI * (x[a] - 1.0)) * std::cos(M_PI * w[a]) / (a + 1);
    return v;
  };
  return assemble_operator(f, [](const Eigen::VectorXd&) { return 1.0; }, src, tgt);
}

GridFunction cobb_douglas(const GridPtr& g, const Eigen::VectorXd& a) {
  Eigen::MatrixXd v(static_cast<Eigen::Index>(g->size()), a.size());
  for (std::size_t n = 0; n < g->size(); ++n)
    for (Eigen::Index i = 0; i < a.size(); ++i)
      v(static_cast<Eigen::Index>(n), i) = a[i] / g->coordinate(n, static_cast<std::size_t>(i));
  return GridFunction(g, v);
}

TikhonovProblem exact_problem(int k, int n, int res, const Eigen::VectorXd& a, double alpha) {
  auto op = smooth_operator(k, n);
  TikhonovProblem p{.op = op, .rhs = GridFunction::zeros(op.target(), k), .normalized = normalized_grid_for(*op.source(), res)};
  p.rhs = apply(p.op, expand_homogeneous(cobb_douglas(p.normalized, a), p.op.source()));
  p.alpha = alpha;
  return p;
}

double rel_error(const GridFunction& a, const GridFunction& b) { return norm_l2(a - b) / norm_l2(b); }

}  // namespace

TEST_CASE("normalized grid covers p/z over the source box") {
  const Grid src = Grid::build({{1.0, 3.0}, {2.0, 4.0}, {0.5, 2.0}}, {3, 3, 3});
  const auto g = normalized_grid_for(src, 7);
  REQUIRE(g->dim() == 2);
  CHECK(g->bounds(0).lo == doctest::Approx(0.5));
  CHECK(g->bounds(0).hi == doctest::Approx(6.0));
  CHECK(g->bounds(1).lo == doctest::Approx(1.0));
  CHECK(g->bounds(1).hi == doctest::Approx(8.0));
  CHECK(g->spacing(0) == AxisSpacing::geometric);
  CHECK_THROWS_AS(normalized_grid_for(*box(1, 1, 2, 3), 5), Error);
}

TEST_CASE("functional at the truth and at zero") {
  const Eigen::Vector2d a(0.4, 0.6);
  auto p = exact_problem(2, 4, 7, a, 0.3);
  const auto gdag = cobb_douglas(p.normalized, a);
  const auto g = expand_homogeneous(gdag, p.op.source());
  CHECK(tikhonov_value(gdag, p) == doctest::Approx(0.3 * sobolev_mu_norm_sq(g, p.mu)).epsilon(1e-12));
  CHECK(data_misfit(gdag, p) < 1e-24);
  const auto zero = GridFunction::zeros(p.normalized, 2);
  CHECK(tikhonov_value(zero, p) == doctest::Approx(inner_l2(p.rhs, p.rhs)).epsilon(1e-14));
}

TEST_CASE("functional arithmetic on constants") {
  // misfit 0.2² = 0.04, ‖1‖²_1 = 1, α = 0.1
  auto op = smooth_operator(1, 5);
  TikhonovProblem p{.op = op,
                    .rhs = GridFunction::constant(op.target(), Eigen::VectorXd::Constant(1, 1.2)),
                    .normalized = normalized_grid_for(*op.source(), 9)};
  p.alpha = 0.1;
  const auto one = GridFunction::constant(p.normalized, Eigen::VectorXd::Constant(1, 1.0));
  CHECK(tikhonov_value(one, p) == doctest::Approx(0.14).epsilon(1e-12));
}

TEST_CASE("validation") {
  auto p = exact_problem(1, 4, 5, Eigen::VectorXd::Constant(1, 1.0), 0.1);
  p.alpha = 0.0;
  CHECK_THROWS_AS(p.validate(), Error);
  p.alpha = 0.1;
  p.rhs = GridFunction::zeros(p.op.source(), 1);
  CHECK_THROWS_AS(p.validate(), Error);
  auto q = exact_problem(1, 4, 5, Eigen::VectorXd::Constant(1, 1.0), 0.1);
  q.normalized = normalized_grid_for(*box(3, 1, 2, 3), 5);
  CHECK_THROWS_AS(q.validate(), Error);
}

TEST_CASE("k = 1: the constraint set is the single field 1/p") {
  auto p = exact_problem(1, 5, 9, Eigen::VectorXd::Constant(1, 1.0), 0.5);
  p.rhs *= 1.7;  // data do not matter
  const auto r = solve(p);
  CHECK(r.penalty_residuals.member);
  CHECK(rel_error(r.minimizer, cobb_douglas(p.normalized, Eigen::VectorXd::Constant(1, 1.0))) < 1e-12);
}

TEST_CASE("exact data recover Cobb-Douglas as alpha shrinks") {
  const Eigen::Vector2d a(0.4, 0.6);
  double previous = 1e300;
  double first = 0.0;
  for (double alpha : {1e-1, 1e-2, 1e-3, 1e-4}) {
    auto p = exact_problem(2, 5, 9, a, alpha);
    SolverOptions o;
    o.threads = 2;
    const auto r = solve(p, o);
    CHECK(r.penalty_residuals.member);
    const double err = rel_error(r.expanded, expand_homogeneous(cobb_douglas(p.normalized, a), p.op.source()));
    MESSAGE("alpha=" << alpha << " err=" << err << " iterations=" << r.iterations);
    // the truth is feasible, so the minimizer cannot do worse
    CHECK(r.objective <= tikhonov_value(cobb_douglas(p.normalized, a), p));
    CHECK(err <= previous * 1.0001);
    if (alpha == 1e-1) first = err;
    previous = err;
  }
  CHECK(previous < 0.5 * first);
}

TEST_CASE("objective decomposes into misfit and regularization") {
  auto p = exact_problem(2, 4, 7, Eigen::Vector2d(0.3, 0.7), 0.05);
  p.rhs *= 1.1;
  const auto r = solve(p);
  CHECK(r.objective == doctest::Approx(r.data_misfit + p.alpha * r.regularization).epsilon(1e-13));
  CHECK(r.objective == doctest::Approx(tikhonov_value(r.minimizer, p)).epsilon(1e-13));
  CHECK(r.restart_objectives.size() == 5);
  CHECK(r.restart_feasible[static_cast<std::size_t>(r.best_restart)]);
  for (std::size_t i = 0; i < r.restart_objectives.size(); ++i) {
    if (r.restart_feasible[i]) CHECK(r.objective <= r.restart_objectives[i]);
  }
}

TEST_CASE("solve is deterministic across runs and thread counts") {
  auto p = exact_problem(2, 4, 7, Eigen::Vector2d(0.5, 0.5), 0.05);
  p.rhs *= 0.9;
  SolverOptions one, four;
  four.threads = 4;
  const auto a = solve(p, one);
  const auto b = solve(p, one);
  const auto c = solve(p, four);
  CHECK(a.minimizer.values() == b.minimizer.values());
  CHECK(a.minimizer.values() == c.minimizer.values());
  CHECK(a.best_restart == c.best_restart);
  SolverOptions other;
  other.seed = 99;
  const auto d = solve(p, other);
  CHECK(d.restart_objectives[0] == a.restart_objectives[0]);  // restart 0 is seed-independent
}

TEST_CASE("penalized objective decreases within each stage") {
  auto p = exact_problem(2, 4, 7, Eigen::Vector2d(0.4, 0.6), 0.05);
  p.rhs *= 1.2;
  SolverOptions o;
  o.trace = true;
  o.restarts = 2;
  const auto r = solve(p, o);
  REQUIRE(!r.trace.empty());
  int violations = 0;
  for (std::size_t i = 1; i < r.trace.size(); ++i) {
    const auto& s = r.trace[i - 1];
    const auto& t = r.trace[i];
    if (s.restart != t.restart || s.stage != t.stage) continue;
    if (t.objective + t.penalty > (s.objective + s.penalty) * (1 + 1e-12) + 1e-15) ++violations;
  }
  CHECK(violations == 0);
  std::ostringstream csv;
  write_trace_csv(r, csv);
  CHECK(csv.str().rfind("restart,stage,iteration,objective,penalty,step\n", 0) == 0);
}

TEST_CASE("unconstrained mode") {
  SUBCASE("h = 0 gives the zero field") {
    auto p = exact_problem(2, 4, 7, Eigen::Vector2d(0.4, 0.6), 0.1);
    p.rhs *= 0.0;
    p.constrained = false;
    const auto r = solve(p);
    CHECK(r.minimizer.values().cwiseAbs().maxCoeff() < 1e-14);
    CHECK(r.objective < 1e-26);
  }
  SUBCASE("stationarity and monotonicity in alpha") {
    double prev_reg = 1e300, prev_mis = -1.0;
    for (double alpha : {1e-3, 1e-2, 1e-1, 1.0}) {
      auto p = exact_problem(2, 4, 7, Eigen::Vector2d(0.4, 0.6), alpha);
      p.constrained = false;
      const auto r = solve(p);
      // optimality: perturbing in a random direction does not lower the value
      std::mt19937_64 rng(3);
      std::normal_distribution<double> nd;
      Eigen::MatrixXd d(r.minimizer.values().rows(), 2);
      for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = nd(rng);
      for (double eps : {1e-3, -1e-3}) {
        const GridFunction moved(p.normalized, r.minimizer.values() + eps * d);
        CHECK(tikhonov_value(moved, p) >= r.objective);
      }
      CHECK(r.regularization <= prev_reg * (1 + 1e-12));
      CHECK(r.data_misfit >= prev_mis * (1 - 1e-12));
      prev_reg = r.regularization;
      prev_mis = r.data_misfit;
    }
  }
}

TEST_CASE("mu = 0 requires D(T) > 0") {
  auto p = exact_problem(1, 4, 5, Eigen::VectorXd::Constant(1, 1.0), 0.1);
  p.mu = SobolevWeight(0.0);
  CHECK_NOTHROW(solve(p));
  // kernel that annihilates constants
  Eigen::MatrixXd K = p.op.kernel();
  for (Eigen::Index j = 0; j < K.rows(); ++j) K.row(j).array() -= K.row(j).sum() / static_cast<double>(K.cols());
  TikhonovProblem q{.op = DiscreteOperator(p.op.source(), p.op.target(), K), .rhs = p.rhs, .normalized = p.normalized};
  q.mu = SobolevWeight(0.0);
  try {
    solve(q);
    FAIL("expected a precondition error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::precondition);
  }
}

TEST_CASE("infeasible restarts are rejected") {
  auto p = exact_problem(2, 4, 7, Eigen::Vector2d(0.4, 0.6), 0.05);
  SolverOptions o;
  o.stages = 0;  // projection only: perturbed starts keep their Slutsky asymmetry
  o.restarts = 3;
  const auto r = solve(p, o);
  CHECK(r.best_restart == 0);
  CHECK(r.restart_feasible == std::vector<bool>{true, false, false});
}

TEST_CASE("equal-share field lies in X") {
  const auto g = normalized_grid_for(*box(3, 1, 2, 3), 9);
  const auto f = equal_share_field(g, 2);
  CHECK(check_membership_normalized(f).member);
}

TEST_CASE("feasible samples and restoration") {
  const auto g = normalized_grid_for(*box(3, 1, 2, 3), 7);
  const auto gdag = cobb_douglas(g, Eigen::Vector2d(0.4, 0.6));
  const auto samples = feasible_samples(gdag, {0.05, 0.2}, 3, 11, SolverOptions{});
  CHECK(samples.size() >= 4);
  for (const auto& s : samples) {
    CHECK(check_membership_normalized(s, ConstraintTolerances::uniform(1e-4)).member);
    CHECK(norm_l2(s - gdag) > 0.0);
  }
}

TEST_CASE("deterministic parameter choice") {
  CHECK(choose_alpha_deterministic(0.01, 0.02) == doctest::Approx(0.02));
  CHECK(choose_alpha_deterministic(0.05, 0.0, 3.0) == doctest::Approx(0.15));
  CHECK_THROWS_AS(choose_alpha_deterministic(0.0, 0.0), Error);
  CHECK_THROWS_AS(choose_alpha_deterministic(0.1, 0.1, 0.0), Error);
  CHECK_THROWS_AS(choose_alpha_deterministic(-0.1, 0.1), Error);
}

TEST_CASE("stochastic parameter schedule") {
  // k = 1, ρ = 2: α = n^{-1/4}, σ = n^{-1/8}
  const auto s = choose_parameters_stochastic(10000, 1, 2);
  CHECK(s.alpha == doctest::Approx(0.1));
  CHECK(s.sigma == doctest::Approx(std::pow(10.0, -0.5)));
  // k = 2, ρ = 3: α = 2 n^{-3/12}, σ = 0.5 n^{-1/12}
  const auto t = choose_parameters_stochastic(4096, 2, 3, 2.0, 0.5);
  CHECK(t.alpha == doctest::Approx(2.0 / 8.0));
  CHECK(t.sigma == doctest::Approx(0.5 / 2.0));
  try {
    choose_parameters_stochastic(1000, 1, 1);
    FAIL("expected an assumption error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::assumption);
  }
}

TEST_CASE("Bregman distance of the mu-norm is the squared mu-distance") {
  const auto g = box(2, 0.0, 1.0, 9, AxisRole::free);
  const auto fields = random_fields(g, 2, 40, 7);
  for (int i = 0; i < 20; ++i) {
    const auto gdag = enforce_discrete_neumann(fields[static_cast<std::size_t>(2 * i)]);
    const auto other = fields[static_cast<std::size_t>(2 * i + 1)];
    for (double mu : {0.0, 0.5, 2.0}) {
      const SobolevWeight w(mu);
      const double expected = sobolev_mu_norm_sq(other - gdag, w);
      CHECK(bregman_distance(other, gdag, w) == doctest::Approx(expected).epsilon(1e-6));
    }
  }
}

TEST_CASE("Bregman distance special cases") {
  const auto g = box(2, 0.0, 1.0, 7, AxisRole::free);
  const auto c = GridFunction::constant(g, Eigen::VectorXd::Constant(1, 2.5));
  const auto f = random_fields(g, 1, 1, 4)[0];
  CHECK(bregman_distance(f, c, SobolevWeight(0.0)) == doctest::Approx(gradient_norm_sq(f)).epsilon(1e-12));
  CHECK(bregman_distance(c, c, SobolevWeight(1.0)) == doctest::Approx(0.0));
  CHECK_THROWS_AS(bregman_distance(c, f, SobolevWeight(1.0)), Error);
}

TEST_CASE("result serialization") {
  auto p = exact_problem(1, 4, 5, Eigen::VectorXd::Constant(1, 1.0), 0.1);
  const auto r = solve(p);
  const auto kv = to_key_value(r);
  CHECK(kv.find("objective=") != std::string::npos);
  CHECK(kv.find("restart_objectives=") != std::string::npos);
  CHECK(kv.find("best_restart=0") != std::string::npos);
}
