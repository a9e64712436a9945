#include <doctest.h>

#include "ivtik/constraints.hpp"
#include "ivtik/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <cmath>
#include <random>

using namespace ivtik;

namespace {

// g̃_i = a_i / p̃_i on the normalized grid
GridFunction cobb_douglas_normalized(const GridPtr& g, const Eigen::VectorXd& a) {
  Eigen::MatrixXd v(static_cast<Eigen::Index>(g->size()), a.size());
  for (std::size_t n = 0; n < g->size(); ++n)
    for (Eigen::Index i = 0; i < a.size(); ++i)
      v(static_cast<Eigen::Index>(n), i) = a[i] / g->coordinate(n, static_cast<std::size_t>(i));
  return GridFunction(g, v);
}

// g_i = a_i z / p_i on a grid over (p, z)
GridFunction cobb_douglas(const GridPtr& g, const Eigen::VectorXd& a) {
  const auto k = a.size();
  Eigen::MatrixXd v(static_cast<Eigen::Index>(g->size()), k);
  for (std::size_t n = 0; n < g->size(); ++n) {
    const double z = g->coordinate(n, static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < k; ++i)
      v(static_cast<Eigen::Index>(n), i) = a[i] * z / g->coordinate(n, static_cast<std::size_t>(i));
  }
  return GridFunction(g, v);
}

// geometric axis centred (in log) on c with 41 nodes and log-step h
Interval around(double c, double h) { return {c * std::exp(-20 * h), c * std::exp(20 * h)}; }

DiscreteOperator smooth_operator(int n) {
  const auto g = make_grid(Grid::build({{0, 1}}, {n}, AxisRole::free));
  return assemble_operator(
      [](const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
        return 1.0 + 0.8 * std::cos(M_PI * x[0]) * std::cos(M_PI * w[0]);
      },
      [](const Eigen::VectorXd&) { return 1.0; }, g, g);
}

const Eigen::Matrix2d kCdSlutsky = (Eigen::Matrix2d() << -1.0, 0.5, 0.5, -0.25).finished();

}  // namespace

TEST_CASE("Cobb-Douglas Slutsky matrix in normalized form") {
  // (p, z) = ((1, 2), 4) is p̃ = (0.25, 0.5), and S = S̃ / z
  const auto g = make_grid(Grid::build_geometric({around(0.25, 5e-4), around(0.5, 5e-4)}, {41, 41}));
  const auto s = slutsky_normalized(cobb_douglas_normalized(g, Eigen::Vector2d(0.5, 0.5)));
  const auto n = g->flat_index({20, 20});
  const Eigen::MatrixXd S = s.matrices[n] / 4.0;
  CHECK((S - kCdSlutsky).cwiseAbs().maxCoeff() <= 1e-6);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (S + S.transpose()));
  CHECK(std::abs(es.eigenvalues()[0] + 1.25) <= 1e-6);
  CHECK(std::abs(es.eigenvalues()[1]) <= 1e-6);
  CHECK((S * Eigen::Vector2d(1, 2)).norm() <= 1e-6 * S.norm() * std::sqrt(5.0));
}

TEST_CASE("Cobb-Douglas Slutsky matrix on the (p, z) grid") {
  const auto g = make_grid(Grid::build({{0.995, 1.005}, {1.99, 2.01}, {3.98, 4.02}}, {21, 21, 21}));
  const auto s = slutsky(cobb_douglas(g, Eigen::Vector2d(0.5, 0.5)));
  const Eigen::MatrixXd& S = s.matrices[g->flat_index({10, 10, 10})];
  CHECK((S - kCdSlutsky).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("Slutsky of a constant field without budget coupling vanishes") {
  const auto g = make_grid(Grid::build({{1, 2}, {1, 2}, {1, 2}}, {5, 5, 5}));
  const auto s = slutsky(GridFunction::constant(g, Eigen::Vector2d::Zero()));
  for (const auto& S : s.matrices) CHECK(S.cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(slutsky(GridFunction::constant(g, Eigen::Vector3d::Ones())), Error);
}

TEST_CASE("Euler identity: budget-feasible fields satisfy S̃p̃ = 0") {
  const auto g = make_grid(Grid::build_geometric({{0.2, 2.0}, {0.3, 3.0}}, {9, 11}));
  GridFunction y(g, Eigen::MatrixXd::Random(99, 2).array().abs());
  const auto f = project_budget(y);
  const auto s = slutsky_normalized(f);
  for (std::size_t n = 0; n < g->size(); ++n) {
    if (!g->is_interior(n)) continue;
    const Eigen::VectorXd p = g->point(n);
    CHECK((s.matrices[n] * p).norm() <= 1e-6 * s.matrices[n].norm() * p.norm() + 1e-14);
  }
}

TEST_CASE("Cobb-Douglas is symmetric and NSD at interior nodes") {
  const auto g = make_grid(Grid::build_geometric({{0.2, 2.0}, {0.3, 3.0}}, {17, 17}));
  const auto r = check_membership_normalized(cobb_douglas_normalized(g, Eigen::Vector2d(0.3, 0.7)));
  CHECK(r.slutsky_asym <= 1e-8);
  CHECK(r.slutsky_psd_excess <= 1e-8);
  CHECK(r.budget_violation <= 1e-12);
  CHECK(r.member);

  const auto phys = make_grid(Grid::build({{1, 2}, {1, 2}, {2, 4}}, {9, 9, 9}));
  const auto rp = check_membership(cobb_douglas(phys, Eigen::Vector2d(0.3, 0.7)));
  CHECK(rp.slutsky_asym <= 1e-8);
  CHECK(rp.slutsky_psd_excess <= 1e-8);
}

TEST_CASE("membership reports") {
  const auto g = make_grid(Grid::build({{1, 2}, {1, 2}, {1, 2}}, {5, 5, 5}));
  const auto ok = check_membership(cobb_douglas(g, Eigen::Vector2d(0.5, 0.5)));
  CHECK(ok.nonneg_violation <= 1e-6);
  CHECK(ok.budget_violation <= 1e-6);
  CHECK(ok.homogeneity_violation <= 1e-6);
  CHECK(ok.slutsky_asym <= 1e-6);
  CHECK(ok.slutsky_psd_excess <= 1e-6);
  CHECK(ok.member);

  const auto neg = check_membership(GridFunction::constant(g, Eigen::Vector2d(-1, -1)));
  CHECK(neg.nonneg_violation == doctest::Approx(1.0));
  CHECK_FALSE(neg.member);

  const auto over = check_membership(cobb_douglas(g, Eigen::Vector2d(0.6, 0.6)));
  CHECK(over.budget_violation == doctest::Approx(0.2));

  // 0-homogeneity across rays: (1,1,1) and (2,2,2) share p/z
  auto bent = cobb_douglas(g, Eigen::Vector2d(0.5, 0.5));
  bent.values()(static_cast<Eigen::Index>(g->flat_index({4, 4, 4})), 0) += 0.3;
  CHECK(check_membership(bent).homogeneity_violation == doctest::Approx(0.3));
}

TEST_CASE("penalty vanishes on X") {
  const auto g = make_grid(Grid::build_geometric({{0.2, 2.0}, {0.3, 3.0}}, {9, 9}));
  const auto p = penalty(cobb_douglas_normalized(g, Eigen::Vector2d(0.4, 0.6)), PenaltyWeights{});
  CHECK(p.value <= 1e-20);
  CHECK(p.gradient.values().cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("penalty of a single negative node") {
  const auto g = make_grid(Grid::build_geometric({{0.2, 2.0}, {0.3, 3.0}}, {9, 9}));
  auto f = cobb_douglas_normalized(g, Eigen::Vector2d(0.4, 0.6));
  const auto n = static_cast<Eigen::Index>(g->flat_index({3, 5}));
  const double t = 0.7;
  f.values()(n, 1) = -t;
  const auto p = penalty(f, PenaltyWeights{3.0, 0.0, 0.0, 0.0});
  const double q = g->weights()[n];
  CHECK(p.value == doctest::Approx(3.0 * q * t * t));
  CHECK(p.gradient.values()(n, 1) == doctest::Approx(-6.0 * q * t));
  CHECK(p.gradient.values().cwiseAbs().sum() == doctest::Approx(6.0 * q * t));
}

TEST_CASE("penalty gradient matches central differences") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int k = 1; k <= 2; ++k) {
    const auto g = k == 1 ? make_grid(Grid::build_geometric({{0.2, 2.0}}, {13}))
                          : make_grid(Grid::build_geometric({{0.2, 2.0}, {0.3, 3.0}}, {7, 8}));
    Eigen::VectorXd a(k);
    if (k == 1) a << 1.0;
    else a << 0.4, 0.6;
    const auto base = cobb_douglas_normalized(g, a);
    const PenaltyWeights w{2.0, 3.0, 5.0, 7.0};
    for (int trial = 0; trial < 20; ++trial) {
      Eigen::MatrixXd noise(base.values().rows(), k), dir(base.values().rows(), k);
      for (Eigen::Index i = 0; i < noise.size(); ++i) {
        noise.data()[i] = 0.5 * nd(rng);
        dir.data()[i] = nd(rng);
      }
      const GridFunction f(g, base.values() + noise.cwiseProduct(base.values()) - 0.3 * Eigen::MatrixXd::Ones(noise.rows(), k));
      const auto p = penalty(f, w);
      const double h = 1e-6;
      const double up = penalty(GridFunction(g, f.values() + h * dir), w).value;
      const double dn = penalty(GridFunction(g, f.values() - h * dir), w).value;
      const double fd = (up - dn) / (2 * h);
      const double an = (p.gradient.values().array() * dir.array()).sum();
      CHECK(std::abs(fd - an) <= 1e-5 * std::max(1.0, std::abs(an)));
    }
  }
}

TEST_CASE("shifted penalty: gradient, multiplier update and Gauss-Newton model") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> nd(0.0, 1.0);
  const auto g = make_grid(Grid::build_geometric({{0.2, 2.0}, {0.3, 3.0}}, {7, 8}));
  const auto base = cobb_douglas_normalized(g, Eigen::Vector2d(0.4, 0.6));
  const PenaltyEvaluator eval(g);
  const auto N = base.values().rows();
  auto random = [&](double scale) {
    Eigen::MatrixXd m(N, 2);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * nd(rng);
    return m;
  };
  const Eigen::MatrixXd f = base.values() + base.values().cwiseProduct(random(0.3));

  // without a shift the evaluator is the free function
  const PenaltyWeights w{2.0, 3.0, 5.0, 7.0};
  CHECK(eval(f, w).value == doctest::Approx(penalty(GridFunction(g, f), w).value).epsilon(1e-14));

  PenaltyShift shift;
  eval.update_shift(f, shift);
  eval.update_shift(base.values() + base.values().cwiseProduct(random(0.3)), shift);
  for (std::size_t n = 0; n < g->size(); ++n) {
    const auto& U = shift.asym[n];
    const auto& V = shift.nsd[n];
    CHECK((U + U.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((V - V.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(V).eigenvalues().minCoeff() >= -1e-12);
    if (!g->is_interior(n)) CHECK(U.cwiseAbs().maxCoeff() == 0.0);
  }
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::MatrixXd dir = random(1.0);
    const auto p = eval(f, w, &shift);
    const double h = 1e-6;
    const double fd = (eval(f + h * dir, w, &shift).value - eval(f - h * dir, w, &shift).value) / (2 * h);
    const double an = (p.gradient.values().array() * dir.array()).sum();
    CHECK(std::abs(fd - an) <= 1e-5 * std::max(1.0, std::abs(an)));
  }

  // where the asymmetry residual vanishes (Cobb-Douglas on an equal-step
  // geometric grid) its penalty has Hessian exactly 2JᵀJ
  const auto sq = make_grid(Grid::build_geometric({{0.2, 2.0}, {0.3, 3.0}}, {9, 9}));
  const Eigen::MatrixXd truth = cobb_douglas_normalized(sq, Eigen::Vector2d(0.4, 0.6)).values();
  const PenaltyEvaluator sq_eval(sq);
  const PenaltyWeights asym_only{0.0, 0.0, 5.0, 0.0};
  REQUIRE(sq_eval(truth, asym_only).value <= 1e-20);
  const Eigen::SparseMatrix<double> JtJ = sq_eval.gauss_newton(truth, asym_only);
  CHECK((Eigen::MatrixXd(JtJ) - Eigen::MatrixXd(JtJ).transpose()).cwiseAbs().maxCoeff() <= 1e-9);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd dir(truth.rows(), 2);
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir.data()[i] = nd(rng);
    const Eigen::Map<const Eigen::VectorXd> d(dir.data(), dir.size());
    const double model = d.dot(JtJ * d);
    const double eps = 1e-4;
    const double second = (sq_eval(truth + eps * dir, asym_only).value + sq_eval(truth - eps * dir, asym_only).value) /
                          (2 * eps * eps);
    CHECK(second == doctest::Approx(model).epsilon(1e-4));
  }
}

TEST_CASE("budget projection satisfies the KKT conditions") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> up(0.1, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + trial % 4;
    Eigen::VectorXd y(k), p(k);
    for (int i = 0; i < k; ++i) {
      y[i] = nd(rng);
      p[i] = up(rng);
    }
    const Eigen::VectorXd g = project_budget_node(y, p);
    CHECK(g.minCoeff() >= 0.0);
    CHECK(p.dot(g) == doctest::Approx(1.0).epsilon(1e-12));
    // y - g = λp - ν, ν ≥ 0, ν_i g_i = 0
    int free_i = -1;
    for (int i = 0; i < k; ++i)
      if (g[i] > 0) free_i = i;
    REQUIRE(free_i >= 0);
    const double lambda = (y[free_i] - g[free_i]) / p[free_i];
    for (int i = 0; i < k; ++i) {
      const double nu = lambda * p[i] - (y[i] - g[i]);
      if (g[i] > 0) CHECK(std::abs(nu) <= 1e-10);
      else CHECK(nu >= -1e-10);
    }
    CHECK((project_budget_node(g, p) - g).norm() <= 1e-12);
  }
}

TEST_CASE("tau estimate") {
  const auto g = make_grid(Grid::build({{1, 2}, {1, 2}}, {5, 5}));
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  // convex fixture X = {g ≥ 0}; ζ in the normal cone at g† (ζ ≤ 0 where g† = 0)
  Eigen::MatrixXd gd(25, 2), zeta = Eigen::MatrixXd::Zero(25, 2);
  for (Eigen::Index n = 0; n < 25; ++n)
    for (Eigen::Index c = 0; c < 2; ++c) {
      if ((n + c) % 3 == 0) {
        gd(n, c) = 0.0;
        zeta(n, c) = -u01(rng);
      } else {
        gd(n, c) = u01(rng) + 0.1;
      }
    }
  const GridFunction gdag(g, gd), z(g, zeta);
  std::vector<GridFunction> samples;
  for (int s = 0; s < 100; ++s) {
    Eigen::MatrixXd v(25, 2);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = 2.0 * u01(rng) * (u01(rng) < 0.3 ? 0.0 : 1.0);
    samples.emplace_back(g, v);
  }
  CHECK(tau_estimate(z, gdag, samples) <= 1e-10);
  CHECK(tau_estimate(GridFunction::zeros(g, 2), gdag, samples) == 0.0);
  CHECK_THROWS_AS(tau_estimate(z, gdag, {}), Error);

  // ball complement {‖y‖ ≥ R}: at g† = R u, ζ = -s u has τ = s / (2R)
  const double R = 1.5, s = 0.8;
  Eigen::MatrixXd u = Eigen::MatrixXd::Random(25, 2);
  GridFunction uf(g, u);
  uf *= 1.0 / norm_l2(uf);
  const GridFunction center_dir = uf;
  const GridFunction gdag2 = R * center_dir;
  const GridFunction zeta2 = -s * center_dir;
  std::vector<GridFunction> sphere;
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    Eigen::MatrixXd pert(25, 2);
    for (Eigen::Index i = 0; i < pert.size(); ++i) pert.data()[i] = nd(rng);
    GridFunction y = center_dir + (0.05 * (1 + k % 10)) * GridFunction(g, pert);
    const double scale = (k % 4 == 0 ? 1.1 : 1.0) * R / norm_l2(y);
    y *= scale;
    sphere.push_back(y);
  }
  const double analytic = s / (2 * R);
  const double est = tau_estimate(zeta2, gdag2, sphere);
  CHECK(est <= analytic * (1 + 1e-9));
  CHECK(est >= 0.8 * analytic);

  // positive homogeneity and monotonicity in the sample set
  CHECK(tau_estimate(3.0 * zeta2, gdag2, sphere) == doctest::Approx(3.0 * est).epsilon(1e-12));
  std::vector<GridFunction> half(sphere.begin(), sphere.begin() + 100);
  CHECK(tau_estimate(zeta2, gdag2, half) <= est);
}

TEST_CASE("source condition: constant truth") {
  const auto T = smooth_operator(17);
  const auto consts = compute_constants(T, 2);
  const auto c = GridFunction::constant(T.source(), Eigen::Vector2d(0.3, 0.7));
  const std::vector<GridFunction> samples = random_fields(T.source(), 2, 10, 3);

  const auto d0 = source_condition_fit(c, T, SobolevWeight(0.0), consts, samples);
  CHECK(d0.omega_norm <= 1e-12);
  CHECK(d0.residual_norm <= 1e-12);
  CHECK(d0.beta == doctest::Approx(1.0));

  const auto d1 = source_condition_fit(c, T, SobolevWeight(1.0), consts, samples);
  CHECK(norm_l2(adjoint_apply(T, d1.omega) - 2.0 * c) <= 1e-6);
  CHECK(d1.residual_norm <= 1e-6);
  CHECK(d1.tau_hat <= 1e-6);
  CHECK(d1.beta > 0.99);
}

TEST_CASE("source condition: recovers a manufactured ω") {
  const auto src = make_grid(Grid::build({{0, 1}}, {13}, AxisRole::free));
  const auto tgt = make_grid(Grid::build({{0, 1}}, {7}, AxisRole::free));
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u01(0.2, 1.0);
  Eigen::MatrixXd K(7, 13);
  for (Eigen::Index i = 0; i < K.size(); ++i) K.data()[i] = u01(rng);
  const DiscreteOperator T(src, tgt, K);
  const auto consts = OperatorConstants::make(operator_norm(T), d_constant(T, 1).value, poincare_constant(*src));

  const GridFunction omega0(tgt, Eigen::MatrixXd::Random(7, 1));
  const Eigen::MatrixXd null = Eigen::FullPivLU<Eigen::MatrixXd>(K).kernel();  // K ζ₀ = 0 ⟺ ζ₀ ⟂ range(T*)
  const GridFunction zeta0(src, null * Eigen::VectorXd::Random(null.cols()));
  const GridFunction r = adjoint_apply(T, omega0) + zeta0;

  // solve 2(μ g - Δg) = r with Δ = -Q⁻¹K_s
  const double mu = 1.0;
  const Eigen::MatrixXd Ks = Eigen::MatrixXd(stiffness_matrix(*src));
  const Eigen::MatrixXd A = 2.0 * (mu * Eigen::MatrixXd::Identity(13, 13) + src->weights().cwiseInverse().asDiagonal() * Ks);
  const GridFunction gdag(src, A.lu().solve(r.values()));

  SourceFitOptions opts;
  opts.require_neumann = false;
  const auto d = source_condition_fit(gdag, T, SobolevWeight(mu), consts, {}, opts);
  CHECK(norm_l2(d.omega - omega0) <= 1e-4);
  CHECK(norm_l2(d.zeta - zeta0) <= 1e-4);
}

TEST_CASE("source condition: Neumann precondition") {
  const auto T = smooth_operator(9);
  const auto consts = compute_constants(T, 1);
  Eigen::MatrixXd v(9, 1);
  for (Eigen::Index i = 0; i < 9; ++i) v(i, 0) = T.source()->coordinate(static_cast<std::size_t>(i), 0);
  try {
    source_condition_fit(GridFunction(T.source(), v), T, SobolevWeight(1.0), consts, {});
    FAIL("expected precondition error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::precondition);
  }
}

TEST_CASE("variational inequality") {
  const auto T = smooth_operator(17);
  const auto consts = compute_constants(T, 1);
  const auto gdag = GridFunction::constant(T.source(), Eigen::VectorXd::Constant(1, 0.5));
  const SobolevWeight w(1.0);
  const auto d = source_condition_fit(gdag, T, w, consts, {});

  const auto none = variational_inequality_check(gdag, 0.0, d.omega_norm, w, T, {gdag});
  CHECK(none.violations == 0);
  CHECK(none.worst_margin == doctest::Approx(0.0));

  std::vector<GridFunction> samples;
  for (auto& f : random_fields(T.source(), 1, 200, 31)) samples.push_back(gdag + 0.1 * f);
  const auto rep = variational_inequality_check(gdag, 0.0, d.omega_norm, w, T, samples);
  CHECK(rep.evaluated == 200);
  CHECK(rep.violations == 0);

  // β = 2 fails along highly oscillatory directions that T nearly annihilates
  Eigen::MatrixXd osc(17, 1);
  for (Eigen::Index i = 0; i < 17; ++i) osc(i, 0) = 0.1 * std::cos(8 * M_PI * T.source()->coordinate(static_cast<std::size_t>(i), 0));
  const auto bad = variational_inequality_check(gdag, 2.0, d.omega_norm, w, T, {gdag + GridFunction(T.source(), osc)});
  CHECK(bad.violations == 1);
  CHECK(bad.worst_margin > 0.0);

  const auto limited = variational_inequality_check(gdag, 0.0, d.omega_norm, w, T, samples, 0.0);
  CHECK(limited.skipped == 200);
}

TEST_CASE("report serialization") {
  ConstraintReport r;
  r.budget_violation = 0.25;
  r.member = true;
  const auto kv = to_key_value(r);
  CHECK(kv.find("budget_violation=0.25\n") != std::string::npos);
  CHECK(kv.find("member=true") != std::string::npos);
  const auto rh = csv_header(r), rr = csv_row(r);
  CHECK(std::count(rh.begin(), rh.end(), ',') == std::count(rr.begin(), rr.end(), ','));

  const auto T = smooth_operator(9);
  const auto d = source_condition_fit(GridFunction::constant(T.source(), Eigen::VectorXd::Ones(1)), T,
                                      SobolevWeight(1.0), compute_constants(T, 1), {});
  CHECK(to_key_value(d).find("omega_norm=") != std::string::npos);
  const auto h = csv_header(d), row = csv_row(d);
  CHECK(std::count(h.begin(), h.end(), ',') == std::count(row.begin(), row.end(), ','));
}
