#include <doctest.h>

#include "ivtik/error.hpp"
#include "ivtik/kernel_estimation.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace ivtik;

namespace {

// Gauss-Legendre nodes/weights on [a, b] by Golub-Welsch.
struct Gauss {
  Eigen::VectorXd x, w;
};

Gauss gauss_legendre(int m, double a, double b) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, m);
  for (int i = 1; i < m; ++i) {
    const double beta = i / std::sqrt(4.0 * i * i - 1.0);
    J(i, i - 1) = J(i - 1, i) = beta;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  Gauss g{Eigen::VectorXd(m), Eigen::VectorXd(m)};
  for (int i = 0; i < m; ++i) {
    g.x[i] = 0.5 * (b - a) * es.eigenvalues()[i] + 0.5 * (a + b);
    const double v0 = es.eigenvectors()(0, i);
    g.w[i] = (b - a) * v0 * v0;
  }
  return g;
}

// Integrand is a polynomial times the biweight, so 20 points are exact.
double moment(const BoundaryKernel& K, int j) {
  const auto g = gauss_legendre(20, K.lo(), K.hi());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < g.x.size(); ++i) acc += g.w[i] * std::pow(g.x[i], j) * K(g.x[i]);
  return acc;
}

GridPtr unit_line(int n) { return make_grid(Grid::build({{0, 1}}, {n}, AxisRole::free)); }

double fx_density(double x) { return 0.5 + x; }
double fx_draw(double u) { return -0.5 + std::sqrt(0.25 + 2.0 * u); }

// X ~ 0.5 + x, W uniform and independent, Y = X + N(0, 0.1²)
Sample independent_sample(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> e(0.0, 0.1);
  const auto m = static_cast<Eigen::Index>(n);
  Sample s{Eigen::MatrixXd(m, 1), Eigen::MatrixXd(m, 1), Eigen::MatrixXd(m, 1)};
  for (Eigen::Index i = 0; i < m; ++i) {
    s.x(i, 0) = fx_draw(u(rng));
    s.w(i, 0) = u(rng);
    s.y(i, 0) = s.x(i, 0) + e(rng);
  }
  return s;
}

DiscreteOperator independent_truth(const GridPtr& src, const GridPtr& tgt) {
  return assemble_operator([](const Eigen::VectorXd& x, const Eigen::VectorXd&) { return fx_density(x[0]); },
                           [](const Eigen::VectorXd&) { return 1.0; }, src, tgt);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("interior kernel is the normalized biweight") {
  const BoundaryKernel K(2, 0.2, 0.5);
  CHECK(K.lo() == -1.0);
  CHECK(K.hi() == 1.0);
  CHECK(std::abs(K.coefficients()[1]) <= 1e-12);
  CHECK(std::abs(moment(K, 0) - 1.0) <= 1e-12);
  CHECK(std::abs(moment(K, 1)) <= 1e-12);
  CHECK(K(0.3) == doctest::Approx(BoundaryKernel::base(0.3)).epsilon(1e-12));
}

TEST_CASE("boundary kernel moments") {
  const BoundaryKernel K(2, 0.2, 0.0);
  CHECK(K.lo() == -1.0);
  CHECK(K.hi() == 0.0);
  CHECK(std::abs(moment(K, 0) - 1.0) <= 1e-10);
  CHECK(std::abs(moment(K, 1)) <= 1e-10);

  const BoundaryKernel K4(4, 0.2, 0.5);
  CHECK(std::abs(moment(K4, 0) - 1.0) <= 1e-10);
  for (int j = 1; j < 4; ++j) CHECK(std::abs(moment(K4, j)) <= 1e-10);
}

TEST_CASE("moment exactness, support and boundedness across t") {
  for (int l : {2, 4}) {
    double sup = 0.0;
    for (int s = 0; s <= 100; ++s) {
      const double t = s / 100.0;
      const double sigma = 0.2;
      const BoundaryKernel K(l, sigma, t);
      CHECK(std::abs(moment(K, 0) - 1.0) <= 1e-10);
      for (int j = 1; j < l; ++j) CHECK(std::abs(moment(K, j)) <= 1e-10);
      CHECK(K.lo() == std::max(-1.0, (t - 1.0) / sigma));
      CHECK(K.hi() == std::min(1.0, t / sigma));
      CHECK(K(K.lo() - 1e-9) == 0.0);
      CHECK(K(K.hi() + 1e-9) == 0.0);
      sup = std::max(sup, K.sup_abs());
    }
    CHECK(std::isfinite(sup));
    CHECK(sup > 0.9375);
  }
}

TEST_CASE("kernel spec validation") {
  CHECK_THROWS_AS((KernelSpec{1, 0.2, 1e-3}.validate()), Error);
  CHECK_THROWS_AS((KernelSpec{2, 1.0, 1e-3}.validate()), Error);
  CHECK_THROWS_AS((KernelSpec{2, 0.2, 0.0}.validate()), Error);
  CHECK_NOTHROW((KernelSpec{4, 0.5, 1e-3}.validate()));
}

TEST_CASE("single datum density") {
  const auto g = unit_line(3);
  Sample s{Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::MatrixXd::Constant(1, 1, 0.5), Eigen::MatrixXd::Constant(1, 1, 0.5)};
  const KernelSpec spec{2, 0.3, 1e-3};
  const auto d = estimate_densities(s, spec, *g, *g);
  CHECK(d.f_w[1] == doctest::Approx(0.9375 / 0.3).epsilon(1e-12));
  CHECK(d.f_w[0] == 1e-3);
  CHECK(d.f_w[2] == 1e-3);
  CHECK(d.clipped_nodes == 2);
  CHECK(d.f_xw(1, 1) == doctest::Approx(std::pow(0.9375 / 0.3, 2)).epsilon(1e-12));
}

TEST_CASE("uniform marginal is recovered") {
  const auto g = unit_line(17);
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Sample s{Eigen::MatrixXd(10000, 1), Eigen::MatrixXd(10000, 1), Eigen::MatrixXd(10000, 1)};
  for (Eigen::Index i = 0; i < 10000; ++i) {
    s.y(i, 0) = u(rng);
    s.x(i, 0) = u(rng);
    s.w(i, 0) = u(rng);
  }
  const auto d = estimate_densities(s, KernelSpec{2, 0.15, 1e-3}, *g, *g);
  double worst = 0.0;
  for (std::size_t j = 0; j < g->size(); ++j) {
    const double w = g->coordinate(j, 0);
    if (w < 0.15 || w > 0.85) continue;
    worst = std::max(worst, std::abs(d.f_w[static_cast<Eigen::Index>(j)] - 1.0));
  }
  CHECK(worst <= 0.1);
  CHECK(d.clipped_nodes == 0);
}

TEST_CASE("clip engages away from concentrated mass") {
  const auto g = unit_line(17);
  Sample s{Eigen::MatrixXd::Zero(50, 1), Eigen::MatrixXd::Zero(50, 1), Eigen::MatrixXd::Zero(50, 1)};
  const auto d = estimate_densities(s, KernelSpec{2, 0.05, 1e-3}, *g, *g);
  for (Eigen::Index j = 1; j < 17; ++j) CHECK(d.f_w[j] == 1e-3);
  CHECK(d.clipped_nodes == 16);
}

TEST_CASE("observations outside the domain are rejected") {
  const auto g = unit_line(5);
  Sample s{Eigen::MatrixXd::Zero(2, 1), Eigen::MatrixXd::Constant(2, 1, 1.5), Eigen::MatrixXd::Zero(2, 1)};
  CHECK_THROWS_AS(estimate_densities(s, KernelSpec{}, *g, *g), Error);
  CHECK_THROWS_AS(estimate_densities(Sample{}, KernelSpec{}, *g, *g), Error);
}

TEST_CASE("constant response gives unit right-hand side") {
  const auto g = unit_line(9);
  auto s = independent_sample(5000, 3);
  s.y.setOnes();
  const auto est = estimate_operator(s, KernelSpec{2, 0.15, 1e-3}, g, g);
  CHECK((est.h.values().array() - 1.0).abs().maxCoeff() <= 0.02);
}

TEST_CASE("doubling the response doubles the right-hand side exactly") {
  const auto g = unit_line(9);
  auto s = independent_sample(800, 4);
  const auto a = estimate_operator(s, KernelSpec{2, 0.2, 1e-3}, g, g);
  s.y *= 2.0;
  const auto b = estimate_operator(s, KernelSpec{2, 0.2, 1e-3}, g, g);
  CHECK((b.h.values() - 2.0 * a.h.values()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("independent design: rows approach the marginal profile") {
  const auto g = unit_line(13);
  const auto T = independent_truth(g, g);
  const KernelSpec spec{2, 0.2, 1e-3};
  const auto small = estimate_operator(independent_sample(1000, 7), spec, g, g);
  const auto large = estimate_operator(independent_sample(64000, 7), spec, g, g);
  CHECK(operator_distance(large.T, T) < operator_distance(small.T, T));
  CHECK(operator_distance(large.T, T) < 0.1);
}

TEST_CASE("estimation errors shrink along the bandwidth schedule") {
  const auto g = unit_line(17);
  const auto T = independent_truth(g, g);
  const auto h_true = GridFunction::constant(g, Eigen::VectorXd::Constant(1, 7.0 / 12.0));
  std::vector<double> log_n, log_t, log_h;
  for (std::size_t n : {500u, 2000u, 8000u}) {
    std::vector<double> et, eh;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      // k = 1, ρ = 2: σ ∝ n^{-1/8}
      const KernelSpec spec{2, 0.5 * std::pow(static_cast<double>(n), -0.125), 1e-3};
      const auto est = estimate_operator(independent_sample(n, 1000 + seed), spec, g, g);
      et.push_back(std::pow(operator_distance(est.T, T), 2));
      eh.push_back(std::pow(norm_l2(est.h - h_true), 2));
    }
    log_n.push_back(std::log(static_cast<double>(n)));
    log_t.push_back(std::log(median(et)));
    log_h.push_back(std::log(median(eh)));
  }
  CHECK(log_t[1] < log_t[0]);
  CHECK(log_t[2] < log_t[1]);
  CHECK(log_h[1] < log_h[0]);
  CHECK(log_h[2] < log_h[1]);
  CHECK((log_t[2] - log_t[0]) / (log_n[2] - log_n[0]) < 0.0);
  CHECK((log_h[2] - log_h[0]) / (log_n[2] - log_n[0]) < 0.0);
}

TEST_CASE("sample csv round trip") {
  Sample s{Eigen::MatrixXd::Random(4, 2), Eigen::MatrixXd::Random(4, 3), Eigen::MatrixXd::Random(4, 3)};
  std::stringstream ss;
  write_sample_csv(s, ss);
  CHECK(ss.str().rfind("y_0,y_1,x_0,x_1,x_2,w_0,w_1,w_2\n", 0) == 0);
  const auto back = read_sample_csv(ss);
  CHECK(back.y == s.y);
  CHECK(back.x == s.x);
  CHECK(back.w == s.w);

  std::stringstream bad("y,x_0,w_0\n1,2,3\n1,2\n");
  try {
    read_sample_csv(bad);
    FAIL("expected input error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("library self-test agrees with the quadrature oracle") {
  for (int l : {2, 4}) {
    const auto r = kernel_self_test(l, 0.2);
    CHECK(r.positions == 101);
    CHECK(r.support_ok);
    CHECK(r.max_defect <= 1e-10);
    const BoundaryKernel K(l, 0.2, 0.03);
    for (int j = 0; j < l + 2; ++j) CHECK(K.moment(j) == doctest::Approx(moment(K, j)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(kernel_self_test(2, 0.2, 1), Error);
}
