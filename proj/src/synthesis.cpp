#include "ivtik/synthesis.hpp"

#include "ivtik/error.hpp"
#include "ivtik/parallel.hpp"
#include "ivtik/tikhonov.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ivtik {

void DemandSpec::validate() const {
  if (shares.size() == 0) throw Error(ErrorKind::configuration, "demand needs at least one good");
  for (Eigen::Index i = 0; i < shares.size(); ++i) {
    if (!(shares[i] > 0.0)) throw Error(ErrorKind::configuration, "demand shares must be positive");
  }
  if (std::abs(shares.sum() - 1.0) > 1e-12) throw Error(ErrorKind::configuration, "demand shares must sum to 1");
  if (kind == DemandKind::ces && (!(elasticity > 0.0) || elasticity == 1.0)) {
    throw Error(ErrorKind::configuration, "CES elasticity must be positive and different from 1");
  }
}

Eigen::VectorXd demand(const DemandSpec& spec, const Eigen::VectorXd& p, double z) {
  if (p.size() != spec.shares.size()) throw Error(ErrorKind::shape, "price vector length differs from the number of goods");
  if (!(z > 0.0) || !(p.minCoeff() > 0.0)) throw Error(ErrorKind::domain, "prices and budget must be positive");
  const Eigen::VectorXd& a = spec.shares;
  if (spec.kind == DemandKind::cobb_douglas) return z * a.cwiseQuotient(p);
  // y_i = z a_i^s p_i^{-s} / Σ_j a_j^s p_j^{1-s}
  const double s = spec.elasticity;
  Eigen::VectorXd num(p.size());
  double den = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    num[i] = std::pow(a[i], s) * std::pow(p[i], -s);
    den += num[i] * p[i];
  }
  return (z / den) * num;
}

GridFunction demand_normalized(const DemandSpec& spec, const GridPtr& normalized) {
  spec.validate();
  if (static_cast<int>(normalized->dim()) != spec.goods()) {
    throw Error(ErrorKind::shape, "normalized grid dimension differs from the number of goods");
  }
  Eigen::MatrixXd v(static_cast<Eigen::Index>(normalized->size()), spec.goods());
  for (std::size_t n = 0; n < normalized->size(); ++n) {
    v.row(static_cast<Eigen::Index>(n)) = demand(spec, normalized->point(n), 1.0).transpose();
  }
  return GridFunction(normalized, std::move(v));
}

DensityFamily parse_density_family(const std::string& name) {
  if (name == "cosine") return DensityFamily::cosine;
  if (name == "poisson") return DensityFamily::poisson;
  throw Error(ErrorKind::configuration, "unknown density family '" + name + "' (expected cosine or poisson)");
}

std::string to_string(DensityFamily f) { return f == DensityFamily::cosine ? "cosine" : "poisson"; }

void SceneSpec::validate() const {
  if (k < 1) throw Error(ErrorKind::configuration, "scene needs k >= 1");
  const auto dim = static_cast<std::size_t>(k + 1);
  if (x_bounds.size() != dim || w_bounds.size() != dim) {
    throw Error(ErrorKind::configuration, "scene needs k+1 bounds for both X and W");
  }
  for (const auto& b : x_bounds) {
    if (!(b.lo > 0.0) || !(b.hi > b.lo)) throw Error(ErrorKind::domain, "price and budget bounds must satisfy 0 < lo < hi");
  }
  for (const auto& b : w_bounds) {
    if (!(b.hi > b.lo)) throw Error(ErrorKind::domain, "instrument bounds must satisfy lo < hi");
  }
  if (x_resolution < 2 || w_resolution < 2 || normalized_resolution < 2) {
    throw Error(ErrorKind::configuration, "grid resolutions must be at least 2");
  }
  if (!(std::abs(coupling_rho0) < 1.0)) throw Error(ErrorKind::density, "|rho0| must be below 1 for a positive density");
  if (!(noise_std > 0.0)) throw Error(ErrorKind::configuration, "noise_std must be positive");
  if (!std::isfinite(endogeneity_coef)) throw Error(ErrorKind::configuration, "endogeneity_coef must be finite");
}

namespace {

double poisson_kernel(double rho, double theta) {
  return (1.0 - rho * rho) / (1.0 - 2.0 * rho * std::cos(theta) + rho * rho);
}

Eigen::VectorXd scaled(const Eigen::VectorXd& x, const std::vector<Interval>& b) {
  Eigen::VectorXd s(x.size());
  for (Eigen::Index a = 0; a < x.size(); ++a) {
    const auto& iv = b[static_cast<std::size_t>(a)];
    s[a] = (x[a] - iv.lo) / (iv.hi - iv.lo);
  }
  return s;
}

}  // namespace

double joint_density(const SceneSpec& s, const Eigen::VectorXd& xs, const Eigen::VectorXd& ws) {
  const double rho = s.coupling_rho0;
  if (s.family == DensityFamily::cosine) return 1.0 + rho * std::cos(M_PI * xs[0]) * std::cos(M_PI * ws[0]);
  double f = 1.0;
  for (Eigen::Index a = 0; a < xs.size(); ++a) {
    f *= 0.5 * (poisson_kernel(rho, M_PI * (xs[a] - ws[a])) + poisson_kernel(rho, M_PI * (xs[a] + ws[a])));
  }
  return f;
}

double density_sup(const SceneSpec& s) {
  const double r = std::abs(s.coupling_rho0);
  if (s.family == DensityFamily::cosine) return 1.0 + r;
  return std::pow((1.0 + r) / (1.0 - r), s.k + 1);
}

double conditional_mean_x1(const SceneSpec& s, double w1) {
  const double rho = s.coupling_rho0;
  if (s.family == DensityFamily::cosine) return 0.5 - 2.0 * rho * std::cos(M_PI * w1) / (M_PI * M_PI);
  // f(x|w) = 1 + 2 Σ ρ^m cos(mπx) cos(mπw) on the first axis
  double m1 = 0.5;
  double rm = 1.0;
  for (int m = 1; m < 400; ++m) {
    rm *= rho;
    if (std::abs(rm) < 1e-18) break;
    if (m % 2 == 1) m1 += 2.0 * rm * std::cos(m * M_PI * w1) * (-2.0) / (m * m * M_PI * M_PI);
  }
  return m1;
}

Scene build_scene(const SceneSpec& spec, const DemandSpec& dem) {
  spec.validate();
  dem.validate();
  if (dem.goods() != spec.k) throw Error(ErrorKind::configuration, "demand goods differ from scene k");
  const auto dim = static_cast<std::size_t>(spec.k + 1);
  const GridPtr source = make_grid(Grid::build(spec.x_bounds, std::vector<int>(dim, spec.x_resolution)));
  const GridPtr target = make_grid(Grid::build(spec.w_bounds, std::vector<int>(dim, spec.w_resolution), AxisRole::free));
  const GridPtr normalized = normalized_grid_for(*source, spec.normalized_resolution);

  std::vector<Eigen::VectorXd> xs(source->size()), ws(target->size());
  for (std::size_t i = 0; i < source->size(); ++i) xs[i] = scaled(source->point(i), spec.x_bounds);
  for (std::size_t j = 0; j < target->size(); ++j) ws[j] = scaled(target->point(j), spec.w_bounds);
  Eigen::MatrixXd f(static_cast<Eigen::Index>(target->size()), static_cast<Eigen::Index>(source->size()));
  for (std::size_t j = 0; j < target->size(); ++j)
    for (std::size_t i = 0; i < source->size(); ++i)
      f(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = joint_density(spec, xs[i], ws[j]);
  const double fmin = f.minCoeff();
  if (!(fmin > 0.0)) throw Error(ErrorKind::density, "joint density is not positive on the grid");
  const Eigen::VectorXd fw = f * source->weights();  // discrete marginal
  const Eigen::MatrixXd K = fw.cwiseInverse().asDiagonal() * f * source->weights().asDiagonal();

  Scene s{spec, dem, source, target, normalized, DiscreteOperator(source, target, K),
          demand_normalized(dem, normalized), GridFunction::zeros(source, spec.k), GridFunction::zeros(target, spec.k),
          fmin};
  s.gdag = expand_homogeneous(s.gdag_tilde, source);
  s.h = apply(s.T, s.gdag);
  return s;
}

namespace {

constexpr std::size_t kSampleBlock = 1024;

struct TruncatedNormal {
  std::normal_distribution<double> nd;
  double operator()(std::mt19937_64& rng) {
    for (;;) {
      const double v = nd(rng);
      if (std::abs(v) <= 4.0) return v;
    }
  }
};

}  // namespace

Sample sample(const Scene& scene, std::size_t n, std::uint64_t seed, unsigned threads) {
  if (n < 1) throw Error(ErrorKind::configuration, "sample size must be at least 1");
  const SceneSpec& sp = scene.spec;
  const double envelope = density_sup(sp);
  if (1.0 / envelope < 0.01) {
    throw Error(ErrorKind::envelope, "rejection efficiency " + format_double(1.0 / envelope) + " is below 1%");
  }
  const auto dim = static_cast<Eigen::Index>(sp.k + 1);
  const auto k = static_cast<Eigen::Index>(sp.k);
  Sample out{Eigen::MatrixXd(static_cast<Eigen::Index>(n), k), Eigen::MatrixXd(static_cast<Eigen::Index>(n), dim),
             Eigen::MatrixXd(static_cast<Eigen::Index>(n), dim)};
  const std::size_t blocks = (n + kSampleBlock - 1) / kSampleBlock;
  parallel_for(blocks, threads, [&](std::size_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    TruncatedNormal eta;
    const std::size_t end = std::min(n, (b + 1) * kSampleBlock);
    Eigen::VectorXd xs(dim), ws(dim), x(dim), w(dim);
    for (std::size_t r = b * kSampleBlock; r < end; ++r) {
      for (;;) {
        for (Eigen::Index a = 0; a < dim; ++a) xs[a] = unif(rng);
        for (Eigen::Index a = 0; a < dim; ++a) ws[a] = unif(rng);
        if (unif(rng) * envelope <= joint_density(sp, xs, ws)) break;
      }
      for (Eigen::Index a = 0; a < dim; ++a) {
        const auto& bx = sp.x_bounds[static_cast<std::size_t>(a)];
        const auto& bw = sp.w_bounds[static_cast<std::size_t>(a)];
        x[a] = bx.lo + xs[a] * (bx.hi - bx.lo);
        w[a] = bw.lo + ws[a] * (bw.hi - bw.lo);
      }
      const auto row = static_cast<Eigen::Index>(r);
      const Eigen::VectorXd g = demand(scene.demand, x.head(k), x[k]);
      const double endo = sp.endogeneity_coef * (xs[0] - conditional_mean_x1(sp, ws[0]));
      for (Eigen::Index i = 0; i < k; ++i) out.y(row, i) = g[i] + endo + sp.noise_std * eta(rng);
      out.x.row(row) = x.transpose();
      out.w.row(row) = w.transpose();
    }
  });
  return out;
}

Perturbed perturb(const DiscreteOperator& T, const GridFunction& h, const PerturbationSpec& spec) {
  if (spec.delta < 0.0 || spec.gamma < 0.0) throw Error(ErrorKind::configuration, "perturbation levels must be nonnegative");
  if (!same_grid(h.grid(), T.target())) throw Error(ErrorKind::shape, "h is not on the operator's target grid");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> nd;
  Perturbed out{T, h};
  if (spec.delta > 0.0) {
    Eigen::MatrixXd R(T.kernel().rows(), T.kernel().cols());
    for (Eigen::Index i = 0; i < R.size(); ++i) R.data()[i] = nd(rng);
    const double rn = operator_norm(DiscreteOperator(T.source(), T.target(), R));
    out.T = DiscreteOperator(T.source(), T.target(), T.kernel() + (spec.delta / rn) * R);
    out.achieved_delta = operator_distance(out.T, T);
  }
  if (spec.gamma > 0.0) {
    Eigen::MatrixXd r(h.values().rows(), h.values().cols());
    for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = nd(rng);
    const GridFunction rf(h.grid(), r);
    out.h = h + (spec.gamma / norm_l2(rf)) * rf;
    out.achieved_gamma = norm_l2(out.h - h);
  }
  out.delta_exceeds_d = spec.delta >= d_constant(T, h.channels()).value;
  return out;
}

}  // namespace ivtik
