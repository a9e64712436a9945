#pragma once

// Synthetic ground truth: utility-based demand, explicit joint densities of
// (X, W) with uniform marginals, exact h = T g†, controlled perturbations of
// (T, h) and a seeded sampler for (Y, X, W) with endogenous errors.

#include "ivtik/field.hpp"
#include "ivtik/kernel_estimation.hpp"
#include "ivtik/operator.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ivtik {

enum class DemandKind { cobb_douglas, ces };

struct DemandSpec {
  DemandKind kind = DemandKind::cobb_douglas;
  Eigen::VectorXd shares;   // a_i > 0, Σ a_i = 1
  double elasticity = 0.5;  // CES elasticity of substitution (> 0, ≠ 1)

  void validate() const;
  int goods() const noexcept { return static_cast<int>(shares.size()); }
};

/// Closed-form Marshallian demand at prices p and budget z.
Eigen::VectorXd demand(const DemandSpec& spec, const Eigen::VectorXd& p, double z);

/// g̃(p̃) = demand(p̃, 1) on a normalized-price grid.
GridFunction demand_normalized(const DemandSpec& spec, const GridPtr& normalized);

enum class DensityFamily {
  cosine,   // 1 + ρ cos(πx̃₁) cos(πw̃₁)
  poisson,  // Π_a ½[P_ρ(π(x̃_a − w̃_a)) + P_ρ(π(x̃_a + w̃_a))], P_ρ the Poisson kernel
};

DensityFamily parse_density_family(const std::string& name);
std::string to_string(DensityFamily f);

struct SceneSpec {
  int k = 1;
  std::vector<Interval> x_bounds;  // p_1..p_k, z
  std::vector<Interval> w_bounds;  // k+1 instrument axes
  int x_resolution = 17;
  int w_resolution = 17;
  int normalized_resolution = 33;
  double coupling_rho0 = 0.5;
  double noise_std = 0.1;
  double endogeneity_coef = 0.5;
  DensityFamily family = DensityFamily::cosine;

  void validate() const;
};

/// Joint density of (X̃, W̃) on [0,1]^{k+1} × [0,1]^{k+1}; both marginals are uniform.
double joint_density(const SceneSpec& s, const Eigen::VectorXd& xs, const Eigen::VectorXd& ws);
/// Upper bound of joint_density (the rejection envelope).
double density_sup(const SceneSpec& s);
/// E(X̃₁ | W̃ = w̃), depends on w̃₁ only.
double conditional_mean_x1(const SceneSpec& s, double w1);

struct Scene {
  SceneSpec spec;
  DemandSpec demand;
  GridPtr source;      // Ω_X
  GridPtr target;      // Ω_W
  GridPtr normalized;  // normalized prices
  DiscreteOperator T;
  GridFunction gdag_tilde;  // demand on the normalized grid
  GridFunction gdag;        // E g̃† on Ω_X
  GridFunction h;           // T g†, exact
  double density_min = 0.0;
};

/// f_W is taken as the discrete marginal of f_XW, so rows of T sum to one.
Scene build_scene(const SceneSpec& spec, const DemandSpec& demand);

/// n i.i.d. draws, Y = g†(X) + ε with ε = c·(X̃₁ − E(X̃₁|W)) + η,
/// η ~ N(0, s²) truncated at 4s, independent per good.
Sample sample(const Scene& scene, std::size_t n, std::uint64_t seed, unsigned threads = 1);

struct PerturbationSpec {
  double delta = 0.0;
  double gamma = 0.0;
  std::uint64_t seed = 1;
};

struct Perturbed {
  DiscreteOperator T;
  GridFunction h;
  double achieved_delta = 0.0;
  double achieved_gamma = 0.0;
  bool delta_exceeds_d = false;  // δ ≥ D(T): not usable with μ = 0
};

Perturbed perturb(const DiscreteOperator& T, const GridFunction& h, const PerturbationSpec& spec);

}  // namespace ivtik
