#include "ivtik/experiments.hpp"

#include "ivtik/error.hpp"
#include "ivtik/kernel_estimation.hpp"
#include "ivtik/parallel.hpp"
#include "ivtik/tikhonov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace ivtik {

FitResult fit_loglog(const std::vector<double>& x, const std::vector<double>& y, bool exclude_floor, double floor) {
  if (x.size() != y.size()) throw Error(ErrorKind::fit, "abscissae and ordinates differ in length");
  std::size_t m = x.size();
  FitResult f;
  if (exclude_floor && floor > 0.0) {
    while (m > 0 && y[m - 1] <= 2.0 * floor) --m;
    f.excluded = x.size() - m;
  }
  if (m < 3) throw Error(ErrorKind::fit, "a slope fit needs at least 3 points, have " + std::to_string(m));
  std::vector<double> lx(m), ly(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0) || !std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw Error(ErrorKind::fit, "log-log fit needs positive finite points (point " + std::to_string(i) + ": " +
                                      format_double(x[i]) + ", " + format_double(y[i]) + ")");
    }
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(m);
  my /= static_cast<double>(m);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 1e-300)) throw Error(ErrorKind::fit, "degenerate abscissae");
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double r = ly[i] - f.intercept - f.slope * lx[i];
    rss += r * r;
  }
  f.std_error = std::sqrt(rss / static_cast<double>(m - 2) / sxx);
  f.used = m;
  return f;
}

ErrorBounds error_bounds(double alpha, double delta, double gamma, double C, const TruthNorms& truth, double d_mult) {
  const double a = gamma + delta * truth.l2;
  const double lin = gamma + delta * d_mult;
  return {a * a / alpha + C * lin + C * C * alpha / 4.0, 2.0 * a * a + 2.0 * alpha * C * lin + C * C * alpha * alpha};
}

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double restart_spread(const SolveResult& r) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < r.restart_objectives.size(); ++i) {
    if (!r.restart_feasible[i]) continue;
    lo = std::min(lo, r.restart_objectives[i]);
    hi = std::max(hi, r.restart_objectives[i]);
  }
  return hi >= lo ? hi - lo : 0.0;
}

struct Outcome {
  double error_sq = 0.0;
  double misfit_sq = 0.0;
  double spread = 0.0;
  bool feasible = true;
  std::optional<GridFunction> minimizer;
};

Outcome solve_level(const Scene& scene, const DiscreteOperator& T, const GridFunction& h, double alpha, SobolevWeight w,
                    SolverOptions opts) {
  TikhonovProblem prob{.op = T, .rhs = h, .alpha = alpha, .mu = w, .normalized = scene.normalized};
  opts.threads = 1;
  Outcome out;
  auto record = [&](const SolveResult& r) {
    const GridFunction d = r.expanded - scene.gdag;
    out.error_sq = sobolev_mu_norm_sq(d, w);
    const GridFunction td = apply(scene.T, d);
    out.misfit_sq = inner_l2(td, td);
    out.spread = restart_spread(r);
    out.minimizer = r.expanded;
  };
  try {
    record(solve(prob, opts));
  } catch (const InfeasibleSolve& e) {
    record(e.best());
    out.feasible = false;
  }
  return out;
}

TruthNorms truth_norms(const Scene& scene, SobolevWeight w) {
  return {norm_l2(scene.gdag), std::sqrt(sobolev_mu_norm_sq(scene.gdag, w)), std::sqrt(gradient_norm_sq(scene.gdag))};
}

void finish_fit(RateReport& rep, const std::vector<double>& x, const std::vector<double>& y, bool exclude_floor,
                double floor) {
  try {
    rep.fit = fit_loglog(x, y, exclude_floor, floor);
    rep.fit_ok = true;
  } catch (const Error& e) {
    rep.fit_ok = false;
    rep.fit_error = e.what();
  }
  rep.slope_pass = rep.fit_ok && std::abs(rep.fit.slope - rep.theoretical_slope) <= rep.slope_tolerance;
}

}  // namespace

RateReport run_deterministic(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.mode != ExperimentMode::deterministic) throw Error(ErrorKind::configuration, "run_deterministic needs mode = deterministic");
  const Scene scene = build_scene(cfg.scene, cfg.demand);
  const SobolevWeight w(cfg.mu);
  const int k = cfg.scene.k;

  RateReport rep;
  rep.mode = cfg.mode;
  rep.k = k;
  rep.mu = cfg.mu;
  rep.theoretical_slope = cfg.theoretical_slope();
  rep.slope_tolerance = cfg.slope_tolerance;
  rep.constants = compute_constants(scene.T, k);

  const std::size_t nlev = cfg.levels.size();
  const std::size_t tasks = nlev + (cfg.exact_level ? 1 : 0);
  std::vector<LevelResult> results(tasks);
  std::vector<Outcome> outcomes(tasks);
  parallel_for(tasks, cfg.solver.threads, [&](std::size_t i) {
    LevelResult& lr = results[i];
    if (i < nlev) {
      const double delta = cfg.levels[i];
      const double gamma = cfg.gamma_ratio * delta;
      const auto pert = perturb(scene.T, scene.h, {delta, gamma, derive_seed(cfg.seed, 1, i)});
      lr.level = std::max(delta, gamma);
      lr.delta = pert.achieved_delta;
      lr.gamma = pert.achieved_gamma;
      lr.alpha = choose_alpha_deterministic(delta, gamma, cfg.c);
      outcomes[i] = solve_level(scene, pert.T, pert.h, lr.alpha, w, cfg.solver);
    } else {
      const double smallest = std::max(cfg.levels.back(), cfg.gamma_ratio * cfg.levels.back());
      lr.alpha = cfg.exact_alpha > 0.0 ? cfg.exact_alpha : 1e-2 * cfg.c * smallest;
      outcomes[i] = solve_level(scene, scene.T, scene.h, lr.alpha, w, cfg.solver);
    }
    lr.error_sq = lr.error_q10 = lr.error_q90 = outcomes[i].error_sq;
    lr.misfit_sq = outcomes[i].misfit_sq;
    lr.restart_spread = outcomes[i].spread;
    lr.failed = !outcomes[i].feasible;
    lr.failures = lr.failed ? 1 : 0;
    lr.replicate_errors = {lr.error_sq};
  });

  if (cfg.exact_level) {
    rep.has_floor = true;
    rep.floor = results.back();
    results.pop_back();
  }
  rep.levels = std::move(results);

  // source condition, with τ sampled on feasible fields near g† and on the computed minimizers
  std::vector<GridFunction> samples;
  for (const auto& g : feasible_samples(scene.gdag_tilde, {0.01, 0.03, 0.1, 0.3}, 5, derive_seed(cfg.seed, 2, 0), cfg.solver)) {
    samples.push_back(expand_homogeneous(g, scene.source));
  }
  for (std::size_t i = 0; i < tasks; ++i) {
    if (outcomes[i].feasible && outcomes[i].minimizer) samples.push_back(*outcomes[i].minimizer);
  }
  rep.tau_samples = samples.size();
  SourceFitOptions sopts;
  sopts.require_neumann = false;
  rep.diagnostic = source_condition_fit(scene.gdag, scene.T, w, rep.constants, samples, sopts);
  const auto& diag = *rep.diagnostic;

  double beta = diag.beta;
  double C = diag.omega_norm;
  if (cfg.mu == 0.0) {
    double smax = 0.0;
    for (const auto& lr : rep.levels) smax = std::max(smax, std::sqrt(lr.misfit_sq));
    C += 2.0 * smax * diag.e_const;
  }
  const TruthNorms truth = truth_norms(scene, w);
  const double hn = norm_l2(scene.h);
  for (auto& lr : rep.levels) {
    lr.bound_applicable = beta > 0.0 && !lr.failed;
    if (!lr.bound_applicable) continue;
    double dm = 0.0;
    try {
      dm = error_multiplier(w, lr.alpha, lr.delta, lr.gamma, truth, rep.constants, hn);
    } catch (const Error&) {
      lr.bound_applicable = false;  // δ ≥ D(T) with μ = 0
      continue;
    }
    const auto b = error_bounds(lr.alpha, lr.delta, lr.gamma, C, truth, dm);
    lr.bound_error = b.error;
    lr.bound_misfit = b.misfit;
    const double slack = 1e-9;
    lr.bound_ok = beta * lr.error_sq <= b.error * (1.0 + slack) + 1e-300 &&
                  lr.misfit_sq <= b.misfit * (1.0 + slack) + 1e-300;
    if (!lr.bound_ok) ++rep.bound_violations;
  }
  rep.bounds_pass = rep.bound_violations == 0;

  std::vector<double> x, y;
  bool any_failed = false;
  for (const auto& lr : rep.levels) {
    any_failed = any_failed || lr.failed;
    if (lr.failed) continue;
    x.push_back(lr.level);
    y.push_back(lr.error_sq);
  }
  finish_fit(rep, x, y, rep.has_floor, rep.has_floor ? rep.floor.error_sq : 0.0);
  rep.pass = rep.slope_pass && rep.bounds_pass && !any_failed;
  return rep;
}

RateReport run_stochastic(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.mode != ExperimentMode::stochastic) throw Error(ErrorKind::configuration, "run_stochastic needs mode = stochastic");
  const Scene scene = build_scene(cfg.scene, cfg.demand);
  const SobolevWeight w(cfg.mu);
  const int k = cfg.scene.k;
  const int rho = cfg.rho();

  RateReport rep;
  rep.mode = cfg.mode;
  rep.k = k;
  rep.mu = cfg.mu;
  rep.theoretical_slope = cfg.theoretical_slope();
  rep.slope_tolerance = cfg.slope_tolerance;
  rep.constants = compute_constants(scene.T, k);

  const std::size_t nlev = cfg.levels.size();
  const auto reps = static_cast<std::size_t>(cfg.replications);
  struct Rep {
    bool ok = false;
    double error_sq = 0.0, misfit_sq = 0.0, op_sq = 0.0, rhs_sq = 0.0, spread = 0.0;
  };
  std::vector<Rep> runs(nlev * reps);
  parallel_for(runs.size(), cfg.solver.threads, [&](std::size_t t) {
    const std::size_t i = t / reps, r = t % reps;
    const auto n = static_cast<long long>(cfg.levels[i]);
    const auto par = choose_parameters_stochastic(n, k, rho, cfg.c_alpha, cfg.c_sigma);
    KernelSpec ks = cfg.kernel;
    ks.sigma = par.sigma;
    Rep& out = runs[t];
    try {
      const auto smp = sample(scene, static_cast<std::size_t>(n), derive_seed(cfg.seed, i, r));
      const auto est = estimate_operator(smp, ks, scene.source, scene.target);
      const double od = operator_distance(est.T, scene.T);
      out.op_sq = od * od;
      const GridFunction dh = est.h - scene.h;
      out.rhs_sq = inner_l2(dh, dh);
      const auto o = solve_level(scene, est.T, est.h, par.alpha, w, cfg.solver);
      out.ok = o.feasible;
      out.error_sq = o.error_sq;
      out.misfit_sq = o.misfit_sq;
      out.spread = o.spread;
    } catch (const Error&) {
      out.ok = false;
    }
  });

  for (std::size_t i = 0; i < nlev; ++i) {
    LevelResult lr;
    const auto n = static_cast<long long>(cfg.levels[i]);
    const auto par = choose_parameters_stochastic(n, k, rho, cfg.c_alpha, cfg.c_sigma);
    lr.level = cfg.levels[i];
    lr.alpha = par.alpha;
    lr.sigma = par.sigma;
    lr.bandwidth_check = std::log(static_cast<double>(n)) / (static_cast<double>(n) * std::pow(par.sigma, 2 * k + 2));
    lr.replications = cfg.replications;
    std::vector<double> errs, mis, ops, rhs;
    for (std::size_t r = 0; r < reps; ++r) {
      const Rep& run = runs[i * reps + r];
      lr.replicate_op_errors.push_back(run.op_sq);
      if (!run.ok) {
        ++lr.failures;
        continue;
      }
      errs.push_back(run.error_sq);
      mis.push_back(run.misfit_sq);
      ops.push_back(run.op_sq);
      rhs.push_back(run.rhs_sq);
      lr.restart_spread = std::max(lr.restart_spread, run.spread);
    }
    lr.replicate_errors = errs;
    lr.failed = 2 * lr.failures > cfg.replications;
    lr.error_sq = quantile(errs, 0.5);
    lr.error_q10 = quantile(errs, 0.1);
    lr.error_q90 = quantile(errs, 0.9);
    lr.misfit_sq = quantile(mis, 0.5);
    lr.op_error_sq = quantile(ops, 0.5);
    lr.rhs_error_sq = quantile(rhs, 0.5);
    rep.levels.push_back(std::move(lr));
  }

  std::vector<double> x, y;
  bool any_failed = false;
  for (std::size_t i = 0; i < rep.levels.size(); ++i) {
    const auto& lr = rep.levels[i];
    any_failed = any_failed || lr.failed;
    if (i > 0) {
      rep.bandwidth_monotone = rep.bandwidth_monotone && lr.bandwidth_check < rep.levels[i - 1].bandwidth_check;
      rep.op_error_decreasing = rep.op_error_decreasing && lr.op_error_sq < rep.levels[i - 1].op_error_sq;
    }
    if (lr.failed) continue;
    x.push_back(lr.level);
    y.push_back(lr.error_sq);
  }
  finish_fit(rep, x, y, false, 0.0);
  rep.pass = rep.slope_pass && !any_failed;
  return rep;
}

RateReport run_experiment(const ExperimentConfig& config) {
  return config.mode == ExperimentMode::deterministic ? run_deterministic(config) : run_stochastic(config);
}

}  // namespace ivtik
