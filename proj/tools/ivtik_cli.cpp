// ivtik: command-line driver for single solves, rate studies, constraint
// checks and the kernel self-test.
//
// Exit codes: 0 pass, 2 rate test (or self-test) failed, 1 error.
// Environment: IVTIK_OUTPUT_DIR and IVTIK_THREADS override the config;
// command-line flags override both.

#include "ivtik/config.hpp"
#include "ivtik/constraints.hpp"
#include "ivtik/error.hpp"
#include "ivtik/experiments.hpp"
#include "ivtik/kernel_estimation.hpp"
#include "ivtik/report.hpp"
#include "ivtik/synthesis.hpp"
#include "ivtik/tikhonov.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <functional>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace ivtik;
namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::string output;
  unsigned threads = 0;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  auto* opt = cmd->add_option("-c,--config", c.config, "experiment config file");
  if (config_required) opt->required();
  cmd->add_option("-o,--output", c.output, "output directory");
  cmd->add_option("-t,--threads", c.threads, "worker threads (0: from config)");
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = load_experiment_config(c.config);
  if (const char* dir = std::getenv("IVTIK_OUTPUT_DIR"); dir && *dir) cfg.output = dir;
  if (const char* t = std::getenv("IVTIK_THREADS"); t && *t) {
    try {
      const long n = std::stol(t);
      if (n < 1) throw std::invalid_argument("nonpositive");
      cfg.solver.threads = static_cast<unsigned>(n);
    } catch (const std::exception&) {
      throw Error(ErrorKind::configuration, std::string("IVTIK_THREADS must be a positive integer, got '") + t + "'");
    }
  }
  if (!c.output.empty()) cfg.output = c.output;
  if (c.threads > 0) cfg.solver.threads = c.threads;
  return cfg;
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& writer) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::input, "cannot write '" + path.string() + "'");
  writer(out);
}

int run_rates(const Common& c, ExperimentMode mode) {
  ExperimentConfig cfg = load(c);
  if (cfg.mode != mode) {
    throw Error(ErrorKind::configuration, c.config + ": rates-" +
                                              std::string(mode == ExperimentMode::deterministic ? "det" : "stoch") +
                                              " needs experiment.mode = " +
                                              (mode == ExperimentMode::deterministic ? "deterministic" : "stochastic"));
  }
  const RateReport r = run_experiment(cfg);
  const auto paths = write_report(r, cfg.output.string(), cfg.svg);
  std::cout << to_key_value(r);
  for (const auto& p : paths) std::cout << "wrote " << p << '\n';
  return r.pass ? 0 : 2;
}

int run_solve(const Common& c, double level, bool trace) {
  ExperimentConfig cfg = load(c);
  const Scene scene = build_scene(cfg.scene, cfg.demand);
  if (level < 0.0) level = cfg.levels.empty() ? 0.0 : cfg.levels.front();
  if (cfg.mode != ExperimentMode::deterministic && level >= 1.0) {
    throw Error(ErrorKind::configuration, "solve perturbs by a noise level; pass --level explicitly in stochastic configs");
  }
  DiscreteOperator T = scene.T;
  GridFunction h = scene.h;
  double alpha = cfg.exact_alpha > 0.0 ? cfg.exact_alpha : 1e-2 * cfg.c;
  if (level > 0.0) {
    const auto p = perturb(scene.T, scene.h, {level, cfg.gamma_ratio * level, cfg.seed});
    T = p.T;
    h = p.h;
    alpha = choose_alpha_deterministic(level, cfg.gamma_ratio * level, cfg.c);
  }
  SolverOptions opts = cfg.solver;
  opts.trace = trace;
  const TikhonovProblem prob{.op = T, .rhs = h, .alpha = alpha, .mu = SobolevWeight(cfg.mu), .normalized = scene.normalized};
  int code = 0;
  auto emit = [&](const SolveResult& r) {
    fs::create_directories(cfg.output);
    write_file(cfg.output / "solution.csv", [&](std::ostream& o) { write_csv(r.minimizer, o); });
    write_file(cfg.output / "expanded.csv", [&](std::ostream& o) { write_csv(r.expanded, o); });
    write_file(cfg.output / "solve.txt", [&](std::ostream& o) { o << to_key_value(r); });
    if (trace) write_file(cfg.output / "trace.csv", [&](std::ostream& o) { write_trace_csv(r, o); });
    const GridFunction d = r.expanded - scene.gdag;
    std::cout << "level=" << format_double(level) << "\nalpha=" << format_double(alpha) << '\n'
              << to_key_value(r) << "error_sq=" << format_double(sobolev_mu_norm_sq(d, SobolevWeight(cfg.mu)))
              << "\nwrote " << (cfg.output / "solution.csv").string() << '\n';
  };
  try {
    emit(solve(prob, opts));
  } catch (const InfeasibleSolve& e) {
    std::cerr << e.what() << '\n';
    emit(e.best());
    code = 2;
  }
  return code;
}

int run_check(const std::string& field_path, const Common& c, double tol) {
  std::ifstream in(field_path);
  if (!in) throw Error(ErrorKind::input, "cannot open '" + field_path + "'");
  const GridFunction g = read_csv(in);
  const auto tols = ConstraintTolerances::uniform(tol);
  const bool normalized = g.grid()->dim() == static_cast<std::size_t>(g.channels());
  const ConstraintReport rep = normalized ? check_membership_normalized(g, tols) : check_membership(g, tols);
  std::cout << "representation=" << (normalized ? "normalized" : "expanded") << '\n' << to_key_value(rep);
  if (!c.config.empty()) {
    const ExperimentConfig cfg = load(c);
    const Scene scene = build_scene(cfg.scene, cfg.demand);
    const GridFunction gx = normalized ? expand_homogeneous(g, scene.source) : g;
    bool same = gx.grid()->size() == scene.source->size() && gx.channels() == scene.spec.k &&
                gx.grid()->dim() == scene.source->dim();
    for (std::size_t n = 0; same && n < gx.grid()->size(); ++n) {
      same = (gx.grid()->point(n) - scene.source->point(n)).cwiseAbs().maxCoeff() <= 1e-9;
    }
    if (!same) throw Error(ErrorKind::shape, "field does not live on the scene's X grid");
    const GridFunction on_scene(scene.source, gx.values());
    SourceFitOptions so;
    so.require_neumann = false;
    const auto consts = compute_constants(scene.T, scene.spec.k);
    // no τ samples here: τ̂ = 0 and β = 1; rates-det estimates τ from feasible fields
    const auto d = source_condition_fit(on_scene, scene.T, SobolevWeight(cfg.mu), consts, {}, so);
    std::cout << to_key_value(d);
  }
  return rep.member ? 0 : 2;
}

int run_kernels(int order, double sigma, int positions) {
  const auto r = kernel_self_test(order, sigma, positions);
  std::cout << "order=" << order << "\nsigma=" << format_double(sigma) << "\npositions=" << r.positions
            << "\nmax_moment_defect=" << format_double(r.max_defect) << "\nsupport_ok=" << r.support_ok << '\n';
  return r.max_defect <= 1e-10 && r.support_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Integrability-constrained Tikhonov estimation of demand systems"};
  app.require_subcommand(1);

  Common det_opts, stoch_opts, solve_opts, check_opts;
  auto* det = app.add_subcommand("rates-det", "deterministic rate study (perturbed T and h)");
  add_common(det, det_opts);
  auto* stoch = app.add_subcommand("rates-stoch", "stochastic rate study (kernel estimates from samples)");
  add_common(stoch, stoch_opts);

  auto* solve_cmd = app.add_subcommand("solve", "one constrained solve on the configured scene");
  add_common(solve_cmd, solve_opts);
  double level = -1.0;
  bool trace = false;
  solve_cmd->add_option("--level", level, "noise level δ (0: exact data; default: first configured level)");
  solve_cmd->add_flag("--trace", trace, "write trace.csv with per-iteration objective values");

  auto* check = app.add_subcommand("check", "constraint checks (and source-condition fit with --config) for a field CSV");
  add_common(check, check_opts, false);
  std::string field;
  double tol = 1e-6;
  check->add_option("field", field, "field CSV (axis_*, ch_* columns)")->required();
  check->add_option("--tolerance", tol, "constraint tolerance");

  auto* kernels = app.add_subcommand("kernels", "boundary-kernel moment self-test");
  int order = 2, positions = 101;
  double sigma = 0.2;
  kernels->add_option("-l,--l", order, "kernel order");
  kernels->add_option("--sigma", sigma, "bandwidth");
  kernels->add_option("--positions", positions, "evaluation points t in [0, 1]");

  auto* ref = app.add_subcommand("config-reference", "print the config schema with defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  try {
    if (*det) return run_rates(det_opts, ExperimentMode::deterministic);
    if (*stoch) return run_rates(stoch_opts, ExperimentMode::stochastic);
    if (*solve_cmd) return run_solve(solve_opts, level, trace);
    if (*check) return run_check(field, check_opts, tol);
    if (*kernels) return run_kernels(order, sigma, positions);
    if (*ref) {
      std::cout << config_reference();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "ivtik: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
