#include "ivtik/report.hpp"

#include "ivtik/error.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ivtik {

namespace {

const char* mode_name(ExperimentMode m) { return m == ExperimentMode::deterministic ? "deterministic" : "stochastic"; }

void row(std::ostream& out, const std::string& kind, const LevelResult& l) {
  const bool pass = !l.failed && (!l.bound_applicable || l.bound_ok);
  out << kind << ',' << format_double(l.level) << ',' << format_double(l.delta) << ',' << format_double(l.gamma) << ','
      << format_double(l.alpha) << ',' << format_double(l.sigma) << ',' << format_double(l.error_sq) << ','
      << format_double(l.error_q10) << ',' << format_double(l.error_q90) << ',' << format_double(l.misfit_sq) << ','
      << format_double(l.op_error_sq) << ',' << format_double(l.rhs_error_sq) << ','
      << format_double(l.bandwidth_check) << ',' << format_double(l.bound_error) << ','
      << format_double(l.bound_misfit) << ',' << l.bound_applicable << ',' << l.bound_ok << ','
      << format_double(l.restart_spread) << ',' << l.replications << ',' << l.failures << ',' << pass << '\n';
}

void kv(std::ostream& out, const std::string& key, double v) { out << key << ',' << format_double(v) << '\n'; }

}  // namespace

void write_rate_csv(const RateReport& r, std::ostream& out) {
  out << "kind,level,delta,gamma,alpha,sigma,error_sq,error_q10,error_q90,misfit_sq,op_error_sq,rhs_error_sq,"
         "bandwidth_check,bound_error,bound_misfit,bound_applicable,bound_ok,restart_spread,replications,"
         "failures,pass\n";
  for (const auto& l : r.levels) row(out, "level", l);
  if (r.has_floor) row(out, "floor", r.floor);
}

void write_diagnostics_csv(const RateReport& r, std::ostream& out) {
  out << "key,value\n";
  kv(out, "op_norm", r.constants.op_norm);
  kv(out, "d_const", r.constants.d_const);
  kv(out, "poincare_c", r.constants.poincare_c);
  kv(out, "a_const", r.constants.a_const);
  if (r.diagnostic) {
    const auto& d = *r.diagnostic;
    kv(out, "omega_norm", d.omega_norm);
    kv(out, "residual_norm", d.residual_norm);
    kv(out, "tau_hat", d.tau_hat);
    kv(out, "e_const", d.e_const);
    kv(out, "beta", d.beta);
    kv(out, "neumann_defect", d.neumann_defect);
    out << "smallness_ok," << d.smallness_ok << '\n';
    out << "tau_samples," << r.tau_samples << '\n';
  }
}

std::string to_key_value(const RateReport& r) {
  std::ostringstream out;
  out << "# pass/fail is decided on fitted slopes and bound compliance; the rates carry unspecified constants\n";
  out << "mode=" << mode_name(r.mode) << '\n' << "k=" << r.k << '\n' << "mu=" << format_double(r.mu) << '\n';
  out << "levels=" << r.levels.size() << '\n';
  if (r.has_floor) out << "floor_error_sq=" << format_double(r.floor.error_sq) << '\n';
  if (r.fit_ok) {
    out << "slope=" << format_double(r.fit.slope) << '\n' << "slope_std_error=" << format_double(r.fit.std_error) << '\n';
    out << "fit_points=" << r.fit.used << '\n' << "fit_excluded=" << r.fit.excluded << '\n';
  } else {
    out << "fit_error=" << r.fit_error << '\n';
  }
  out << "theoretical_slope=" << format_double(r.theoretical_slope) << '\n';
  out << "slope_tolerance=" << format_double(r.slope_tolerance) << '\n';
  out << "slope_pass=" << r.slope_pass << '\n';
  if (r.mode == ExperimentMode::deterministic) {
    out << "bound_violations=" << r.bound_violations << '\n' << "bounds_pass=" << r.bounds_pass << '\n';
  } else {
    out << "bandwidth_monotone=" << r.bandwidth_monotone << '\n';
    out << "op_error_decreasing=" << r.op_error_decreasing << '\n';
  }
  out << "pass=" << r.pass << '\n';
  return out.str();
}

void write_rates_svg(const RateReport& r, std::ostream& out) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& l : r.levels) {
    if (!l.failed && l.level > 0.0 && l.error_sq > 0.0) pts.emplace_back(std::log10(l.level), std::log10(l.error_sq));
  }
  const double W = 640, H = 420, L = 70, R = 20, T = 30, B = 50;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (pts.empty()) {
    out << "<text x=\"" << L << "\" y=\"" << H / 2 << "\">no positive errors to plot</text>\n</svg>\n";
    return;
  }
  double x0 = pts[0].first, x1 = x0, y0 = pts[0].second, y1 = y0;
  for (const auto& [x, y] : pts) {
    x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
  }
  const bool floor = r.has_floor && r.floor.error_sq > 0.0;
  if (floor) y0 = std::min(y0, std::log10(r.floor.error_sq));
  if (x1 - x0 < 1e-9) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-9) y0 -= 0.5, y1 += 0.5;
  const double px = 0.05 * (x1 - x0), py = 0.05 * (y1 - y0);
  x0 -= px, x1 += px, y0 -= py, y1 += py;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  out << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">log10 "
      << (r.mode == ExperimentMode::deterministic ? "max(delta, gamma)" : "n") << "</text>\n";
  out << "<text x=\"16\" y=\"" << H / 2 << "\" transform=\"rotate(-90 16 " << H / 2
      << ")\" text-anchor=\"middle\">log10 error_sq</text>\n";
  out << "<text x=\"" << L << "\" y=\"20\">" << mode_name(r.mode) << ", k=" << r.k;
  if (r.fit_ok) out << ", slope " << format_double(std::round(r.fit.slope * 1000) / 1000);
  out << " (theory " << format_double(r.theoretical_slope) << ")</text>\n";
  for (const auto& [x, y] : pts) out << "<circle cx=\"" << sx(x) << "\" cy=\"" << sy(y) << "\" r=\"4\" fill=\"navy\"/>\n";
  if (r.fit_ok) {
    const double a = r.fit.intercept / std::log(10.0);
    out << "<line x1=\"" << sx(x0) << "\" y1=\"" << sy(a + r.fit.slope * x0) << "\" x2=\"" << sx(x1) << "\" y2=\""
        << sy(a + r.fit.slope * x1) << "\" stroke=\"navy\"/>\n";
  }
  // theory slope anchored at the first point
  const double ty = pts[0].second;
  out << "<line x1=\"" << sx(x0) << "\" y1=\"" << sy(ty + r.theoretical_slope * (x0 - pts[0].first)) << "\" x2=\""
      << sx(x1) << "\" y2=\"" << sy(ty + r.theoretical_slope * (x1 - pts[0].first))
      << "\" stroke=\"gray\" stroke-dasharray=\"6 4\"/>\n";
  if (floor) {
    const double fy = sy(std::log10(r.floor.error_sq));
    out << "<line x1=\"" << L << "\" y1=\"" << fy << "\" x2=\"" << W - R << "\" y2=\"" << fy
        << "\" stroke=\"firebrick\" stroke-dasharray=\"2 3\"/>\n";
  }
  out << "</svg>\n";
}

std::vector<std::string> write_report(const RateReport& r, const std::string& dir, bool svg) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::input, "cannot create output directory '" + dir + "': " + ec.message());
  std::vector<std::string> paths;
  auto emit = [&](const std::string& name, auto&& writer) {
    const std::string path = (fs::path(dir) / name).string();
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::input, "cannot write '" + path + "'");
    writer(out);
    if (!out) throw Error(ErrorKind::input, "write failed for '" + path + "'");
    paths.push_back(path);
  };
  emit("rate_report.csv", [&](std::ostream& o) { write_rate_csv(r, o); });
  emit("diagnostics.csv", [&](std::ostream& o) { write_diagnostics_csv(r, o); });
  emit("summary.txt", [&](std::ostream& o) { o << to_key_value(r); });
  if (svg) emit("rates.svg", [&](std::ostream& o) { write_rates_svg(r, o); });
  return paths;
}

}  // namespace ivtik
