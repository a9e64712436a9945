#include "ivtik/config.hpp"

#include "ivtik/error.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace ivtik {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtod(s.c_str(), &end);
  return errno == 0 && end == s.c_str() + s.size() && std::isfinite(out);
}

}  // namespace

IniFile IniFile::parse(std::istream& in, const std::string& source_name) {
  IniFile f;
  f.source_ = source_name;
  std::string raw;
  std::string section;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = raw;
    const auto hash = s.find('#');
    if (hash != std::string::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') f.fail(line, "unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      if (section.empty()) f.fail(line, "empty section name");
      if (f.section_lines_.count(section)) f.fail(line, "duplicate section [" + section + "]");
      f.section_lines_[section] = line;
      f.sections_[section];
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) f.fail(line, "expected 'key = value'");
    if (section.empty()) f.fail(line, "key outside any section");
    const std::string key = trim(s.substr(0, eq));
    if (key.empty()) f.fail(line, "empty key");
    auto& sec = f.sections_[section];
    if (sec.count(key)) f.fail(line, "duplicate key '" + key + "' in [" + section + "]");
    sec[key] = {trim(s.substr(eq + 1)), line};
  }
  return f;
}

IniFile IniFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::configuration, "cannot open config file " + path.string());
  return parse(in, path.string());
}

void IniFile::fail(int line, const std::string& message) const {
  throw Error(ErrorKind::configuration, source_ + ":" + std::to_string(line) + ": " + message);
}

const IniFile::Entry* IniFile::find(const std::string& section, const std::string& key) const {
  const auto s = sections_.find(section);
  if (s == sections_.end()) return nullptr;
  const auto k = s->second.find(key);
  return k == s->second.end() ? nullptr : &k->second;
}

bool IniFile::has(const std::string& section, const std::string& key) const { return find(section, key) != nullptr; }

std::string IniFile::get_string(const std::string& section, const std::string& key, const std::string& fallback) const {
  const Entry* e = find(section, key);
  return e ? e->value : fallback;
}

double IniFile::get_double(const std::string& section, const std::string& key, double fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  double v = 0.0;
  if (!parse_double(e->value, v)) fail(e->line, "'" + key + "' expects a number, got '" + e->value + "'");
  return v;
}

long long IniFile::get_int(const std::string& section, const std::string& key, long long fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(e->value.c_str(), &end, 10);
  if (e->value.empty() || errno != 0 || end != e->value.c_str() + e->value.size()) {
    fail(e->line, "'" + key + "' expects an integer, got '" + e->value + "'");
  }
  return v;
}

bool IniFile::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
  if (e->value == "false" || e->value == "0" || e->value == "no") return false;
  fail(e->line, "'" + key + "' expects true or false, got '" + e->value + "'");
}

std::vector<double> IniFile::get_list(const std::string& section, const std::string& key,
                                      const std::vector<double>& fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  std::vector<double> out;
  for (const auto& item : split(e->value, ',')) {
    double v = 0.0;
    if (!parse_double(item, v)) fail(e->line, "'" + key + "' expects a comma-separated list of numbers");
    out.push_back(v);
  }
  if (out.empty()) fail(e->line, "'" + key + "' is empty");
  return out;
}

std::vector<Interval> IniFile::get_intervals(const std::string& section, const std::string& key,
                                             const std::vector<Interval>& fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  std::vector<Interval> out;
  for (const auto& part : split(e->value, ';')) {
    const auto ends = split(part, ',');
    double lo = 0.0, hi = 0.0;
    if (ends.size() != 2 || !parse_double(ends[0], lo) || !parse_double(ends[1], hi)) {
      fail(e->line, "'" + key + "' expects 'lo,hi; lo,hi; ...'");
    }
    out.push_back({lo, hi});
  }
  return out;
}

void IniFile::require_known(const std::map<std::string, std::vector<std::string>>& schema) const {
  for (const auto& [name, keys] : sections_) {
    const auto s = schema.find(name);
    if (s == schema.end()) fail(section_lines_.at(name), "unknown section [" + name + "]");
    for (const auto& [key, entry] : keys) {
      if (std::find(s->second.begin(), s->second.end(), key) == s->second.end()) {
        fail(entry.line, "unknown key '" + key + "' in [" + name + "]");
      }
    }
  }
}

namespace {

const std::map<std::string, std::vector<std::string>>& schema() {
  static const std::map<std::string, std::vector<std::string>> s{
      {"scene",
       {"k", "x_bounds", "w_bounds", "x_resolution", "w_resolution", "normalized_resolution", "rho0", "noise_std",
        "endogeneity", "family"}},
      {"demand", {"kind", "shares", "elasticity"}},
      {"experiment",
       {"mode", "levels", "gamma_ratio", "exact_level", "exact_alpha", "replications", "seed", "mu", "c", "c_alpha",
        "c_sigma", "slope_tolerance", "output", "svg", "threads"}},
      {"solver",
       {"restarts", "stages", "initial_weight", "weight_factor", "max_iterations", "gradient_tolerance",
        "stall_tolerance", "armijo", "feasibility_tolerance", "perturbation_std"}},
      {"kernel", {"order", "clip_floor"}},
  };
  return s;
}

}  // namespace

void ExperimentConfig::validate() const {
  scene.validate();
  demand.validate();
  if (demand.goods() != scene.k) throw Error(ErrorKind::configuration, "[demand] shares must have k entries");
  if (levels.empty()) throw Error(ErrorKind::configuration, "[experiment] levels is empty");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] > 0.0)) throw Error(ErrorKind::configuration, "[experiment] levels must be positive");
    if (i > 0) {
      const bool dec = levels[i] < levels[i - 1], inc = levels[i] > levels[i - 1];
      if (mode == ExperimentMode::deterministic ? !dec : !inc) {
        throw Error(ErrorKind::configuration, mode == ExperimentMode::deterministic
                                                  ? "[experiment] noise levels must be strictly decreasing"
                                                  : "[experiment] sample sizes must be strictly increasing");
      }
    }
  }
  if (mode == ExperimentMode::stochastic) {
    for (double n : levels) {
      if (n != std::floor(n) || n < 2) throw Error(ErrorKind::configuration, "[experiment] sample sizes must be integers >= 2");
    }
    if (rho() < 2) throw Error(ErrorKind::assumption, "rho = min(l, k+1) must be at least 2");
  }
  if (replications < 1) throw Error(ErrorKind::configuration, "[experiment] replications must be at least 1");
  if (!(gamma_ratio >= 0.0)) throw Error(ErrorKind::configuration, "[experiment] gamma_ratio must be nonnegative");
  if (!(mu >= 0.0)) throw Error(ErrorKind::configuration, "[experiment] mu must be nonnegative");
  if (!(c > 0.0 && c_alpha > 0.0 && c_sigma > 0.0)) throw Error(ErrorKind::configuration, "[experiment] constants must be positive");
  if (!(slope_tolerance > 0.0)) throw Error(ErrorKind::configuration, "[experiment] slope_tolerance must be positive");
  kernel.validate();
}

double ExperimentConfig::theoretical_slope() const {
  if (mode == ExperimentMode::deterministic) return 1.0;
  const int r = rho();
  return -static_cast<double>(r) / (2.0 * (scene.k + r + 1));
}

ExperimentConfig experiment_config(const IniFile& ini) {
  ini.require_known(schema());
  ExperimentConfig c;
  auto& s = c.scene;
  s.k = static_cast<int>(ini.get_int("scene", "k", 1));
  const auto dim = static_cast<std::size_t>(std::max(s.k, 1) + 1);
  s.x_bounds = ini.get_intervals("scene", "x_bounds", std::vector<Interval>(dim, {1.0, 2.0}));
  s.w_bounds = ini.get_intervals("scene", "w_bounds", std::vector<Interval>(dim, {0.0, 1.0}));
  s.x_resolution = static_cast<int>(ini.get_int("scene", "x_resolution", 17));
  s.w_resolution = static_cast<int>(ini.get_int("scene", "w_resolution", s.x_resolution));
  s.normalized_resolution = static_cast<int>(ini.get_int("scene", "normalized_resolution", 2 * s.x_resolution - 1));
  s.coupling_rho0 = ini.get_double("scene", "rho0", 0.5);
  s.noise_std = ini.get_double("scene", "noise_std", 0.1);
  s.endogeneity_coef = ini.get_double("scene", "endogeneity", 0.5);
  if (const auto* e = ini.find("scene", "family")) {
    try {
      s.family = parse_density_family(e->value);
    } catch (const Error& err) {
      ini.fail(e->line, err.what());
    }
  }

  const auto kind = ini.get_string("demand", "kind", "cobb_douglas");
  if (kind == "cobb_douglas") {
    c.demand.kind = DemandKind::cobb_douglas;
  } else if (kind == "ces") {
    c.demand.kind = DemandKind::ces;
  } else {
    ini.fail(ini.find("demand", "kind")->line, "unknown demand kind '" + kind + "' (expected cobb_douglas or ces)");
  }
  const auto shares = ini.get_list("demand", "shares", std::vector<double>(static_cast<std::size_t>(std::max(s.k, 1)), 1.0 / std::max(s.k, 1)));
  c.demand.shares = Eigen::Map<const Eigen::VectorXd>(shares.data(), static_cast<Eigen::Index>(shares.size()));
  c.demand.elasticity = ini.get_double("demand", "elasticity", 0.5);

  const auto mode = ini.get_string("experiment", "mode", "deterministic");
  if (mode == "deterministic") {
    c.mode = ExperimentMode::deterministic;
  } else if (mode == "stochastic") {
    c.mode = ExperimentMode::stochastic;
  } else {
    ini.fail(ini.find("experiment", "mode")->line, "unknown mode '" + mode + "' (expected deterministic or stochastic)");
  }
  const std::vector<double> det_levels{0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625};
  const std::vector<double> sto_levels{500, 2000, 8000, 32000};
  c.levels = ini.get_list("experiment", "levels", c.mode == ExperimentMode::deterministic ? det_levels : sto_levels);
  c.gamma_ratio = ini.get_double("experiment", "gamma_ratio", 1.0);
  c.exact_level = ini.get_bool("experiment", "exact_level", true);
  c.exact_alpha = ini.get_double("experiment", "exact_alpha", 0.0);
  c.replications = static_cast<int>(ini.get_int("experiment", "replications", c.mode == ExperimentMode::stochastic ? 20 : 1));
  c.seed = static_cast<std::uint64_t>(ini.get_int("experiment", "seed", 1));
  c.mu = ini.get_double("experiment", "mu", 1.0);
  c.c = ini.get_double("experiment", "c", 1.0);
  c.c_alpha = ini.get_double("experiment", "c_alpha", 1.0);
  c.c_sigma = ini.get_double("experiment", "c_sigma", 1.0);
  c.slope_tolerance = ini.get_double("experiment", "slope_tolerance", c.mode == ExperimentMode::deterministic ? 0.3 : 0.15);
  c.output = ini.get_string("experiment", "output", "out");
  c.svg = ini.get_bool("experiment", "svg", true);

  auto& o = c.solver;
  o.threads = static_cast<unsigned>(std::max<long long>(1, ini.get_int("experiment", "threads", 1)));
  o.restarts = static_cast<int>(ini.get_int("solver", "restarts", o.restarts));
  o.stages = static_cast<int>(ini.get_int("solver", "stages", o.stages));
  o.initial_weight = ini.get_double("solver", "initial_weight", o.initial_weight);
  o.weight_factor = ini.get_double("solver", "weight_factor", o.weight_factor);
  o.max_iterations = static_cast<int>(ini.get_int("solver", "max_iterations", o.max_iterations));
  o.gradient_tolerance = ini.get_double("solver", "gradient_tolerance", o.gradient_tolerance);
  o.stall_tolerance = ini.get_double("solver", "stall_tolerance", o.stall_tolerance);
  o.armijo = ini.get_double("solver", "armijo", o.armijo);
  o.feasibility_tolerance = ini.get_double("solver", "feasibility_tolerance", o.feasibility_tolerance);
  o.perturbation_std = ini.get_double("solver", "perturbation_std", o.perturbation_std);
  o.seed = c.seed;

  c.kernel.order = static_cast<int>(ini.get_int("kernel", "order", 2));
  c.kernel.clip_floor = ini.get_double("kernel", "clip_floor", c.kernel.clip_floor);
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) { return experiment_config(IniFile::load(path)); }

std::string config_reference() {
  return R"([scene]
k = 1                        # number of goods
x_bounds = 1,2; 1,2          # p_1..p_k, z (all > 0)
w_bounds = 0,1; 0,1          # k+1 instrument axes
x_resolution = 17
w_resolution = 17            # default: x_resolution
normalized_resolution = 33   # default: 2 x_resolution - 1
rho0 = 0.5                   # X-W coupling, |rho0| < 1
noise_std = 0.1
endogeneity = 0.5
family = cosine              # cosine | poisson

[demand]
kind = cobb_douglas          # cobb_douglas | ces
shares = 1                   # k positive shares summing to 1
elasticity = 0.5             # ces only

[experiment]
mode = deterministic         # deterministic | stochastic
levels = 0.25, 0.125, ...    # decreasing delta levels, or increasing sample sizes
gamma_ratio = 1              # gamma = gamma_ratio * delta
exact_level = true           # deterministic: extra delta = gamma = 0 floor solve
exact_alpha = 0              # alpha of the floor solve (0: 1/100 of the smallest level alpha)
replications = 1             # 20 in stochastic mode
seed = 1
mu = 1
c = 1                        # alpha = c max(delta, gamma)
c_alpha = 1                  # stochastic: alpha = c_alpha n^(-rho/(2(k+rho+1)))
c_sigma = 1                  # stochastic: sigma = c_sigma n^(-1/(2(k+rho+1)))
slope_tolerance = 0.3        # 0.15 in stochastic mode
output = out
svg = true
threads = 1

[solver]
restarts = 5
stages = 20                  # augmented-Lagrangian rounds (upper bound)
initial_weight = 1           # Slutsky penalty weight of the first round
weight_factor = 10           # growth when a round cuts the violation by less than 4x
max_iterations = 200         # Gauss-Newton steps per round
gradient_tolerance = 1e-6
stall_tolerance = 1e-10      # relative objective decrease per step
armijo = 1e-4
feasibility_tolerance = 1e-4
perturbation_std = 0.2

[kernel]
order = 2
clip_floor = 1e-3
)";
}

}  // namespace ivtik
