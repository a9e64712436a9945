#pragma once

// INI-style configuration: [section] headers, key = value lines, '#'
// comments. Every error names the offending line.

#include "ivtik/kernel_estimation.hpp"
#include "ivtik/synthesis.hpp"
#include "ivtik/tikhonov.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace ivtik {

class IniFile {
 public:
  struct Entry {
    std::string value;
    int line = 0;
  };

  static IniFile parse(std::istream& in, const std::string& source_name = "config");
  static IniFile load(const std::filesystem::path& path);

  bool has(const std::string& section, const std::string& key) const;
  const Entry* find(const std::string& section, const std::string& key) const;

  std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  long long get_int(const std::string& section, const std::string& key, long long fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<double> get_list(const std::string& section, const std::string& key,
                               const std::vector<double>& fallback) const;
  /// "lo,hi; lo,hi; ..."
  std::vector<Interval> get_intervals(const std::string& section, const std::string& key,
                                      const std::vector<Interval>& fallback) const;

  /// Rejects sections or keys outside the given schema.
  void require_known(const std::map<std::string, std::vector<std::string>>& schema) const;

  /// "<source>:<line>: <message>" as a configuration error.
  [[noreturn]] void fail(int line, const std::string& message) const;

 private:
  std::string source_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
  std::map<std::string, int> section_lines_;
};

enum class ExperimentMode { deterministic, stochastic };

struct ExperimentConfig {
  SceneSpec scene;
  DemandSpec demand;
  ExperimentMode mode = ExperimentMode::deterministic;
  std::vector<double> levels;  // δ levels (deterministic) or sample sizes (stochastic)
  double gamma_ratio = 1.0;    // γ = gamma_ratio · δ
  bool exact_level = true;     // deterministic: add a δ = γ = 0 floor solve
  int replications = 1;
  std::uint64_t seed = 1;
  double mu = 1.0;
  double c = 1.0;              // α = c · max{δ, γ}
  double c_alpha = 1.0;
  double c_sigma = 1.0;
  double exact_alpha = 0.0;    // α for the floor solve; 0: smallest level's α / 100
  double slope_tolerance = 0.3;
  KernelSpec kernel;
  SolverOptions solver;
  std::filesystem::path output = "out";
  bool svg = true;

  void validate() const;
  /// ρ = min(l, k+1).
  int rho() const noexcept { return std::min(kernel.order, scene.k + 1); }
  /// Theoretical log-log slope of the error: 1 (deterministic) or -ρ/(2(k+ρ+1)).
  double theoretical_slope() const;
};

ExperimentConfig experiment_config(const IniFile& ini);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Schema text with defaults, one key per line.
std::string config_reference();

}  // namespace ivtik
