#pragma once

// Report files for rate studies: rate_report.csv (one row per level plus the
// floor), diagnostics.csv (key,value), summary.txt and an optional log-log
// SVG drawn from the same numbers.

#include "ivtik/experiments.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace ivtik {

void write_rate_csv(const RateReport& r, std::ostream& out);
void write_diagnostics_csv(const RateReport& r, std::ostream& out);
std::string to_key_value(const RateReport& r);
void write_rates_svg(const RateReport& r, std::ostream& out);

/// Writes the report files into `dir` (created if missing) and returns
/// their paths.
std::vector<std::string> write_report(const RateReport& r, const std::string& dir, bool svg);

}  // namespace ivtik
