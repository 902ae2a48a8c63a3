#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "briges/metrics.hpp"

namespace briges::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kNumeric = 3,
  kIo = 4,
  kVerification = 5,
};

// args excludes the program name: {"train", "--steps", "10", ...}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// "1-8", "3,5,9" or a mix ("1-3,10").
std::vector<std::uint64_t> parse_seeds(const std::string& text);
// Comma-separated temperatures; duplicates dropped (first kept) with a warning on warn.
std::vector<double> parse_taus(const std::string& text, std::ostream& warn);

std::string csv_header();
std::string csv_row(const MetricsReport& r);

// Shortest of %.1f with trailing zeros stripped (2.0 -> "2", 2.333 -> "2.3").
std::string format_rank(double v);
// %.4g.
std::string format_metric(double v);

struct AblationRow {
  std::string label;           // e.g. "synthetic-1 AbsRel (↓)"
  std::vector<double> values;  // one per tau
};

/// Markdown table: header of temperatures, one row per metric, and the
/// average-rank row with the best (lowest) entry in bold.
std::string format_ablation_table(const std::vector<double>& taus, const std::vector<AblationRow>& rows,
                                  const std::vector<double>& avg_rank);

}  // namespace briges::cli
