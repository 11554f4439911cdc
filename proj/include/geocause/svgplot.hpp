#pragma once

#include <optional>
#include <string>
#include <vector>

namespace geocause {

/// Point estimates with interval whiskers (one x slot per label).
struct IntervalSeries {
  std::vector<std::string> labels;
  std::vector<double> values;
  std::vector<double> lo;
  std::vector<double> hi;
};

/// Self-contained SVG: dots with vertical interval whiskers, optional dashed
/// horizontal reference line. Deterministic output (fixed two-decimal
/// geometry), no external assets.
std::string svg_interval_chart(const std::string& title,
                               const IntervalSeries& series,
                               std::optional<double> reference,
                               const std::string& y_label);

/// Self-contained SVG bar chart over [y_lo, y_hi].
std::string svg_bar_chart(const std::string& title,
                          const std::vector<std::string>& labels,
                          const std::vector<double>& values, double y_lo,
                          double y_hi, const std::string& y_label);

}  // namespace geocause
