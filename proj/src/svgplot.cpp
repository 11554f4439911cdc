#include "geocause/svgplot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "geocause/common.hpp"

namespace geocause {

namespace {

constexpr double kWidth = 720.0, kHeight = 420.0;
constexpr double kLeft = 64.0, kRight = 700.0;
constexpr double kTop = 56.0, kBottom = 360.0;

/// Fixed two-decimal formatting keeps the geometry byte-stable and readable.
std::string fmt2(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v,
                           std::chars_format::fixed, 2);
  return std::string(buf, res.ptr);
}

std::string escape_text(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

struct YScale {
  double lo = 0.0, hi = 1.0;

  double to_px(double v) const {
    return kBottom - (v - lo) / (hi - lo) * (kBottom - kTop);
  }
};

/// Round tick spacing to 1/2/5 times a power of ten.
double nice_step(double span) {
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double frac = raw / mag;
  if (frac < 1.5) return mag;
  if (frac < 3.5) return 2.0 * mag;
  if (frac < 7.5) return 5.0 * mag;
  return 10.0 * mag;
}

void open_svg(std::string& svg, const std::string& title) {
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt2(kWidth) +
         "\" height=\"" + fmt2(kHeight) + "\" viewBox=\"0 0 " + fmt2(kWidth) +
         " " + fmt2(kHeight) + "\">\n";
  svg += "<rect width=\"" + fmt2(kWidth) + "\" height=\"" + fmt2(kHeight) +
         "\" fill=\"#ffffff\"/>\n";
  svg += "<text x=\"" + fmt2(kWidth / 2.0) +
         "\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"17\" fill=\"#1a1a1a\">" +
         escape_text(title) + "</text>\n";
}

void draw_axes(std::string& svg, const YScale& scale,
               const std::string& y_label) {
  const double step = nice_step(scale.hi - scale.lo);
  const double first = std::ceil(scale.lo / step) * step;
  for (double v = first; v <= scale.hi + 1e-9; v += step) {
    const double y = scale.to_px(v);
    svg += "<line x1=\"" + fmt2(kLeft) + "\" y1=\"" + fmt2(y) + "\" x2=\"" +
           fmt2(kRight) + "\" y2=\"" + fmt2(y) +
           "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + fmt2(kLeft - 8.0) + "\" y=\"" + fmt2(y + 4.0) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"12\" fill=\"#444444\">" +
           fmt2(v) + "</text>\n";
  }
  svg += "<line x1=\"" + fmt2(kLeft) + "\" y1=\"" + fmt2(kTop) + "\" x2=\"" +
         fmt2(kLeft) + "\" y2=\"" + fmt2(kBottom) +
         "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
  svg += "<line x1=\"" + fmt2(kLeft) + "\" y1=\"" + fmt2(kBottom) +
         "\" x2=\"" + fmt2(kRight) + "\" y2=\"" + fmt2(kBottom) +
         "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
  svg += "<text x=\"18\" y=\"" + fmt2((kTop + kBottom) / 2.0) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\" fill=\"#444444\" transform=\"rotate(-90 18 " +
         fmt2((kTop + kBottom) / 2.0) + ")\">" +
         escape_text(y_label) + "</text>\n";
}

double slot_x(std::size_t i, std::size_t n) {
  return kLeft + (static_cast<double>(i) + 0.5) * (kRight - kLeft) /
                     static_cast<double>(n);
}

void draw_x_label(std::string& svg, double x, const std::string& label) {
  svg += "<text x=\"" + fmt2(x) + "\" y=\"" + fmt2(kBottom + 22.0) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\" fill=\"#1a1a1a\">" +
         escape_text(label) + "</text>\n";
}

}  // namespace

std::string svg_interval_chart(const std::string& title,
                               const IntervalSeries& series,
                               std::optional<double> reference,
                               const std::string& y_label) {
  const std::size_t n = series.labels.size();
  if (n == 0 || series.values.size() != n || series.lo.size() != n ||
      series.hi.size() != n) {
    throw ValidationError("interval chart: label/value/interval sizes differ");
  }
  double lo = series.lo[0], hi = series.hi[0];
  for (std::size_t i = 0; i < n; ++i) {
    lo = std::min(lo, series.lo[i]);
    hi = std::max(hi, series.hi[i]);
  }
  if (reference) {
    lo = std::min(lo, *reference);
    hi = std::max(hi, *reference);
  }
  const double pad = std::max(1e-6, 0.08 * (hi - lo));
  YScale scale{lo - pad, hi + pad};

  std::string svg;
  open_svg(svg, title);
  draw_axes(svg, scale, y_label);
  if (reference) {
    const double y = scale.to_px(*reference);
    svg += "<line x1=\"" + fmt2(kLeft) + "\" y1=\"" + fmt2(y) + "\" x2=\"" +
           fmt2(kRight) + "\" y2=\"" + fmt2(y) +
           "\" stroke=\"#b23b3b\" stroke-width=\"1.5\" "
           "stroke-dasharray=\"6 4\"/>\n";
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double x = slot_x(i, n);
    const double y_lo = scale.to_px(series.lo[i]);
    const double y_hi = scale.to_px(series.hi[i]);
    const double y_v = scale.to_px(series.values[i]);
    svg += "<line x1=\"" + fmt2(x) + "\" y1=\"" + fmt2(y_lo) + "\" x2=\"" +
           fmt2(x) + "\" y2=\"" + fmt2(y_hi) +
           "\" stroke=\"#2b6cb0\" stroke-width=\"2\"/>\n";
    for (double yw : {y_lo, y_hi}) {
      svg += "<line x1=\"" + fmt2(x - 6.0) + "\" y1=\"" + fmt2(yw) +
             "\" x2=\"" + fmt2(x + 6.0) + "\" y2=\"" + fmt2(yw) +
             "\" stroke=\"#2b6cb0\" stroke-width=\"2\"/>\n";
    }
    svg += "<circle cx=\"" + fmt2(x) + "\" cy=\"" + fmt2(y_v) +
           "\" r=\"4.5\" fill=\"#2b6cb0\"/>\n";
    draw_x_label(svg, x, series.labels[i]);
  }
  svg += "</svg>\n";
  return svg;
}

std::string svg_bar_chart(const std::string& title,
                          const std::vector<std::string>& labels,
                          const std::vector<double>& values, double y_lo,
                          double y_hi, const std::string& y_label) {
  const std::size_t n = labels.size();
  if (n == 0 || values.size() != n) {
    throw ValidationError("bar chart: label/value sizes differ");
  }
  if (!(y_lo < y_hi)) {
    throw ValidationError("bar chart: empty y range");
  }
  YScale scale{y_lo, y_hi};

  std::string svg;
  open_svg(svg, title);
  draw_axes(svg, scale, y_label);
  const double slot = (kRight - kLeft) / static_cast<double>(n);
  const double bar_w = 0.55 * slot;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = slot_x(i, n);
    const double clamped = std::clamp(values[i], y_lo, y_hi);
    const double y_top = scale.to_px(clamped);
    svg += "<rect x=\"" + fmt2(x - bar_w / 2.0) + "\" y=\"" + fmt2(y_top) +
           "\" width=\"" + fmt2(bar_w) + "\" height=\"" +
           fmt2(kBottom - y_top) + "\" fill=\"#38a169\"/>\n";
    svg += "<text x=\"" + fmt2(x) + "\" y=\"" + fmt2(y_top - 6.0) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"12\" fill=\"#1a1a1a\">" +
           fmt2(values[i]) + "</text>\n";
    draw_x_label(svg, x, labels[i]);
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace geocause
