#include <doctest.h>

#include <optional>
#include <string>
#include <vector>

#include "geocause/common.hpp"
#include "geocause/svgplot.hpp"

using namespace geocause;

namespace {

std::size_t count_substr(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string::npos;
       pos = hay.find(needle, pos + needle.size()))
    ++n;
  return n;
}

}  // namespace

TEST_CASE("interval chart geometry matches a hand-computed layout") {
  // One slot centred at x = 64 + 0.5 * (700 - 64) = 382. With lo 3, hi 7 and
  // the reference inside, the y range pads by 8% to [2.68, 7.32], so value 5
  // sits exactly halfway down the 304 px plot height: y = 208.
  IntervalSeries s;
  s.labels = {"c2"};
  s.values = {5.0};
  s.lo = {3.0};
  s.hi = {7.0};
  const std::string svg = svg_interval_chart("ladder", s, 5.0, "effect");

  CHECK(svg.rfind("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720.00\" "
                  "height=\"420.00\"",
                  0) == 0);
  CHECK(svg.find("<circle cx=\"382.00\" cy=\"208.00\" r=\"4.5\"") !=
        std::string::npos);
  // Whisker spine from the interval ends: 3 -> 339.03 px, 7 -> 76.97 px.
  CHECK(svg.find("<line x1=\"382.00\" y1=\"339.03\" x2=\"382.00\" "
                 "y2=\"76.97\"") != std::string::npos);
  // Caps extend 6 px either side of the slot.
  CHECK(svg.find("<line x1=\"376.00\" y1=\"339.03\" x2=\"388.00\" "
                 "y2=\"339.03\"") != std::string::npos);
  CHECK(svg.find("<line x1=\"376.00\" y1=\"76.97\" x2=\"388.00\" "
                 "y2=\"76.97\"") != std::string::npos);
  // Dashed reference line at the same height as the dot.
  CHECK(svg.find("<line x1=\"64.00\" y1=\"208.00\" x2=\"700.00\" "
                 "y2=\"208.00\" stroke=\"#b23b3b\"") != std::string::npos);
  CHECK(svg.find("stroke-dasharray=\"6 4\"") != std::string::npos);
  // Span 4.64 rounds to unit ticks: gridlines at 3, 4, 5, 6, 7.
  CHECK(count_substr(svg, "stroke=\"#dddddd\"") == 5);
  for (const char* tick : {">3.00<", ">4.00<", ">5.00<", ">6.00<", ">7.00<"})
    CHECK(svg.find(tick) != std::string::npos);
  CHECK(svg.find(">ladder<") != std::string::npos);
  CHECK(svg.find(">effect<") != std::string::npos);
  CHECK(svg.find(">c2<") != std::string::npos);
  CHECK(svg.rfind("</svg>\n") == svg.size() - 7);

  SUBCASE("omitting the reference removes the dashed line") {
    const std::string bare =
        svg_interval_chart("ladder", s, std::nullopt, "effect");
    CHECK(bare.find("stroke-dasharray") == std::string::npos);
    CHECK(bare.find("#b23b3b") == std::string::npos);
  }
  SUBCASE("output is deterministic") {
    CHECK(svg_interval_chart("ladder", s, 5.0, "effect") == svg);
  }
  SUBCASE("a flat series still renders") {
    IntervalSeries flat;
    flat.labels = {"a", "b"};
    flat.values = {2.0, 2.0};
    flat.lo = {2.0, 2.0};
    flat.hi = {2.0, 2.0};
    const std::string tiny =
        svg_interval_chart("flat", flat, std::nullopt, "y");
    CHECK(tiny.find("</svg>") != std::string::npos);
    CHECK(tiny.find("nan") == std::string::npos);
    CHECK(tiny.find("inf") == std::string::npos);
  }
}

TEST_CASE("bar chart geometry matches a hand-computed layout") {
  // Two slots at x = 223 and x = 541; bars are 55% of the 318 px slot.
  // Over [0, 1] the 304 px plot maps 0.25 -> 284 px and 0.75 -> 132 px.
  const std::string svg = svg_bar_chart("shares", {"x0", "x1"}, {0.25, 0.75},
                                        0.0, 1.0, "share");
  CHECK(svg.find("<rect x=\"135.55\" y=\"284.00\" width=\"174.90\" "
                 "height=\"76.00\" fill=\"#38a169\"/>") != std::string::npos);
  CHECK(svg.find("<rect x=\"453.55\" y=\"132.00\" width=\"174.90\" "
                 "height=\"228.00\" fill=\"#38a169\"/>") != std::string::npos);
  // Value captions ride 6 px above each bar.
  CHECK(svg.find("<text x=\"223.00\" y=\"278.00\"") != std::string::npos);
  CHECK(svg.find("<text x=\"541.00\" y=\"126.00\"") != std::string::npos);
  CHECK(svg.find(">0.25<") != std::string::npos);
  CHECK(svg.find(">0.75<") != std::string::npos);
  // Span 1.0 rounds to 0.2 ticks: 0.0 through 1.0.
  CHECK(count_substr(svg, "stroke=\"#dddddd\"") == 6);
  CHECK(svg.find(">0.00<") != std::string::npos);
  CHECK(svg.find(">1.00<") != std::string::npos);

  SUBCASE("values outside the range draw clamped bars but honest captions") {
    const std::string tall =
        svg_bar_chart("auc", {"m"}, {1.5}, 0.0, 1.0, "auc");
    CHECK(tall.find("<rect x=\"207.10\" y=\"56.00\" width=\"349.80\" "
                    "height=\"304.00\"") != std::string::npos);
    CHECK(tall.find(">1.50<") != std::string::npos);
  }
}

TEST_CASE("markup-significant characters are escaped in every text slot") {
  IntervalSeries s;
  s.labels = {"<x> & y"};
  s.values = {1.0};
  s.lo = {0.0};
  s.hi = {2.0};
  const std::string svg =
      svg_interval_chart("Bias & CI <ladder>", s, std::nullopt, "a < b");
  CHECK(svg.find("Bias &amp; CI &lt;ladder&gt;") != std::string::npos);
  CHECK(svg.find("&lt;x&gt; &amp; y") != std::string::npos);
  CHECK(svg.find("a &lt; b") != std::string::npos);
  CHECK(svg.find("<ladder>") == std::string::npos);
  CHECK(svg.find("<x>") == std::string::npos);
}

TEST_CASE("mismatched or empty series are rejected") {
  IntervalSeries s;
  s.labels = {"a", "b"};
  s.values = {1.0, 2.0};
  s.lo = {0.5};  // short
  s.hi = {1.5, 2.5};
  CHECK_THROWS_WITH_AS(svg_interval_chart("t", s, std::nullopt, "y"),
                       doctest::Contains("sizes differ"), ValidationError);

  IntervalSeries empty;
  CHECK_THROWS_AS(svg_interval_chart("t", empty, std::nullopt, "y"),
                  ValidationError);

  CHECK_THROWS_WITH_AS(svg_bar_chart("t", {"a"}, {1.0, 2.0}, 0.0, 1.0, "y"),
                       doctest::Contains("sizes differ"), ValidationError);
  CHECK_THROWS_AS(svg_bar_chart("t", {}, {}, 0.0, 1.0, "y"), ValidationError);
  CHECK_THROWS_WITH_AS(svg_bar_chart("t", {"a"}, {1.0}, 1.0, 1.0, "y"),
                       doctest::Contains("empty y range"), ValidationError);
}
