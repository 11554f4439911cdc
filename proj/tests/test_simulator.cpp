#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "geocause/simulator.hpp"
#include "oracles.hpp"

using namespace geocause;

namespace {

/// Small tile-free world for statistical checks.
WorldConfig fast_world(std::uint64_t seed) {
  WorldConfig cfg;
  cfg.n_units = 300;
  cfg.n_adm2 = 20;
  cfg.n_periods = 2;
  cfg.render_tiles = false;
  cfg.seed = seed;
  return cfg;
}

std::vector<double> outcomes(const PanelSlice& panel) {
  std::vector<double> y;
  for (const auto& c : panel.cells) y.push_back(*c.outcome_lead);
  return y;
}

std::vector<int> treatments(const PanelSlice& panel) {
  std::vector<int> a;
  for (const auto& c : panel.cells) a.push_back(c.treated);
  return a;
}

}  // namespace

TEST_CASE("world config validation") {
  WorldConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  WorldConfig few = cfg;
  few.n_units = 99;
  few.n_adm2 = 50;
  CHECK_THROWS_WITH_AS(few.validate(), doctest::Contains("at least twice"),
                       ValidationError);

  WorldConfig periods = cfg;
  periods.n_periods = 0;
  CHECK_THROWS_AS(periods.validate(), ValidationError);
  periods.n_periods = 13;
  CHECK_THROWS_AS(periods.validate(), ValidationError);

  WorldConfig tau = cfg;
  tau.tau_true = std::nan("");
  CHECK_THROWS_WITH_AS(tau.validate(), doctest::Contains("finite"),
                       ValidationError);

  WorldConfig noise = cfg;
  noise.noise_sd = -1.0;
  CHECK_THROWS_AS(noise.validate(), ValidationError);

  WorldConfig share = cfg;
  share.proxy_share = 1.5;
  CHECK_THROWS_AS(share.validate(), ValidationError);

  WorldConfig rho = cfg;
  rho.latent_rho = 1.0;
  CHECK_THROWS_AS(rho.validate(), ValidationError);

  WorldConfig tiny = cfg;
  tiny.image_side = 4;
  CHECK_THROWS_AS(tiny.validate(), ValidationError);
  tiny.render_tiles = false;
  CHECK_NOTHROW(tiny.validate());  // geometry is moot without tiles
}

TEST_CASE("same seed reproduces the world bit for bit") {
  WorldConfig cfg;
  cfg.n_units = 40;
  cfg.n_adm2 = 10;
  cfg.n_periods = 2;
  cfg.image_side = 16;
  cfg.bands = 2;
  cfg.seed = 97;

  World w1 = generate_world(cfg);
  World w2 = generate_world(cfg);

  REQUIRE(w1.panel.cells.size() == 80);
  REQUIRE(w2.panel.cells.size() == 80);
  for (std::size_t i = 0; i < w1.panel.cells.size(); ++i) {
    const auto& a = w1.panel.cells[i];
    const auto& b = w2.panel.cells[i];
    CHECK(a.unit_id == b.unit_id);
    CHECK(a.treated == b.treated);
    CHECK(*a.outcome_lead == *b.outcome_lead);
    CHECK(a.covariates == b.covariates);
    CHECK(a.tile_ref == b.tile_ref);
  }
  CHECK(w1.truth.true_propensity == w2.truth.true_propensity);
  CHECK(w1.truth.y0 == w2.truth.y0);
  CHECK(w1.truth.y1 == w2.truth.y1);

  REQUIRE(w1.tiles.size() == w2.tiles.size());
  for (const auto& [ref, tile] : w1.tiles) {
    const auto it = w2.tiles.find(ref);
    REQUIRE(it != w2.tiles.end());
    CHECK(tile.pixels == it->second.pixels);  // byte-for-byte
    CHECK(tile.mask == it->second.mask);
  }

  SUBCASE("a different seed changes the draw") {
    WorldConfig other = cfg;
    other.seed = 98;
    World w3 = generate_world(other);
    CHECK(w1.truth.true_propensity != w3.truth.true_propensity);
  }
}

TEST_CASE("world bookkeeping: cells, units, truth alignment") {
  WorldConfig cfg;
  cfg.n_units = 30;
  cfg.n_adm2 = 10;
  cfg.n_periods = 3;
  cfg.image_side = 16;
  cfg.bands = 2;
  cfg.seed = 5;
  World w = generate_world(cfg);

  CHECK(w.units.size() == 30);
  CHECK(w.panel.cells.size() == 90);
  CHECK(w.panel.periods.size() == 3);
  CHECK(w.panel.covariate_names ==
        std::vector<std::string>{"x_proxy", "x_ground"});
  CHECK(w.truth.y0.size() == 90);
  CHECK(w.truth.true_propensity.size() == 90);

  std::set<std::string> unit_ids;
  for (const auto& u : w.units) unit_ids.insert(u.unit_id);
  CHECK(unit_ids.size() == 30);  // ids are unique

  std::set<std::string> adm2_ids;
  for (const auto& u : w.units) adm2_ids.insert(u.adm2_id);
  CHECK(adm2_ids.size() == 10);  // every district is populated

  for (const auto& cell : w.panel.cells) {
    CHECK((cell.treated == 0 || cell.treated == 1));
    REQUIRE(cell.outcome_lead.has_value());
    CHECK(*cell.outcome_lead >= 0.0);
    CHECK(*cell.outcome_lead <= 100.0);
    CHECK(cell.covariates.size() == 2);
    REQUIRE_FALSE(cell.tile_ref.empty());
    CHECK(w.tiles.count(cell.tile_ref) == 1);
  }
  for (double p : w.truth.true_propensity) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }

  SUBCASE("realized outcomes are the clipped potential outcomes") {
    std::size_t clipped = 0;
    for (std::size_t i = 0; i < w.panel.cells.size(); ++i) {
      const auto& cell = w.panel.cells[i];
      const double raw = cell.treated ? w.truth.y1[i] : w.truth.y0[i];
      const double expect = std::clamp(raw, 0.0, 100.0);
      CHECK(*cell.outcome_lead == expect);
      if (expect != raw) ++clipped;
    }
    CHECK(w.truth.n_clipped == clipped);
    CHECK(w.truth.clip_rate() ==
          static_cast<double>(clipped) / w.panel.cells.size());
  }

  SUBCASE("tile-free worlds leave the reference empty") {
    WorldConfig flat = cfg;
    flat.render_tiles = false;
    World wf = generate_world(flat);
    CHECK(wf.tiles.empty());
    for (const auto& cell : wf.panel.cells) CHECK(cell.tile_ref.empty());
  }
}

TEST_CASE("constant-effect identity holds before clipping") {
  World w = generate_world(fast_world(11));
  for (std::size_t i = 0; i < w.truth.y0.size(); ++i)
    CHECK(w.truth.y1[i] - w.truth.y0[i] ==
          doctest::Approx(w.truth.tau_true).epsilon(1e-12));
  // And exactly on average: clipping never touches the stored potentials.
  double mean_diff = 0.0;
  for (std::size_t i = 0; i < w.truth.y0.size(); ++i)
    mean_diff += w.truth.y1[i] - w.truth.y0[i];
  mean_diff /= static_cast<double>(w.truth.y0.size());
  CHECK(mean_diff == doctest::Approx(w.truth.tau_true).epsilon(1e-13));

  SUBCASE("heterogeneous effects follow the visible factor") {
    WorldConfig het = fast_world(11);
    het.heterogeneous = true;
    het.tau_slope = 2.0;
    World wh = generate_world(het);
    for (std::size_t i = 0; i < wh.truth.y0.size(); ++i) {
      const double effect =
          het.tau_true + het.tau_slope * wh.truth.latent_visible[i];
      CHECK(wh.truth.y1[i] - wh.truth.y0[i] ==
            doctest::Approx(effect).epsilon(1e-12));
    }
  }
}

TEST_CASE("clip rate stays negligible in a default-strength world") {
  World w = generate_world(fast_world(23));
  CHECK(w.truth.clip_rate() < 0.01);
}

TEST_CASE("unconfounded worlds hand tau to the difference in means") {
  WorldConfig cfg = fast_world(31);
  cfg.n_units = 500;
  cfg.gamma_visible = 0.0;
  cfg.gamma_tabular = 0.0;
  cfg.gamma_invisible = 0.0;
  World w = generate_world(cfg);

  // With a zero score every cell is a fair coin.
  for (double p : w.truth.true_propensity) CHECK(p == 0.5);

  AteEstimate est = estimate_ate(w.panel, {}, Specification::a_diffmeans);
  CHECK(std::abs(est.ate - cfg.tau_true) < 4.0 * est.std_error);
}

TEST_CASE("true-propensity weighting is unbiased under confounding") {
  // Visible confounding only; weight by the generator's own propensities and
  // average over replicated worlds.
  const std::size_t n_seeds = 40;
  std::vector<double> weighted, naive;
  double tau = 0.0;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    WorldConfig cfg = fast_world(1000 + s);
    cfg.n_units = 200;
    tau = cfg.tau_true;
    World w = generate_world(cfg);
    const auto y = outcomes(w.panel);
    const auto a = treatments(w.panel);
    weighted.push_back(hajek_ate(y, a, w.truth.true_propensity));
    naive.push_back(diff_in_means(y, a));
  }

  auto mean_of = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return m / static_cast<double>(v.size());
  };
  auto se_of = [&](const std::vector<double>& v) {
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) /
                     static_cast<double>(v.size()));
  };

  const double w_mean = mean_of(weighted);
  CHECK(std::abs(w_mean - tau) < 3.0 * se_of(weighted));
  // The naive contrast inherits the confounding and sits far from tau.
  CHECK(mean_of(naive) - tau > 2.0);
}

TEST_CASE("degenerate assignment is refused with a suggested intercept") {
  WorldConfig cfg = fast_world(3);
  cfg.assign_intercept = 10.0;  // nearly everyone treated
  CHECK_THROWS_WITH_AS(generate_world(cfg),
                       doctest::Contains("degenerate assignment"),
                       ValidationError);
  CHECK_THROWS_WITH_AS(generate_world(cfg),
                       doctest::Contains("suggested intercept"),
                       ValidationError);

  SUBCASE("the auto-centered intercept keeps assignment balanced") {
    WorldConfig balanced = fast_world(3);
    balanced.gamma_visible = 2.5;  // strong confounding, still centered
    World w = generate_world(balanced);
    double mean_p = 0.0;
    for (double p : w.truth.true_propensity) mean_p += p;
    mean_p /= static_cast<double>(w.truth.true_propensity.size());
    CHECK(mean_p > 0.35);
    CHECK(mean_p < 0.65);
  }
}

TEST_CASE("striped scenes mask every pixel exactly once") {
  WorldConfig cfg;
  cfg.n_units = 10;
  cfg.n_adm2 = 5;
  cfg.n_periods = 1;
  cfg.image_side = 16;
  cfg.bands = 3;
  cfg.seed = 42;
  World w = generate_world(cfg);
  REQUIRE_FALSE(w.tiles.empty());
  const ImageTile& tile = w.tiles.begin()->second;

  for (std::size_t n_scenes : {2, 3, 4}) {
    CAPTURE(n_scenes);
    auto scenes = striped_scenes(tile, n_scenes);
    REQUIRE(scenes.size() == n_scenes);
    for (std::size_t k = 0; k < n_scenes; ++k) {
      CHECK(scenes[k].tile_id == tile.tile_id + "_s" + std::to_string(k));
      CHECK(scenes[k].bands == tile.bands);
      CHECK(scenes[k].side == tile.side);
    }
    for (std::size_t p = 0; p < tile.pixel_count(); ++p) {
      std::size_t masked = 0;
      for (const auto& s : scenes)
        if (s.mask[p] == 0) ++masked;
      CHECK(masked == 1);
    }
    // Valid pixels carry the original values untouched.
    for (const auto& s : scenes) {
      for (std::size_t r = 0; r < tile.side; ++r)
        for (std::size_t c = 0; c < tile.side; ++c)
          if (s.valid_at(r, c))
            for (std::size_t b = 0; b < tile.bands; ++b)
              CHECK(s.at(b, r, c) == tile.at(b, r, c));
    }
  }

  SUBCASE("the median composite reproduces the source tile exactly") {
    auto scenes = striped_scenes(tile, 3);
    ImageTile composite = median_composite(scenes);
    CHECK(composite.mask == tile.mask);
    CHECK(composite.pixels == tile.pixels);
  }
  SUBCASE("fewer than two scenes cannot cover the mask") {
    CHECK_THROWS_WITH_AS(striped_scenes(tile, 1),
                         doctest::Contains("at least two"), ValidationError);
  }
}

TEST_CASE("bias ladder with oracle weights isolates the confounding gap") {
  BiasLadderConfig cfg;
  cfg.world = fast_world(700);
  cfg.world.n_units = 300;
  cfg.n_seeds = 10;
  cfg.use_true_propensity = true;

  BiasLadderReport report = bias_ladder(cfg);
  CHECK(report.tau_true == cfg.world.tau_true);
  REQUIRE(report.rows.size() == 4);
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    CHECK(report.rows[i].spec == cfg.specs[i]);
    CHECK(report.rows[i].n_seeds == 10);
    CHECK(std::isfinite(report.rows[i].mean_estimate));
    CHECK(report.rows[i].bias ==
          doctest::Approx(report.rows[i].mean_estimate - report.tau_true));
  }

  // All weighted specifications share the oracle weights, so their rows are
  // identical; only the unadjusted contrast keeps the confounding bias.
  const auto& a = report.row(Specification::a_diffmeans);
  const auto& b = report.row(Specification::b_x_fe);
  const auto& c2 = report.row(Specification::c2_m_x_fe);
  CHECK(b.mean_estimate == c2.mean_estimate);
  CHECK(std::abs(a.bias) > 2.0);
  CHECK(std::abs(b.bias) < 1.0);
  CHECK(std::abs(b.bias) < std::abs(a.bias));

  SUBCASE("the text table lists every specification") {
    const std::string text = report.to_text();
    for (const char* name : {"a", "b", "c1", "c2"})
      CHECK(text.find(name) != std::string::npos);
    CHECK(text.find("tau_true") != std::string::npos);
    CHECK(text.find("mean_estimate") != std::string::npos);
  }
  SUBCASE("missing rows are reported by name") {
    BiasLadderReport empty;
    CHECK_THROWS_WITH_AS(empty.row(Specification::c1_m),
                         doctest::Contains("not present"), ValidationError);
  }
  SUBCASE("degenerate ladder configs are refused") {
    BiasLadderConfig zero = cfg;
    zero.n_seeds = 0;
    CHECK_THROWS_AS(bias_ladder(zero), ValidationError);
    BiasLadderConfig none = cfg;
    none.specs.clear();
    CHECK_THROWS_AS(bias_ladder(none), ValidationError);
  }
}

TEST_CASE("bias ladder trains models when asked") {
  // Miniature end-to-end ladder: unadjusted vs. trained tabular adjustment.
  BiasLadderConfig cfg;
  cfg.world = fast_world(900);
  cfg.world.n_units = 60;
  cfg.world.n_adm2 = 10;
  cfg.world.n_periods = 1;
  cfg.world.gamma_visible = 1.5;
  cfg.specs = {Specification::a_diffmeans, Specification::b_x_fe};
  cfg.n_seeds = 2;
  cfg.model.embed_dim = 8;
  cfg.model.num_heads = 2;
  cfg.model.num_layers = 1;
  cfg.model.dropout_rate = 0.0f;
  cfg.model.drop_path_rate = 0.0f;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 16;
  cfg.train.folds = 2;

  BiasLadderReport report = bias_ladder(cfg);
  REQUIRE(report.rows.size() == 2);
  for (const auto& row : report.rows) {
    CHECK(row.n_seeds == 2);
    CHECK(std::isfinite(row.mean_estimate));
    CHECK(row.sd_estimate >= 0.0);
    CHECK(row.mean_abs_error >= 0.0);
  }
}

TEST_CASE("invisible confounding defeats the image-only adjustment") {
  // Assignment rides on a factor the tiles never encode, so a trained
  // image-only model cannot remove the bias.
  BiasLadderConfig cfg;
  cfg.world = fast_world(1400);
  cfg.world.n_units = 120;
  cfg.world.n_adm2 = 10;
  cfg.world.n_periods = 2;
  cfg.world.gamma_visible = 0.0;
  cfg.world.gamma_invisible = 1.5;
  cfg.world.render_tiles = true;
  cfg.world.image_side = 16;
  cfg.world.bands = 2;
  cfg.specs = {Specification::a_diffmeans, Specification::c1_m};
  cfg.n_seeds = 2;
  cfg.model.patch_size = 8;
  cfg.model.embed_dim = 8;
  cfg.model.num_heads = 2;
  cfg.model.num_layers = 1;
  cfg.model.dropout_rate = 0.0f;
  cfg.model.drop_path_rate = 0.0f;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 32;
  cfg.train.folds = 2;

  BiasLadderReport report = bias_ladder(cfg);
  const auto& a = report.row(Specification::a_diffmeans);
  const auto& c1 = report.row(Specification::c1_m);
  CHECK(a.bias > 2.0);   // invisible factor drives outcome and assignment
  CHECK(c1.bias > 2.0);  // imagery carries none of it
}
