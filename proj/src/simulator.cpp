#include "geocause/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "geocause/common.hpp"

namespace geocause {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Fixed per-band texture gains: bands carry correlated but not identical
// renditions of the same latent signal.
constexpr float kBlobGain[] = {1.0f, 0.8f, 1.1f, 0.6f, 0.9f};
constexpr float kStripeGain[] = {0.7f, 1.2f, 0.5f, 1.0f, 0.8f};

double band_gain(const float* table, std::size_t n_table, std::size_t b) {
  return table[b % n_table];
}

// Smooth random field over lat/lon: a small bank of sinusoidal harmonics
// with sub-district wavelengths, so the field varies within districts while
// staying smooth at neighborhood scale.
struct HarmonicField {
  struct Term {
    double amp, fy, fx, phase;
  };
  std::vector<Term> terms;

  double eval(double lat, double lon) const {
    double v = 0.0;
    for (const auto& t : terms)
      v += t.amp * std::sin(2.0 * kPi * (lat * t.fy + lon * t.fx) + t.phase);
    return v;
  }
};

HarmonicField make_field(SplitMix& rng, std::size_t n_terms) {
  HarmonicField f;
  const double amp = 1.0 / std::sqrt(static_cast<double>(n_terms));
  for (std::size_t k = 0; k < n_terms; ++k) {
    // Wavelengths between roughly 0.7 and 2.0 degrees.
    const double wavelength = rng.next_uniform(0.7, 2.0);
    const double theta = rng.next_uniform(0.0, 2.0 * kPi);
    f.terms.push_back({amp, std::cos(theta) / wavelength,
                       std::sin(theta) / wavelength,
                       rng.next_uniform(0.0, 2.0 * kPi)});
  }
  return f;
}

void standardize_inplace(std::vector<double>& v) {
  if (v.empty()) return;
  const double n = static_cast<double>(v.size());
  double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  double sd = std::sqrt(ss / n);
  if (sd < 1e-12) sd = 1.0;
  for (double& x : v) x = (x - mean) / sd;
}

double logistic(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                  : std::exp(z) / (1.0 + std::exp(z));
}

std::string padded_id(char prefix, std::size_t value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%0*zu", prefix, width, value);
  return buf;
}

/// Procedural texture encoding the latent value `u` in structure, not in
/// brightness: blob count rises with u, stripes flip orientation on the sign
/// of u and tighten their period as u grows. Every band is mean-centered at
/// the end so the tile mean carries no information.
ImageTile render_tile(const WorldConfig& cfg, const std::string& tile_id,
                      int period_index, double u, SplitMix& rng) {
  ImageTile tile;
  tile.tile_id = tile_id;
  tile.bands = cfg.bands;
  tile.side = cfg.image_side;
  tile.period_index = period_index;
  tile.pixels.assign(cfg.bands * cfg.image_side * cfg.image_side, 0.0f);
  tile.mask.assign(cfg.image_side * cfg.image_side, 1);

  const std::size_t side = cfg.image_side;

  // Blob layer, shared across bands.
  std::vector<float> blobs(side * side, 0.0f);
  const int n_blobs = std::clamp(
      static_cast<int>(std::lround(8.0 + 2.4 * u + rng.next_normal() * 0.5)),
      1, 15);
  for (int b = 0; b < n_blobs; ++b) {
    const double r0 = rng.next_uniform(0.0, static_cast<double>(side));
    const double c0 = rng.next_uniform(0.0, static_cast<double>(side));
    const double radius = rng.next_uniform(2.0, 4.0);
    const int lo_r = std::max(0, static_cast<int>(r0 - 3.0 * radius));
    const int hi_r =
        std::min<int>(static_cast<int>(side) - 1,
                      static_cast<int>(r0 + 3.0 * radius) + 1);
    const int lo_c = std::max(0, static_cast<int>(c0 - 3.0 * radius));
    const int hi_c =
        std::min<int>(static_cast<int>(side) - 1,
                      static_cast<int>(c0 + 3.0 * radius) + 1);
    for (int r = lo_r; r <= hi_r; ++r) {
      for (int c = lo_c; c <= hi_c; ++c) {
        const double d2 = (r - r0) * (r - r0) + (c - c0) * (c - c0);
        blobs[static_cast<std::size_t>(r) * side + c] += static_cast<float>(
            0.9 * std::exp(-d2 / (2.0 * radius * radius)));
      }
    }
  }

  // Stripe layer: orientation encodes sign(u), spatial frequency and
  // amplitude encode |u|.
  const double theta = u >= 0.0 ? kPi / 4.0 : 3.0 * kPi / 4.0;
  const double stripe_amp = 0.25 + 0.5 * std::abs(std::tanh(0.8 * u));
  const double period =
      9.0 + (3.5 - 9.0) * logistic(0.9 * u) + rng.next_uniform(-0.3, 0.3);
  const double phase = rng.next_uniform(0.0, 2.0 * kPi);
  const double kx = std::cos(theta) * 2.0 * kPi / period;
  const double ky = std::sin(theta) * 2.0 * kPi / period;
  std::vector<float> stripes(side * side, 0.0f);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c)
      stripes[r * side + c] = static_cast<float>(
          stripe_amp * std::sin(kx * static_cast<double>(c) +
                                ky * static_cast<double>(r) + phase));

  for (std::size_t b = 0; b < cfg.bands; ++b) {
    const double bg = band_gain(kBlobGain, std::size(kBlobGain), b);
    const double sg = band_gain(kStripeGain, std::size(kStripeGain), b);
    double mean = 0.0;
    for (std::size_t p = 0; p < side * side; ++p) {
      const double v =
          bg * blobs[p] + sg * stripes[p] + 0.2 * rng.next_normal();
      tile.pixels[b * side * side + p] = static_cast<float>(v);
      mean += v;
    }
    mean /= static_cast<double>(side * side);
    for (std::size_t p = 0; p < side * side; ++p)
      tile.pixels[b * side * side + p] -= static_cast<float>(mean);
  }
  return tile;
}

}  // namespace

void WorldConfig::validate() const {
  if (n_adm2 == 0) throw ValidationError("world: n_adm2 must be positive");
  if (n_units < 2 * n_adm2) {
    throw ValidationError("world: n_units (" + std::to_string(n_units) +
                          ") must be at least twice n_adm2 (" +
                          std::to_string(n_adm2) + ")");
  }
  if (n_periods == 0 || n_periods > 12) {
    throw ValidationError("world: n_periods must be in [1, 12]");
  }
  if (!std::isfinite(tau_true)) {
    throw ValidationError("world: tau_true must be finite");
  }
  if (noise_sd < 0.0) throw ValidationError("world: noise_sd must be >= 0");
  if (proxy_share < 0.0 || proxy_share > 1.0) {
    throw ValidationError("world: proxy_share must lie in [0, 1]");
  }
  if (latent_rho < 0.0 || latent_rho >= 1.0) {
    throw ValidationError("world: latent_rho must lie in [0, 1)");
  }
  if (render_tiles && (image_side < 8 || bands == 0)) {
    throw ValidationError("world: image_side must be >= 8 and bands >= 1");
  }
}

World generate_world(const WorldConfig& cfg) {
  cfg.validate();

  World world;
  const std::size_t n_cells = cfg.n_units * cfg.n_periods;

  SplitMix field_rng(derive_seed(cfg.seed, 1));
  const HarmonicField field = make_field(field_rng, 6);

  // District layout: jittered grid, one ADM1 stripe per grid row.
  SplitMix layout_rng(derive_seed(cfg.seed, 2));
  const std::size_t grid_cols = static_cast<std::size_t>(
      std::ceil(std::sqrt(static_cast<double>(cfg.n_adm2))));
  struct District {
    std::string adm2_id, adm1_id;
    double lat, lon;
  };
  std::vector<District> districts;
  for (std::size_t d = 0; d < cfg.n_adm2; ++d) {
    const std::size_t row = d / grid_cols, col = d % grid_cols;
    District dist;
    dist.adm2_id = padded_id('D', d, 4);
    dist.adm1_id = padded_id('A', row, 2);
    dist.lat = 4.0 + 1.4 * static_cast<double>(row) +
               layout_rng.next_uniform(-0.2, 0.2);
    dist.lon = 10.0 + 1.4 * static_cast<double>(col) +
               layout_rng.next_uniform(-0.2, 0.2);
    districts.push_back(dist);
  }

  // Per-unit draws under counter-derived streams (order-independent).
  world.units.resize(cfg.n_units);
  std::vector<double> u_vis(n_cells), u_inv(n_cells), x_ground(n_cells),
      proxy_noise(n_cells), outcome_noise(n_cells), assign_uniform(n_cells);
  const std::uint64_t unit_root = derive_seed(cfg.seed, 3);
  for (std::size_t u = 0; u < cfg.n_units; ++u) {
    SplitMix rng(derive_seed(unit_root, u));
    const District& dist = districts[u % cfg.n_adm2];
    Neighborhood& unit = world.units[u];
    unit.unit_id = padded_id('U', u, 6);
    unit.country_code = "SIM";
    unit.adm1_id = dist.adm1_id;
    unit.adm2_id = dist.adm2_id;
    unit.centroid.lat = dist.lat + 0.4 * rng.next_normal();
    unit.centroid.lon = dist.lon + 0.4 * rng.next_normal();
    unit.validate();

    const double spatial = field.eval(unit.centroid.lat, unit.centroid.lon);
    double z_idio = 0.0, z_inv = 0.0;
    for (std::size_t t = 0; t < cfg.n_periods; ++t) {
      const double innov = std::sqrt(1.0 - cfg.latent_rho * cfg.latent_rho);
      z_idio = t == 0 ? rng.next_normal()
                      : cfg.latent_rho * z_idio + innov * rng.next_normal();
      z_inv = t == 0 ? rng.next_normal()
                     : cfg.latent_rho * z_inv + innov * rng.next_normal();
      const std::size_t cell = u * cfg.n_periods + t;
      u_vis[cell] = 0.8 * spatial + 0.6 * z_idio;
      u_inv[cell] = z_inv;
      x_ground[cell] = rng.next_normal();
      proxy_noise[cell] = rng.next_normal();
      outcome_noise[cell] = rng.next_normal();
      assign_uniform[cell] = rng.next_double();
    }
  }

  standardize_inplace(u_vis);
  standardize_inplace(u_inv);
  standardize_inplace(x_ground);
  std::vector<double> x_proxy(n_cells);
  const double blend = std::sqrt(1.0 - cfg.proxy_share * cfg.proxy_share);
  for (std::size_t i = 0; i < n_cells; ++i)
    x_proxy[i] = cfg.proxy_share * u_vis[i] + blend * proxy_noise[i];
  standardize_inplace(x_proxy);

  // Assignment scores, auto-centered intercept, degeneracy guard.
  std::vector<double> score(n_cells);
  double score_mean = 0.0;
  for (std::size_t i = 0; i < n_cells; ++i) {
    score[i] = cfg.gamma_visible * u_vis[i] + cfg.gamma_tabular * x_ground[i] +
               cfg.gamma_invisible * u_inv[i];
    score_mean += score[i];
  }
  score_mean /= static_cast<double>(n_cells);
  const double a0 = std::isfinite(cfg.assign_intercept) ? cfg.assign_intercept
                                                        : -score_mean;
  double prop_mean = 0.0;
  WorldTruth& truth = world.truth;
  truth.tau_true = cfg.tau_true;
  truth.latent_visible = u_vis;
  truth.latent_invisible = u_inv;
  truth.true_propensity.resize(n_cells);
  for (std::size_t i = 0; i < n_cells; ++i) {
    truth.true_propensity[i] = logistic(a0 + score[i]);
    prop_mean += truth.true_propensity[i];
  }
  prop_mean /= static_cast<double>(n_cells);
  if (prop_mean < 0.05 || prop_mean > 0.95) {
    throw ValidationError(
        "world: degenerate assignment, mean propensity " +
        format_double(prop_mean) + "; suggested intercept " +
        format_double(-score_mean));
  }

  // Potential outcomes (unclipped) and realized panel.
  truth.y0.resize(n_cells);
  truth.y1.resize(n_cells);
  PanelSlice& panel = world.panel;
  panel.funder = Funder::WorldBank;
  panel.sector_code = 10;
  panel.periods =
      make_periods(2002, 2002 + 3 * static_cast<int>(cfg.n_periods) - 1);
  panel.covariate_names = {"x_proxy", "x_ground"};
  panel.cells.reserve(n_cells);

  const std::uint64_t tile_root = derive_seed(cfg.seed, 4);
  for (std::size_t u = 0; u < cfg.n_units; ++u) {
    const Neighborhood& unit = world.units[u];
    for (std::size_t t = 0; t < cfg.n_periods; ++t) {
      const std::size_t i = u * cfg.n_periods + t;
      truth.y0[i] = cfg.outcome_base + cfg.beta_visible * u_vis[i] +
                    cfg.beta_tabular * x_ground[i] +
                    cfg.beta_invisible * u_inv[i] +
                    cfg.noise_sd * outcome_noise[i];
      double effect = cfg.tau_true;
      if (cfg.heterogeneous) effect += cfg.tau_slope * u_vis[i];
      truth.y1[i] = truth.y0[i] + effect;

      PanelCell cell;
      cell.unit_id = unit.unit_id;
      cell.period_index = static_cast<int>(t);
      cell.treated = assign_uniform[i] < truth.true_propensity[i] ? 1 : 0;
      double y = cell.treated ? truth.y1[i] : truth.y0[i];
      const double clipped = std::clamp(y, 0.0, 100.0);
      if (clipped != y) ++truth.n_clipped;
      cell.outcome_lead = clipped;
      cell.covariates = {x_proxy[i], x_ground[i]};
      cell.adm2_id = unit.adm2_id;
      cell.adm1_id = unit.adm1_id;
      cell.country_code = unit.country_code;
      if (cfg.render_tiles) {
        cell.tile_ref = unit.unit_id + "_p" + std::to_string(t);
        SplitMix tile_rng(derive_seed(tile_root, i));
        world.tiles.emplace(
            cell.tile_ref,
            render_tile(cfg, cell.tile_ref, static_cast<int>(t), u_vis[i],
                        tile_rng));
      }
      panel.cells.push_back(std::move(cell));
    }
  }
  return world;
}

std::vector<ImageTile> striped_scenes(const ImageTile& tile,
                                      std::size_t n_scenes) {
  if (n_scenes < 2) {
    throw ValidationError("striped_scenes: need at least two scenes");
  }
  tile.validate();
  std::vector<ImageTile> scenes;
  const std::size_t stripe_width = 2;
  for (std::size_t k = 0; k < n_scenes; ++k) {
    ImageTile scene = tile;
    scene.tile_id = tile.tile_id + "_s" + std::to_string(k);
    for (std::size_t r = 0; r < tile.side; ++r) {
      for (std::size_t c = 0; c < tile.side; ++c) {
        // Diagonal stripes; each pixel is masked in exactly one scene, so
        // the per-pixel median over all scenes reproduces the input.
        if (((r + c) / stripe_width) % n_scenes != k) continue;
        scene.mask[r * tile.side + c] = 0;
        for (std::size_t b = 0; b < tile.bands; ++b)
          scene.at(b, r, c) = kMaskedPixel;
      }
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

const BiasLadderRow& BiasLadderReport::row(Specification s) const {
  for (const auto& r : rows)
    if (r.spec == s) return r;
  throw ValidationError("bias ladder: specification " + specification_name(s) +
                        " not present in report");
}

std::string BiasLadderReport::to_text() const {
  std::string out =
      "spec  mean_estimate        bias   mean|err|          sd   seeds\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-4s %14.4f %11.4f %11.4f %11.4f %7zu\n",
                  specification_name(r.spec).c_str(), r.mean_estimate, r.bias,
                  r.mean_abs_error, r.sd_estimate, r.n_seeds);
    out += line;
  }
  out += "tau_true " + format_double(tau_true) + "\n";
  return out;
}

BiasLadderReport bias_ladder(const BiasLadderConfig& cfg) {
  if (cfg.n_seeds == 0) {
    throw ValidationError("bias ladder: n_seeds must be positive");
  }
  if (cfg.specs.empty()) {
    throw ValidationError("bias ladder: no specifications requested");
  }

  std::map<Specification, std::vector<double>> estimates;
  double tau = 0.0;
  for (std::size_t r = 0; r < cfg.n_seeds; ++r) {
    WorldConfig wc = cfg.world;
    wc.seed = cfg.world.seed + r;
    World world = generate_world(wc);
    tau = world.truth.tau_true;

    for (Specification spec : cfg.specs) {
      std::vector<double> prop;
      if (spec != Specification::a_diffmeans) {
        if (cfg.use_true_propensity) {
          prop = world.truth.true_propensity;
        } else {
          ModelConfig base = cfg.model;
          base.image_side = wc.image_side;
          base.image_bands = wc.bands;
          SpecTrainInputs in = make_spec_inputs(world.panel, spec, base);
          TrainConfig tc = cfg.train;
          tc.seed = derive_seed(wc.seed, 100 + static_cast<std::uint64_t>(spec));
          TrainResult tr = train_propensity(world.panel, world.tiles, in.design,
                                            in.model, tc);
          prop = tr.oof_probability;
        }
      }
      AteEstimate est =
          estimate_ate(world.panel, prop, spec, EstimateOptions{});
      estimates[spec].push_back(est.ate);
    }
  }

  BiasLadderReport report;
  report.tau_true = tau;
  for (Specification spec : cfg.specs) {
    const auto& v = estimates[spec];
    BiasLadderRow row;
    row.spec = spec;
    row.n_seeds = v.size();
    const double n = static_cast<double>(v.size());
    row.mean_estimate = std::accumulate(v.begin(), v.end(), 0.0) / n;
    row.bias = row.mean_estimate - tau;
    double abs_sum = 0.0, ss = 0.0;
    for (double e : v) {
      abs_sum += std::abs(e - tau);
      ss += (e - row.mean_estimate) * (e - row.mean_estimate);
    }
    row.mean_abs_error = abs_sum / n;
    row.sd_estimate = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace geocause
