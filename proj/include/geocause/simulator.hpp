#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "geocause/estimator.hpp"
#include "geocause/geo.hpp"
#include "geocause/vit.hpp"

namespace geocause {

// ---------------------------------------------------------------------------
// World configuration
// ---------------------------------------------------------------------------

/// Synthetic-world generator settings. The world has a single latent
/// "visible" factor that is rendered into image tiles as texture (blob
/// density, stripe orientation and frequency — never mean brightness), a
/// noisy tabular proxy of that factor, an independent observed tabular
/// driver, and an optional unobserved factor. Treatment assignment follows a
/// logistic model over those factors; outcomes are linear in them with a
/// constant additive treatment effect (optionally heterogeneous).
struct WorldConfig {
  // Population layout.
  std::size_t n_units = 2000;
  std::size_t n_adm2 = 50;
  std::size_t n_periods = 4;

  // Treatment effect (wealth-index points).
  double tau_true = 5.0;
  bool heterogeneous = false;
  double tau_slope = 0.0;  // added per unit of the visible factor when on

  // Assignment model: logit = intercept + gamma_visible * U_vis
  //   + gamma_tabular * X_ground + gamma_invisible * U_inv.
  // A NaN intercept means auto-centering (mean logit zero).
  double gamma_visible = 1.5;
  double gamma_tabular = 0.0;
  double gamma_invisible = 0.0;
  double assign_intercept = std::numeric_limits<double>::quiet_NaN();

  // Outcome model: Y(0) = base + beta_visible * U_vis + beta_tabular *
  // X_ground + beta_invisible * U_inv + noise; Y(1) = Y(0) + effect.
  double outcome_base = 50.0;
  double beta_visible = 8.0;
  double beta_tabular = 2.5;
  double beta_invisible = 8.0;
  double noise_sd = 6.0;

  // Correlation between the tabular proxy covariate and the visible factor.
  double proxy_share = 0.45;
  // Period-to-period persistence of the idiosyncratic latent component.
  double latent_rho = 0.7;

  // Imagery.
  bool render_tiles = true;
  std::size_t image_side = 32;
  std::size_t bands = 5;

  std::uint64_t seed = 1;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

/// Per-cell ground truth, aligned with the emitted panel's cell order.
/// Potential outcomes are stored unclipped so the constant-effect identity
/// y1 - y0 == tau survives to machine precision instead of being destroyed
/// by outcome clipping; the realized panel outcome is clipped to [0, 100]
/// and the clip count recorded.
struct WorldTruth {
  double tau_true = 0.0;
  std::vector<double> latent_visible;
  std::vector<double> latent_invisible;
  std::vector<double> true_propensity;  // each in (0, 1)
  std::vector<double> y0;
  std::vector<double> y1;
  std::size_t n_clipped = 0;

  double clip_rate() const {
    return y0.empty() ? 0.0 : static_cast<double>(n_clipped) / y0.size();
  }
};

/// A generated world: the assembled panel (treatment and outcome already
/// filled in), rendered composite tiles keyed by the cells' tile_ref, the
/// unit roster, and the scoring truth.
struct World {
  PanelSlice panel;
  std::map<std::string, ImageTile> tiles;
  std::vector<Neighborhood> units;
  WorldTruth truth;
};

/// Generate a world. Deterministic in the seed (per-unit counter-derived
/// random streams, so identical worlds are produced regardless of generation
/// order). Throws ValidationError on degenerate assignment (mean propensity
/// outside [0.05, 0.95]) with a suggested intercept.
World generate_world(const WorldConfig& cfg);

/// Masked variants of a composite tile used when emitting raw scenes: each
/// of `n_scenes` copies carries diagonal masked stripes at a different
/// offset, arranged so every pixel stays valid in at least one scene. The
/// per-pixel median of the scenes reproduces the input tile exactly.
std::vector<ImageTile> striped_scenes(const ImageTile& tile,
                                      std::size_t n_scenes = 3);

// ---------------------------------------------------------------------------
// Bias ladder
// ---------------------------------------------------------------------------

/// Monte Carlo comparison of estimation specifications on replicated worlds.
struct BiasLadderConfig {
  WorldConfig world;  // seed acts as the base; replication r uses seed + r
  std::vector<Specification> specs = {
      Specification::a_diffmeans, Specification::b_x_fe, Specification::c1_m,
      Specification::c2_m_x_fe};
  std::size_t n_seeds = 50;
  ModelConfig model;      // imagery geometry must match the world
  TrainConfig train;
  bool use_true_propensity = false;  // oracle weights instead of training
};

struct BiasLadderRow {
  Specification spec = Specification::a_diffmeans;
  double mean_estimate = 0.0;
  double bias = 0.0;            // mean_estimate - tau_true
  double mean_abs_error = 0.0;  // mean over seeds of |estimate - tau_true|
  double sd_estimate = 0.0;     // across seeds
  std::size_t n_seeds = 0;
};

struct BiasLadderReport {
  double tau_true = 0.0;
  std::vector<BiasLadderRow> rows;  // in the order of config.specs

  const BiasLadderRow& row(Specification s) const;
  std::string to_text() const;  // fixed-width summary table
};

/// Replicate worlds under incremented seeds, estimate every requested
/// specification on each (training propensity models where the
/// specification calls for them), and tabulate bias against tau_true.
BiasLadderReport bias_ladder(const BiasLadderConfig& cfg);

}  // namespace geocause
