#pragma once

#include <string>
#include <vector>

#include "geocause/geo.hpp"
#include "geocause/simulator.hpp"
#include "geocause/vit.hpp"

namespace geocause {

/// Declarative settings for a whole pipeline run. Loaded from a TOML-style
/// file ([section] headers, `key = value` lines, strings, numbers, booleans
/// and string arrays), then optionally overridden key-by-key from the
/// command line. The merged effective configuration can be serialised back
/// out, and every stage archives it next to its outputs.
struct RunConfig {
  // [run]
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::vector<std::string> specs = {"a", "b", "c1", "c2"};
  std::string funder = "world_bank";
  int sector_code = 10;
  bool cluster_adm2 = false;
  bool raw_ht = false;

  // [world] — synthetic-data mode settings.
  WorldConfig world;

  // [model]
  ModelConfig model;

  // [train]
  TrainConfig train;

  // [panel]
  PanelOptions panel;

  // [paths] — real-data mode inputs; when projects_csv is set the
  // build-panel stage assembles the panel from these files instead of the
  // simulated world.
  std::string units_csv;
  std::string projects_csv;
  std::string outcomes_csv;
  std::string covariates_csv;
  std::string scenes_dir;  // per-cell raw scenes named <tile_ref>_s<k>.gctl

  /// Apply one `section.key = value` override; unknown keys raise
  /// ValidationError naming the key.
  void apply(const std::string& section, const std::string& key,
             const std::string& value);

  /// Full round-trip serialisation of the effective configuration.
  std::string to_toml() const;

  /// Seeds for the stochastic stages, all derived from `seed`.
  std::uint64_t world_seed() const { return seed; }
  std::uint64_t train_seed() const { return derive_seed(seed, 11); }

  void validate() const;
};

/// Parse a config file. Unknown sections or keys, malformed lines, and type
/// mismatches raise ValidationError with the offending line number.
RunConfig load_run_config(const std::string& path);

/// Parse the body of a config (same grammar) from memory.
RunConfig parse_run_config(const std::string& text, const std::string& origin);

/// Apply `section.key=value` override strings in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

}  // namespace geocause
