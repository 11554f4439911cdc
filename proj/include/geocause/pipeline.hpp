#pragma once

#include <string>
#include <vector>

#include "geocause/runconfig.hpp"

namespace geocause {

/// Outcome of one pipeline stage. Every file the stage wrote is listed in
/// `outputs` (paths relative to the run's output directory) and recorded in
/// the stage manifest with a content hash, so reruns can be compared
/// byte-for-byte and downstream stages can detect stale inputs.
struct StageResult {
  std::string stage;
  std::string stage_dir;      // absolute
  std::string manifest_path;  // absolute
  std::vector<std::string> outputs;
  std::vector<std::string> warnings;
};

// The seven stages. Each validates the configuration, checks the artifacts
// it consumes against the producing stage's manifest (refusing with an
// explanatory diff when content has drifted), writes its products plus the
// effective configuration into <out_dir>/<stage>/, and finishes with a
// manifest listing every output hash.

/// Generate the synthetic world: unit roster, panel with treatment and
/// outcome filled in, per-cell raw scenes with masked stripes, and the
/// scoring truth.
StageResult cmd_simulate(const RunConfig& cfg);

/// Assemble the estimation panel. With [paths] projects_csv set, builds it
/// from real unit/project/outcome/covariate files (plus optional raw scenes);
/// otherwise consumes the simulated world. Either way, raw scenes are
/// composited per cell into one tile via the masked per-pixel median.
StageResult cmd_build_panel(const RunConfig& cfg);

/// Cross-fitted propensity training for every trainable requested
/// specification; writes out-of-fold probabilities, discrimination (AUC),
/// tabular salience, and per-fold checkpoints.
StageResult cmd_train(const RunConfig& cfg);

/// Treatment-effect estimation for every requested specification with
/// available propensities (the unadjusted one always runs).
StageResult cmd_estimate(const RunConfig& cfg);

/// Post-estimation analysis: meta-regression of ATE levels on specification
/// structure, two-way fixed-effects robustness check, salience deltas.
StageResult cmd_analyze(const RunConfig& cfg);

/// SVG charts: estimates with intervals per specification, AUC bars.
StageResult cmd_plot(const RunConfig& cfg);

/// Single self-contained HTML summary embedding the charts and tables.
StageResult cmd_report(const RunConfig& cfg);

/// Dispatch by stage name ("simulate", "build-panel", "train", "estimate",
/// "analyze", "plot", "report"); ValidationError on unknown names.
StageResult run_stage(const std::string& name, const RunConfig& cfg);

/// All stage names in execution order.
const std::vector<std::string>& stage_names();

}  // namespace geocause
