#include "geocause/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "geocause/analysis.hpp"
#include "geocause/common.hpp"
#include "geocause/csvio.hpp"
#include "geocause/simulator.hpp"
#include "geocause/svgplot.hpp"

namespace geocause {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr std::size_t kScenesPerCell = 3;

/// Bookkeeping shared by every stage: resolves inputs against upstream
/// manifests (refusing to run on drifted content), records every written
/// file, and finishes by emitting the stage manifest with content hashes.
class StageIo {
 public:
  StageIo(const RunConfig& cfg, std::string command, std::string dir_name)
      : cfg_(cfg),
        command_(std::move(command)),
        dir_name_(std::move(dir_name)),
        root_(cfg.out_dir) {
    std::error_code ec;
    fs::create_directories(root_ / dir_name_, ec);
    if (ec) {
      throw DataError("cannot create output directory " +
                      (root_ / dir_name_).string() + ": " + ec.message());
    }
  }

  const fs::path& root() const { return root_; }

  /// Resolve an artifact produced by an upstream stage (path relative to the
  /// output root). The file must exist, be listed in its stage's manifest,
  /// and hash to the recorded value; otherwise the run is refused with an
  /// explanation of what drifted.
  std::string input(const std::string& rel) {
    const fs::path full = root_ / rel;
    if (!fs::exists(full)) {
      throw DataError("missing input '" + rel +
                      "'; run the earlier pipeline stages first");
    }
    const std::string producing = rel.substr(0, rel.find('/'));
    const json& man = manifest_for(producing);
    const std::string actual = hash_file_hex(full.string());
    std::string recorded;
    if (man.contains("outputs") && man["outputs"].contains(rel)) {
      recorded = man["outputs"][rel].get<std::string>();
    }
    if (recorded.empty()) {
      throw DataError("input '" + rel + "' is not listed in the '" +
                      producing +
                      "' stage manifest; rerun that stage to register it");
    }
    if (recorded != actual) {
      throw DataError("stale input refused:\n  " + rel +
                      "\n    manifest hash: " + recorded +
                      "\n    current hash:  " + actual +
                      "\n  the file changed after the '" + producing +
                      "' stage ran; rerun that stage before continuing");
    }
    inputs_[rel] = actual;
    return full.string();
  }

  std::optional<std::string> optional_input(const std::string& rel) {
    if (!fs::exists(root_ / rel)) return std::nullopt;
    return input(rel);
  }

  /// Record a file outside the output root (source data), hash only.
  std::string external_input(const std::string& path) {
    if (path.empty() || !fs::exists(path)) {
      throw DataError("missing input file: " +
                      (path.empty() ? std::string("(unset path)") : path));
    }
    inputs_["external:" + path] = hash_file_hex(path);
    return path;
  }

  /// Register a new output (directories created); returns the full path.
  std::string output(const std::string& rel) {
    const fs::path full = root_ / rel;
    std::error_code ec;
    fs::create_directories(full.parent_path(), ec);
    output_rels_.insert(rel);
    return full.string();
  }

  void write_text(const std::string& rel, const std::string& content) {
    const std::string path = output(rel);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out << content;
    if (!out) throw DataError("write failed: " + path);
  }

  void warn(std::string msg) { warnings_.push_back(std::move(msg)); }
  const std::vector<std::string>& warnings() const { return warnings_; }

  StageResult finish() {
    write_text(dir_name_ + "/effective_config.toml", cfg_.to_toml());

    json man;
    man["stage"] = command_;
    man["seed"] = cfg_.seed;
    man["config_hash"] = hash_hex(cfg_.to_toml());
    json in = json::object();
    for (const auto& [rel, hash] : inputs_) in[rel] = hash;
    man["inputs"] = std::move(in);
    json out = json::object();
    for (const auto& rel : output_rels_)
      out[rel] = hash_file_hex((root_ / rel).string());
    man["outputs"] = std::move(out);
    man["warnings"] = warnings_;

    const fs::path manifest_path = root_ / dir_name_ / "manifest.json";
    {
      std::ofstream f(manifest_path, std::ios::binary | std::ios::trunc);
      if (!f) {
        throw DataError("cannot write manifest: " + manifest_path.string());
      }
      f << man.dump(2) << "\n";
    }

    StageResult result;
    result.stage = command_;
    result.stage_dir = (root_ / dir_name_).string();
    result.manifest_path = manifest_path.string();
    result.outputs.assign(output_rels_.begin(), output_rels_.end());
    result.warnings = warnings_;
    return result;
  }

 private:
  const json& manifest_for(const std::string& stage_dir) {
    auto it = manifests_.find(stage_dir);
    if (it != manifests_.end()) return it->second;
    const fs::path path = root_ / stage_dir / "manifest.json";
    if (!fs::exists(path)) {
      throw DataError("no manifest found for the '" + stage_dir +
                      "' stage (expected " + path.string() +
                      "); run that stage first");
    }
    std::ifstream in(path, std::ios::binary);
    json man;
    try {
      in >> man;
    } catch (const std::exception& e) {
      throw DataError("unreadable manifest " + path.string() + ": " +
                      e.what());
    }
    return manifests_.emplace(stage_dir, std::move(man)).first->second;
  }

  const RunConfig& cfg_;
  std::string command_;
  std::string dir_name_;
  fs::path root_;
  std::map<std::string, std::string> inputs_;
  std::set<std::string> output_rels_;
  std::vector<std::string> warnings_;
  std::map<std::string, json> manifests_;
};

std::vector<Specification> requested_specs(const RunConfig& cfg) {
  std::vector<Specification> specs;
  for (const auto& s : cfg.specs) {
    const Specification spec = parse_specification(s);
    if (std::find(specs.begin(), specs.end(), spec) == specs.end())
      specs.push_back(spec);
  }
  return specs;
}

bool spec_uses_images(Specification s) {
  return s == Specification::c1_m || s == Specification::c2_m_x_fe;
}

std::string html_escape(const std::string& s) {
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

std::string html_table(const CsvTable& t) {
  std::string out = "<table>\n<tr>";
  for (const auto& h : t.header) out += "<th>" + html_escape(h) + "</th>";
  out += "</tr>\n";
  for (const auto& row : t.rows) {
    out += "<tr>";
    for (const auto& f : row) out += "<td>" + html_escape(f) + "</td>";
    out += "</tr>\n";
  }
  out += "</table>\n";
  return out;
}

std::string slurp_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

StageResult cmd_simulate(const RunConfig& cfg) {
  cfg.validate();
  StageIo io(cfg, "simulate", "world");

  WorldConfig wc = cfg.world;
  wc.seed = cfg.world_seed();
  World world = generate_world(wc);
  world.panel.funder = parse_funder(cfg.funder);
  world.panel.sector_code = cfg.sector_code;

  write_units_csv(io.output("world/units.csv"), world.units);
  write_panel_csv(io.output("world/panel.csv"), world.panel);
  for (const auto& [ref, tile] : world.tiles) {
    for (const auto& scene : striped_scenes(tile, kScenesPerCell)) {
      write_tile(io.output("world/scenes/" + scene.tile_id + ".gctl"), scene);
    }
  }

  std::size_t treated = 0;
  for (const auto& c : world.panel.cells) treated += c.treated ? 1 : 0;
  double prop_mean = 0.0;
  for (double p : world.truth.true_propensity) prop_mean += p;
  if (!world.truth.true_propensity.empty())
    prop_mean /= static_cast<double>(world.truth.true_propensity.size());

  json truth;
  truth["tau_true"] = world.truth.tau_true;
  truth["n_cells"] = world.panel.cells.size();
  truth["n_treated_cells"] = treated;
  truth["n_clipped"] = world.truth.n_clipped;
  truth["clip_rate"] = world.truth.clip_rate();
  truth["mean_true_propensity"] = prop_mean;
  truth["row_order"] = "arrays align with the rows of panel.csv";
  truth["true_propensity"] = world.truth.true_propensity;
  truth["y0"] = world.truth.y0;
  truth["y1"] = world.truth.y1;
  truth["latent_visible"] = world.truth.latent_visible;
  truth["latent_invisible"] = world.truth.latent_invisible;
  io.write_text("world/truth.json", truth.dump(2) + "\n");

  return io.finish();
}

// ---------------------------------------------------------------------------
// build-panel
// ---------------------------------------------------------------------------

namespace {

/// Load the scene stack for one tile_ref, either from the simulated world
/// (manifest-checked) or from an external scenes directory. Empty when no
/// scene exists.
std::vector<ImageTile> load_scenes(StageIo& io, const std::string& scenes_dir,
                                   bool external, const std::string& ref) {
  std::vector<ImageTile> scenes;
  for (std::size_t k = 0;; ++k) {
    const std::string name = ref + "_s" + std::to_string(k) + ".gctl";
    if (external) {
      const fs::path p = fs::path(scenes_dir) / name;
      if (!fs::exists(p)) break;
      scenes.push_back(read_tile(io.external_input(p.string())));
    } else {
      auto p = io.optional_input(scenes_dir + "/" + name);
      if (!p) break;
      scenes.push_back(read_tile(*p));
    }
  }
  return scenes;
}

}  // namespace

StageResult cmd_build_panel(const RunConfig& cfg) {
  cfg.validate();
  StageIo io(cfg, "build-panel", "panel");

  PanelSlice panel;
  json report;
  const bool real_mode = !cfg.projects_csv.empty();
  if (real_mode) {
    auto units = read_units_csv(io.external_input(cfg.units_csv));
    auto projects = read_projects_csv(io.external_input(cfg.projects_csv));
    const auto periods =
        make_periods(cfg.panel.window_first_year, cfg.panel.window_last_year);
    auto outcomes =
        read_outcomes_csv(io.external_input(cfg.outcomes_csv), periods);
    CovariateTable covariates;
    if (!cfg.covariates_csv.empty()) {
      covariates =
          read_covariates_csv(io.external_input(cfg.covariates_csv), periods);
    }
    PanelBuildResult built =
        build_panel(units, projects, outcomes, covariates,
                    parse_funder(cfg.funder), cfg.sector_code, cfg.panel);
    if (built.rejected) {
      std::string detail;
      for (const auto& note : built.notes) detail += "; " + note;
      throw DataError("panel rejected (" + built.reject_reason + ")" + detail);
    }
    panel = std::move(built.panel);
    report["n_units_in"] = built.n_units_in;
    report["n_units_dropped_never_treated_country"] =
        built.n_units_dropped_never_treated_country;
    report["n_cells_missing_outcome"] = built.n_cells_missing_outcome;
    report["dropped_zero_variance"] = built.dropped_zero_variance;
    report["notes"] = built.notes;
  } else {
    panel = read_panel_csv(io.input("world/panel.csv"));
  }

  // Composite raw scenes (masked per-pixel median) into one tile per cell.
  std::set<std::string> refs;
  for (const auto& c : panel.cells)
    if (!c.tile_ref.empty()) refs.insert(c.tile_ref);
  std::size_t composited = 0, without_scenes = 0;
  for (const auto& ref : refs) {
    std::vector<ImageTile> scenes =
        real_mode ? load_scenes(io, cfg.scenes_dir, true, ref)
                  : load_scenes(io, "world/scenes", false, ref);
    if (scenes.empty()) {
      ++without_scenes;
      continue;
    }
    ImageTile tile = median_composite(scenes);
    tile.tile_id = ref;
    write_tile(io.output("panel/composites/" + ref + ".gctl"), tile);
    ++composited;
  }
  if (without_scenes > 0) {
    io.warn("no raw scenes for " + std::to_string(without_scenes) + " of " +
            std::to_string(refs.size()) +
            " cells; image-based specifications will be skipped downstream");
  }

  write_panel_csv(io.output("panel/panel.csv"), panel);
  report["n_cells"] = panel.cells.size();
  report["n_treated_cells"] = panel.n_treated_cells();
  report["n_treated_units"] = panel.n_treated_units();
  report["composited_tiles"] = composited;
  io.write_text("panel/report.json", report.dump(2) + "\n");
  return io.finish();
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

StageResult cmd_train(const RunConfig& cfg) {
  cfg.validate();
  StageIo io(cfg, "train", "train");

  PanelSlice panel = read_panel_csv(io.input("panel/panel.csv"));

  std::vector<Specification> trainable;
  for (Specification s : requested_specs(cfg))
    if (s != Specification::a_diffmeans) trainable.push_back(s);

  // Composite tiles, required only by the image-using specifications.
  const bool want_images = std::any_of(trainable.begin(), trainable.end(),
                                       spec_uses_images);
  std::map<std::string, ImageTile> tiles;
  bool imagery_complete = want_images;
  if (want_images) {
    for (const auto& c : panel.cells) {
      if (c.tile_ref.empty()) {
        imagery_complete = false;
        break;
      }
      if (tiles.count(c.tile_ref)) continue;
      auto p = io.optional_input("panel/composites/" + c.tile_ref + ".gctl");
      if (!p) {
        imagery_complete = false;
        break;
      }
      tiles.emplace(c.tile_ref, read_tile(*p));
    }
    if (!imagery_complete) {
      std::string dropped;
      std::erase_if(trainable, [&](Specification s) {
        if (!spec_uses_images(s)) return false;
        dropped += (dropped.empty() ? "" : ", ") + specification_name(s);
        return true;
      });
      tiles.clear();
      io.warn("imagery incomplete; skipping specification(s) " + dropped);
    }
  }

  ModelConfig base = cfg.model;
  if (!tiles.empty()) {
    base.image_side = tiles.begin()->second.side;
    base.image_bands = tiles.begin()->second.bands;
  }

  std::vector<int> labels;
  for (const auto& c : panel.cells) labels.push_back(c.treated);

  std::vector<std::pair<Specification, TrainResult>> results;
  std::vector<AucRow> auc_rows;
  std::vector<SalienceRow> salience_rows;
  json summary;
  for (Specification spec : trainable) {
    SpecTrainInputs inputs = make_spec_inputs(panel, spec, base);
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.train_seed(),
                          static_cast<std::uint64_t>(static_cast<int>(spec)));
    TrainResult tr =
        train_propensity(panel, tiles, inputs.design, inputs.model, tc);

    AucRow arow;
    arow.funder = panel.funder;
    arow.sector_code = panel.sector_code;
    arow.spec = spec;
    arow.auc = auc(tr.oof_probability, labels);
    arow.n_out_of_sample = panel.cells.size();
    auc_rows.push_back(arow);

    for (std::size_t j = 0; j < tr.salience_names.size(); ++j) {
      salience_rows.push_back(
          {spec, tr.salience_names[j], tr.salience_values[j]});
    }
    for (const auto& tf : tr.fold_models) {
      tf.model->save(io.output("train/checkpoints/" +
                               specification_name(spec) + "_fold" +
                               std::to_string(tf.fold_index) + ".gctn"));
    }

    json spec_summary;
    spec_summary["folds"] = tr.fold_models.size();
    spec_summary["design_columns"] = inputs.design.names.size();
    spec_summary["oof_auc"] = arow.auc;
    json losses = json::array();
    for (const auto& tf : tr.fold_models) losses.push_back(tf.epoch_losses);
    spec_summary["epoch_losses"] = std::move(losses);
    summary[specification_name(spec)] = std::move(spec_summary);

    results.emplace_back(spec, std::move(tr));
  }

  std::vector<std::pair<Specification, const TrainResult*>> refs;
  for (const auto& [spec, tr] : results) refs.emplace_back(spec, &tr);
  write_oof_csv(io.output("train/oof.csv"), panel, refs);
  write_auc_csv(io.output("train/auc.csv"), auc_rows);
  write_salience_csv(io.output("train/salience.csv"), salience_rows);
  io.write_text("train/summary.json", summary.dump(2) + "\n");
  if (results.empty()) {
    io.warn("no trainable specification requested or feasible");
  }
  return io.finish();
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

StageResult cmd_estimate(const RunConfig& cfg) {
  cfg.validate();
  StageIo io(cfg, "estimate", "estimate");

  PanelSlice panel = read_panel_csv(io.input("panel/panel.csv"));
  panel.clip_lo = cfg.train.clip_lo;
  panel.clip_hi = cfg.train.clip_hi;

  std::map<Specification, std::vector<double>> oof;
  if (auto oof_path = io.optional_input("train/oof.csv")) {
    oof = read_oof_csv(*oof_path, panel);
  } else {
    io.warn(
        "no trained propensities found; only the unadjusted specification "
        "will run");
  }

  std::vector<std::pair<Specification, std::vector<double>>> by_spec;
  for (Specification spec : requested_specs(cfg)) {
    if (spec == Specification::a_diffmeans) {
      by_spec.emplace_back(spec, std::vector<double>{});
    } else if (auto it = oof.find(spec); it != oof.end()) {
      by_spec.emplace_back(spec, it->second);
    } else {
      io.warn("specification " + specification_name(spec) +
              " skipped: no out-of-fold propensities");
    }
  }

  EstimateOptions opts;
  opts.cluster_adm2 = cfg.cluster_adm2;
  opts.raw_ht = cfg.raw_ht;
  SpecificationRun run = run_specifications(panel, by_spec, opts);
  for (const auto& s : run.skipped) {
    io.warn("specification " + s + " skipped by the estimator");
  }
  write_estimates_csv(io.output("estimate/estimates.csv"), run.estimates);
  return io.finish();
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

StageResult cmd_analyze(const RunConfig& cfg) {
  cfg.validate();
  StageIo io(cfg, "analyze", "analyze");

  std::vector<AteEstimate> estimates =
      read_estimates_csv(io.input("estimate/estimates.csv"));
  json summary;

  if (estimates.size() >= 2) {
    try {
      MetaRegressionResult meta = meta_regress_ate(estimates);
      io.write_text("analyze/meta_regression.txt",
                    format_meta_regression(meta));
      json meta_json;
      meta_json["n"] = meta.additive.n;
      meta_json["additive_r2"] = meta.additive.r2;
      meta_json["additive_adj_r2"] = meta.additive.adj_r2;
      json coefs = json::object();
      for (const auto& c : meta.additive.coefficients)
        coefs[c.name] = {{"estimate", c.estimate}, {"std_error", c.std_error}};
      meta_json["additive_coefficients"] = std::move(coefs);
      meta_json["dropped"] = meta.additive.dropped;
      summary["meta_regression"] = std::move(meta_json);
    } catch (const DataError& e) {
      // Too few specification rows to identify the structure terms.
      io.warn(std::string("meta-regression skipped: ") + e.what());
    }
  } else {
    io.warn("meta-regression needs at least two specifications; skipped");
  }

  // Two-way fixed-effects robustness check on the assembled panel.
  PanelSlice panel = read_panel_csv(io.input("panel/panel.csv"));
  std::vector<TwfePanelRow> rows;
  std::set<int> periods_present;
  std::map<std::string, std::set<int>> statuses;
  for (const auto& c : panel.cells) {
    if (!c.outcome_lead) continue;
    rows.push_back({c.unit_id, c.period_index, *c.outcome_lead, c.treated,
                    c.adm2_id});
    periods_present.insert(c.period_index);
    statuses[c.unit_id].insert(c.treated);
  }
  const std::size_t switchers =
      static_cast<std::size_t>(std::count_if(
          statuses.begin(), statuses.end(),
          [](const auto& kv) { return kv.second.size() > 1; }));
  if (periods_present.size() < 2) {
    io.warn("two-way fixed-effects check needs at least two periods; skipped");
  } else if (switchers == 0) {
    io.warn("two-way fixed-effects check needs treatment switchers; skipped");
  } else {
    TwfeResult r = twfe(rows);
    CsvTable t;
    t.header = {"beta", "clustered_se", "ci_low", "ci_high", "n_obs",
                "n_units", "n_periods", "n_switchers", "cluster_count"};
    t.rows.push_back({format_double(r.beta), format_double(r.clustered_se),
                      format_double(r.ci_low), format_double(r.ci_high),
                      std::to_string(r.n_obs), std::to_string(r.n_units),
                      std::to_string(r.n_periods),
                      std::to_string(r.n_switchers),
                      std::to_string(r.cluster_count)});
    write_csv(io.output("analyze/twfe.csv"), t);
    summary["twfe"] = {{"beta", r.beta},
                       {"clustered_se", r.clustered_se},
                       {"ci_low", r.ci_low},
                       {"ci_high", r.ci_high},
                       {"n_switchers", r.n_switchers}};
  }

  // Salience comparison: does a covariate matter more once images are in?
  if (auto sal_path = io.optional_input("train/salience.csv")) {
    std::vector<SalienceRow> sal = read_salience_csv(*sal_path);
    std::map<Specification, std::vector<std::pair<std::string, double>>>
        by_spec;
    for (const auto& r : sal) by_spec[r.spec].push_back({r.covariate, r.value});
    auto tab_it = by_spec.find(Specification::b_x_fe);
    auto img_it = by_spec.find(Specification::c2_m_x_fe);
    if (tab_it != by_spec.end() && img_it != by_spec.end()) {
      const int sector = estimates.empty() ? 0 : estimates.front().sector_code;
      auto build = [&](Specification spec,
                       const std::vector<std::pair<std::string, double>>& v) {
        SalienceMatrix m;
        m.specification = spec;
        m.funder = estimates.empty() ? Funder::WorldBank
                                     : estimates.front().funder;
        m.sector_codes = {sector};
        m.entries.resize(static_cast<Eigen::Index>(v.size()), 1);
        for (std::size_t i = 0; i < v.size(); ++i) {
          m.covariate_names.push_back(v[i].first);
          m.entries(static_cast<Eigen::Index>(i), 0) = v[i].second;
        }
        return m;
      };
      SalienceMatrix with_images = build(Specification::c2_m_x_fe,
                                         img_it->second);
      SalienceMatrix tabular_only = build(Specification::b_x_fe,
                                          tab_it->second);
      Eigen::MatrixXd delta = salience_delta(with_images, tabular_only);
      CsvTable t;
      t.header = {"covariate", "abs_salience_gain_with_images"};
      for (std::size_t i = 0; i < with_images.covariate_names.size(); ++i) {
        t.rows.push_back({with_images.covariate_names[i],
                          format_double(delta(static_cast<Eigen::Index>(i),
                                              0))});
      }
      write_csv(io.output("analyze/salience_delta.csv"), t);

      // With one sector per run the comparison axis is the covariate
      // profile: align the two salience vectors and take their leading
      // (ridge-regularized) correlation.
      if (with_images.covariate_names.size() >= 3) {
        std::map<std::string, double> tab_by_name;
        for (const auto& [name, value] : tab_it->second)
          tab_by_name[name] = value;
        Eigen::MatrixXd tab_aligned(with_images.entries.rows(), 1);
        for (std::size_t i = 0; i < with_images.covariate_names.size(); ++i) {
          tab_aligned(static_cast<Eigen::Index>(i), 0) =
              tab_by_name.at(with_images.covariate_names[i]);
        }
        CcaResult cca = leading_canonical_correlation(with_images.entries,
                                                      tab_aligned);
        json cca_json;
        cca_json["value"] = cca.value;
        cca_json["lambda"] = cca.lambda;
        cca_json["sectors_used"] = cca.sectors_used;
        cca_json["basis"] =
            "salience profiles of the tabular-only and fused models over "
            "shared covariates";
        io.write_text("analyze/cca.json", cca_json.dump(2) + "\n");
        summary["cca_value"] = cca.value;
      } else {
        io.warn(
            "canonical correlation needs at least three shared covariates; "
            "skipped");
      }
    } else {
      io.warn(
          "salience delta needs both the tabular-only and the fused "
          "specification; skipped");
    }
  }

  if (auto auc_path = io.optional_input("train/auc.csv")) {
    json auc_json = json::object();
    for (const auto& r : read_auc_csv(*auc_path))
      auc_json[specification_name(r.spec)] = r.auc;
    summary["oof_auc"] = std::move(auc_json);
  }

  json est_json = json::object();
  for (const auto& e : estimates) {
    est_json[specification_name(e.specification)] = {
        {"ate", e.ate},
        {"std_error", e.std_error},
        {"ci_low", e.ci_low},
        {"ci_high", e.ci_high}};
  }
  summary["estimates"] = std::move(est_json);
  io.write_text("analyze/analysis.json", summary.dump(2) + "\n");
  return io.finish();
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

StageResult cmd_plot(const RunConfig& cfg) {
  cfg.validate();
  StageIo io(cfg, "plot", "plot");

  std::vector<AteEstimate> estimates =
      read_estimates_csv(io.input("estimate/estimates.csv"));
  if (estimates.empty()) {
    throw DataError("estimates.csv holds no rows; nothing to plot");
  }
  IntervalSeries series;
  for (const auto& e : estimates) {
    series.labels.push_back(specification_name(e.specification));
    series.values.push_back(e.ate);
    series.lo.push_back(e.ci_low);
    series.hi.push_back(e.ci_high);
  }
  io.write_text(
      "plot/ate_by_spec.svg",
      svg_interval_chart("Average treatment effect by specification", series,
                         0.0, "wealth-index points"));

  if (auto auc_path = io.optional_input("train/auc.csv")) {
    std::vector<AucRow> rows = read_auc_csv(*auc_path);
    if (!rows.empty()) {
      std::vector<std::string> labels;
      std::vector<double> values;
      for (const auto& r : rows) {
        labels.push_back(specification_name(r.spec));
        values.push_back(r.auc);
      }
      io.write_text("plot/auc_by_spec.svg",
                    svg_bar_chart("Out-of-fold assignment AUC", labels, values,
                                  0.0, 1.0, "AUC"));
    }
  } else {
    io.warn("no AUC table found; skipping the AUC chart");
  }
  return io.finish();
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

StageResult cmd_report(const RunConfig& cfg) {
  cfg.validate();
  StageIo io(cfg, "report", "report");

  std::string html;
  html += "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n";
  html += "<title>Estimation run report</title>\n<style>\n";
  html +=
      "body{font-family:sans-serif;margin:2em auto;max-width:60em;"
      "color:#1a1a1a}\n"
      "table{border-collapse:collapse;margin:1em 0}\n"
      "th,td{border:1px solid #999;padding:4px 10px;text-align:right}\n"
      "th{background:#eee}\ntd:first-child,th:first-child{text-align:left}\n"
      "pre{background:#f6f6f6;padding:1em;overflow-x:auto}\n"
      "h2{border-bottom:1px solid #ccc;padding-bottom:4px}\n";
  html += "</style>\n</head>\n<body>\n<h1>Estimation run report</h1>\n";

  html += "<h2>Estimates</h2>\n";
  html += html_table(read_csv(io.input("estimate/estimates.csv")));

  if (auto p = io.optional_input("train/auc.csv")) {
    html += "<h2>Out-of-fold discrimination</h2>\n";
    html += html_table(read_csv(*p));
  }
  if (auto p = io.optional_input("analyze/twfe.csv")) {
    html += "<h2>Two-way fixed-effects robustness</h2>\n";
    html += html_table(read_csv(*p));
  }
  if (auto p = io.optional_input("analyze/salience_delta.csv")) {
    html += "<h2>Salience shift from adding imagery</h2>\n";
    html += html_table(read_csv(*p));
  }
  if (auto p = io.optional_input("analyze/meta_regression.txt")) {
    html += "<h2>Meta-regression</h2>\n<pre>" +
            html_escape(slurp_file(*p)) + "</pre>\n";
  }
  for (const char* chart : {"plot/ate_by_spec.svg", "plot/auc_by_spec.svg"}) {
    if (auto p = io.optional_input(chart)) {
      html += "<div>\n" + slurp_file(*p) + "</div>\n";
    }
  }
  html += "<h2>Effective configuration</h2>\n<pre>" +
          html_escape(cfg.to_toml()) + "</pre>\n";
  html += "</body>\n</html>\n";

  io.write_text("report/report.html", html);
  return io.finish();
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {
      "simulate", "build-panel", "train", "estimate",
      "analyze",  "plot",        "report"};
  return names;
}

StageResult run_stage(const std::string& name, const RunConfig& cfg) {
  if (name == "simulate") return cmd_simulate(cfg);
  if (name == "build-panel") return cmd_build_panel(cfg);
  if (name == "train") return cmd_train(cfg);
  if (name == "estimate") return cmd_estimate(cfg);
  if (name == "analyze") return cmd_analyze(cfg);
  if (name == "plot") return cmd_plot(cfg);
  if (name == "report") return cmd_report(cfg);
  throw ValidationError("unknown stage '" + name + "'");
}

}  // namespace geocause
