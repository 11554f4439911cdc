// Command-line front end: one declarative run configuration, seven pipeline
// stages, stable exit codes (0 ok, 2 validation, 3 data, 4 numeric).

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "geocause/common.hpp"
#include "geocause/pipeline.hpp"
#include "geocause/runconfig.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

geocause::RunConfig make_config(const CliOptions& opts) {
  geocause::RunConfig cfg;
  if (!opts.config_path.empty()) {
    cfg = geocause::load_run_config(opts.config_path);
  }
  geocause::apply_overrides(cfg, opts.overrides);
  if (opts.out_dir) cfg.out_dir = *opts.out_dir;
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.workers) cfg.workers = *opts.workers;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "geocause: effects of geolocated development projects on a "
      "satellite-derived wealth index"};
  app.require_subcommand(1);

  CliOptions opts;
  app.add_option("-c,--config", opts.config_path,
                 "TOML run configuration file")
      ->check(CLI::ExistingFile);
  app.add_option("-s,--set", opts.overrides,
                 "Override one config key as section.key=value (repeatable)");
  app.add_option("-o,--out", opts.out_dir, "Output directory root");
  app.add_option("--seed", opts.seed, "Master seed for the whole run");
  app.add_option("--workers", opts.workers,
                 "Worker count for funder-by-sector jobs (this build runs "
                 "the single configured job serially)");

  for (const std::string& name : geocause::stage_names()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->fallthrough();
  }
  app.get_subcommand("simulate")->description(
      "Generate a synthetic world: units, panel, raw scenes, ground truth");
  app.get_subcommand("build-panel")
      ->description(
          "Assemble the estimation panel and composite raw scenes into "
          "per-cell tiles");
  app.get_subcommand("train")->description(
      "Cross-fit the propensity models and emit out-of-fold probabilities");
  app.get_subcommand("estimate")->description(
      "Compute weighted treatment-effect estimates per specification");
  app.get_subcommand("analyze")->description(
      "Meta-regression, fixed-effects check, salience comparison");
  app.get_subcommand("plot")->description("Render SVG charts from the tables");
  app.get_subcommand("report")->description(
      "Render a single HTML report embedding charts and tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const geocause::RunConfig cfg = make_config(opts);
    for (const CLI::App* sub : app.get_subcommands()) {
      const geocause::StageResult result =
          geocause::run_stage(sub->get_name(), cfg);
      for (const auto& w : result.warnings) {
        std::cerr << "warning: " << w << "\n";
      }
      std::cout << "[" << result.stage << "] " << result.outputs.size()
                << " output(s) -> " << result.stage_dir << "\n";
    }
    return 0;
  } catch (const geocause::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const geocause::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const geocause::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
