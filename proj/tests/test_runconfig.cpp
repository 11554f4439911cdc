#include <doctest.h>

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "geocause/runconfig.hpp"
#include "oracles.hpp"

using namespace geocause;

TEST_CASE("an empty config file yields the defaults") {
  RunConfig cfg = parse_run_config("", "mem");
  CHECK(cfg.out_dir == "out");
  CHECK(cfg.seed == 1);
  CHECK(cfg.workers == 1);
  CHECK(cfg.specs == std::vector<std::string>{"a", "b", "c1", "c2"});
  CHECK(cfg.funder == "world_bank");
  CHECK(cfg.sector_code == 10);
  CHECK_FALSE(cfg.cluster_adm2);
  CHECK(cfg.model.embed_dim == 64);
  CHECK(cfg.model.num_heads == 4);
  CHECK(cfg.train.epochs == 30);
  CHECK(cfg.train.folds == 10);
  CHECK(cfg.train.clip_lo == 0.01);
  CHECK(cfg.train.clip_hi == 0.99);
  CHECK(std::isnan(cfg.world.assign_intercept));
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("parsing covers sections, comments, strings, arrays, booleans") {
  const std::string text = R"(# pipeline settings
[run]
out_dir = "runs/smoke"   # trailing comment
seed = 42
workers = 2
specs = ["a", "c2"]
funder = "china"
sector = 210
cluster_adm2 = true

[world]
tau_true = 7.5
gamma_visible = 0.0
assign_intercept = -0.25
render_tiles = false

[model]
embed_dim = 32
num_heads = 2
activation = "relu"
dropout = 0.05

[train]
epochs = 5
learning_rate = 0.002
standardize_globally = true

[panel]
window_first_year = 2005
window_last_year = 2010

[paths]
projects_csv = "data/projects # real.csv"
)";
  RunConfig cfg = parse_run_config(text, "mem");
  CHECK(cfg.out_dir == "runs/smoke");
  CHECK(cfg.seed == 42);
  CHECK(cfg.workers == 2);
  CHECK(cfg.specs == std::vector<std::string>{"a", "c2"});
  CHECK(cfg.funder == "china");
  CHECK(cfg.sector_code == 210);
  CHECK(cfg.cluster_adm2);
  CHECK(cfg.world.tau_true == 7.5);
  CHECK(cfg.world.gamma_visible == 0.0);
  CHECK(cfg.world.assign_intercept == -0.25);
  CHECK_FALSE(cfg.world.render_tiles);
  CHECK(cfg.model.embed_dim == 32);
  CHECK(cfg.model.num_heads == 2);
  CHECK(cfg.model.activation == ModelConfig::Activation::Relu);
  CHECK(cfg.model.dropout_rate == doctest::Approx(0.05f));
  CHECK(cfg.train.epochs == 5);
  CHECK(cfg.train.learning_rate == doctest::Approx(0.002f));
  CHECK(cfg.train.standardize_globally);
  CHECK(cfg.panel.window_first_year == 2005);
  CHECK(cfg.panel.window_last_year == 2010);
  // A '#' inside a string literal is content, not a comment.
  CHECK(cfg.projects_csv == "data/projects # real.csv");
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("serialisation round trips the effective configuration") {
  RunConfig cfg;
  cfg.out_dir = "runs/say \"hi\"\\now";  // quotes and backslashes survive
  cfg.seed = 99;
  cfg.specs = {"b", "c1"};
  cfg.funder = "china";
  cfg.cluster_adm2 = true;
  cfg.world.tau_true = -3.25;
  cfg.world.assign_intercept = 0.5;
  cfg.world.n_units = 123;
  cfg.model.activation = ModelConfig::Activation::Relu;
  cfg.model.embed_dim = 48;
  cfg.train.epochs = 7;
  cfg.train.weight_decay = 0.001f;
  cfg.panel.min_treated_units = 42;
  cfg.units_csv = "in/units.csv";

  const std::string toml = cfg.to_toml();
  RunConfig back = parse_run_config(toml, "roundtrip");
  CHECK(back.out_dir == cfg.out_dir);
  CHECK(back.seed == cfg.seed);
  CHECK(back.specs == cfg.specs);
  CHECK(back.funder == cfg.funder);
  CHECK(back.cluster_adm2 == cfg.cluster_adm2);
  CHECK(back.world.tau_true == cfg.world.tau_true);
  CHECK(back.world.assign_intercept == cfg.world.assign_intercept);
  CHECK(back.world.n_units == cfg.world.n_units);
  CHECK(back.model.activation == ModelConfig::Activation::Relu);
  CHECK(back.model.embed_dim == 48);
  CHECK(back.train.epochs == 7);
  CHECK(back.train.weight_decay == doctest::Approx(0.001f));
  CHECK(back.panel.min_treated_units == 42);
  CHECK(back.units_csv == cfg.units_csv);

  // Serialising the re-parsed config reproduces the text byte for byte.
  CHECK(back.to_toml() == toml);

  SUBCASE("the auto-centering sentinel is omitted and preserved") {
    RunConfig defaults;
    const std::string t = defaults.to_toml();
    CHECK(t.find("assign_intercept") == std::string::npos);
    RunConfig reparsed = parse_run_config(t, "defaults");
    CHECK(std::isnan(reparsed.world.assign_intercept));
    CHECK(reparsed.to_toml() == t);
  }
}

TEST_CASE("malformed input is reported with its line number") {
  auto error_of = [](const std::string& text) -> std::string {
    try {
      parse_run_config(text, "cfg.toml");
    } catch (const ValidationError& e) {
      return e.what();
    }
    return {};
  };

  CHECK(error_of("seed = 1\n").find("cfg.toml:1: key outside any [section]") !=
        std::string::npos);
  CHECK(error_of("[run\nseed = 1\n").find("cfg.toml:1: unterminated") !=
        std::string::npos);
  CHECK(error_of("[]\n").find("cfg.toml:1: empty section") !=
        std::string::npos);
  CHECK(error_of("[run]\njust words\n").find("cfg.toml:2: expected key = value") !=
        std::string::npos);
  CHECK(error_of("[run]\n= 5\n").find("cfg.toml:2: empty key") !=
        std::string::npos);
  CHECK(error_of("[run]\nbogus = 1\n").find("cfg.toml:2: unknown config key run.bogus") !=
        std::string::npos);
  CHECK(error_of("[nowhere]\nx = 1\n").find("cfg.toml:2: unknown config section [nowhere]") !=
        std::string::npos);
  CHECK(error_of("[run]\nseed = soon\n").find("cfg.toml:2:") !=
        std::string::npos);
  CHECK(error_of("[run]\nseed = soon\n").find("cannot parse 'soon'") !=
        std::string::npos);
  CHECK(error_of("[run]\ncluster_adm2 = yes\n").find("expected true/false") !=
        std::string::npos);
  CHECK(error_of("[run]\nspecs = \"a\"\n").find("expected an array") !=
        std::string::npos);
  CHECK(error_of("[model]\nactivation = \"tanh\"\n").find("expected gelu or relu") !=
        std::string::npos);
}

TEST_CASE("overrides apply in order with bare-word values") {
  RunConfig cfg;
  apply_overrides(cfg, {"run.seed=9", "run.seed=10", "train.epochs=2",
                        "model.activation=relu", "run.funder=china",
                        "paths.units_csv=in/units.csv"});
  CHECK(cfg.seed == 10);  // later override wins
  CHECK(cfg.train.epochs == 2);
  CHECK(cfg.model.activation == ModelConfig::Activation::Relu);
  CHECK(cfg.funder == "china");
  CHECK(cfg.units_csv == "in/units.csv");

  SUBCASE("overrides may use spaces and quoted strings too") {
    apply_overrides(cfg, {"run.out_dir = \"my runs\""});
    CHECK(cfg.out_dir == "my runs");
  }
  SUBCASE("malformed override forms are rejected") {
    CHECK_THROWS_WITH_AS(apply_overrides(cfg, {"runseed=9"}),
                         doctest::Contains("section.key=value"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(apply_overrides(cfg, {"run.seed"}),
                         doctest::Contains("section.key=value"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(apply_overrides(cfg, {"run.bogus=1"}),
                         doctest::Contains("unknown config key"),
                         ValidationError);
  }
}

TEST_CASE("semantic validation distinguishes config errors from data errors") {
  RunConfig cfg;

  SUBCASE("empty out_dir") {
    cfg.out_dir.clear();
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("out_dir"),
                         ValidationError);
  }
  SUBCASE("zero workers") {
    cfg.workers = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
  SUBCASE("no specifications") {
    cfg.specs.clear();
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
  SUBCASE("unknown specification names surface as config errors") {
    cfg.specs = {"a", "z"};
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("run config:"),
                         ValidationError);
  }
  SUBCASE("unknown funder names surface as config errors") {
    cfg.funder = "usaid";
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("run config:"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("usaid"),
                         ValidationError);
  }
  SUBCASE("clip bounds must be an interior interval") {
    cfg.train.clip_lo = 0.0;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("clip"),
                         ValidationError);
    cfg.train.clip_lo = 0.6;
    cfg.train.clip_hi = 0.4;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
  SUBCASE("funder aliases all parse") {
    for (const char* name : {"world_bank", "WorldBank", "wb"})
      CHECK(parse_funder(name) == Funder::WorldBank);
    for (const char* name : {"china", "China", "ch"})
      CHECK(parse_funder(name) == Funder::China);
  }
}

TEST_CASE("configs load from disk") {
  const std::string dir = oracles::fresh_dir("runconfig");
  const std::string path = dir + "/run.toml";
  {
    std::ofstream out(path);
    out << "[run]\nseed = 77\n[train]\nepochs = 3\n";
  }
  RunConfig cfg = load_run_config(path);
  CHECK(cfg.seed == 77);
  CHECK(cfg.train.epochs == 3);

  CHECK_THROWS_WITH_AS(load_run_config(dir + "/absent.toml"),
                       doctest::Contains("cannot open config file"),
                       DataError);

  SUBCASE("stage seeds derive from the run seed") {
    CHECK(cfg.world_seed() == 77);
    CHECK(cfg.train_seed() == derive_seed(77, 11));
    CHECK(cfg.train_seed() != cfg.world_seed());
  }
}
