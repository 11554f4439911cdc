#include "geocause/runconfig.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "geocause/common.hpp"

namespace geocause {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& origin, std::size_t line,
                      const std::string& what) {
  throw ValidationError(origin + ":" + std::to_string(line) + ": " + what);
}

template <typename T>
T parse_number(const std::string& value, const std::string& context) {
  T v{};
  const char* begin = value.data();
  const char* end = begin + value.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ValidationError("config key " + context + ": cannot parse '" +
                          value + "'");
  }
  return v;
}

double parse_dbl(const std::string& value, const std::string& context) {
  return parse_number<double>(value, context);
}

bool parse_bool(const std::string& value, const std::string& context) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ValidationError("config key " + context + ": expected true/false, got '" +
                        value + "'");
}

/// Strip surrounding quotes from a string literal; bare words pass through
/// (so overrides on the command line need no extra quoting).
std::string parse_str(const std::string& value, const std::string& context) {
  if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
    std::string out;
    for (std::size_t i = 1; i + 1 < value.size(); ++i) {
      char c = value[i];
      if (c == '\\' && i + 2 < value.size() &&
          (value[i + 1] == '"' || value[i + 1] == '\\')) {
        c = value[++i];
      }
      out += c;
    }
    return out;
  }
  if (value.find('"') != std::string::npos) {
    throw ValidationError("config key " + context +
                          ": malformed string literal " + value);
  }
  return value;
}

std::vector<std::string> parse_strlist(const std::string& value,
                                       const std::string& context) {
  const std::string v = trim(value);
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') {
    throw ValidationError("config key " + context + ": expected an array");
  }
  std::vector<std::string> out;
  std::string body = v.substr(1, v.size() - 2);
  std::string item;
  std::istringstream ss(body);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_str(item, context));
  }
  return out;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  out += '"';
  return out;
}

std::string bool_word(bool b) { return b ? "true" : "false"; }

}  // namespace

void RunConfig::apply(const std::string& section, const std::string& key,
                      const std::string& value) {
  const std::string ctx = section + "." + key;
  if (section == "run") {
    if (key == "out_dir") out_dir = parse_str(value, ctx);
    else if (key == "seed") seed = parse_number<std::uint64_t>(value, ctx);
    else if (key == "workers") workers = parse_number<std::size_t>(value, ctx);
    else if (key == "specs") specs = parse_strlist(value, ctx);
    else if (key == "funder") funder = parse_str(value, ctx);
    else if (key == "sector") sector_code = parse_number<int>(value, ctx);
    else if (key == "cluster_adm2") cluster_adm2 = parse_bool(value, ctx);
    else if (key == "raw_ht") raw_ht = parse_bool(value, ctx);
    else throw ValidationError("unknown config key " + ctx);
  } else if (section == "world") {
    if (key == "n_units") world.n_units = parse_number<std::size_t>(value, ctx);
    else if (key == "n_adm2") world.n_adm2 = parse_number<std::size_t>(value, ctx);
    else if (key == "n_periods") world.n_periods = parse_number<std::size_t>(value, ctx);
    else if (key == "tau_true") world.tau_true = parse_dbl(value, ctx);
    else if (key == "heterogeneous") world.heterogeneous = parse_bool(value, ctx);
    else if (key == "tau_slope") world.tau_slope = parse_dbl(value, ctx);
    else if (key == "gamma_visible") world.gamma_visible = parse_dbl(value, ctx);
    else if (key == "gamma_tabular") world.gamma_tabular = parse_dbl(value, ctx);
    else if (key == "gamma_invisible") world.gamma_invisible = parse_dbl(value, ctx);
    else if (key == "assign_intercept") world.assign_intercept = parse_dbl(value, ctx);
    else if (key == "outcome_base") world.outcome_base = parse_dbl(value, ctx);
    else if (key == "beta_visible") world.beta_visible = parse_dbl(value, ctx);
    else if (key == "beta_tabular") world.beta_tabular = parse_dbl(value, ctx);
    else if (key == "beta_invisible") world.beta_invisible = parse_dbl(value, ctx);
    else if (key == "noise_sd") world.noise_sd = parse_dbl(value, ctx);
    else if (key == "proxy_share") world.proxy_share = parse_dbl(value, ctx);
    else if (key == "latent_rho") world.latent_rho = parse_dbl(value, ctx);
    else if (key == "render_tiles") world.render_tiles = parse_bool(value, ctx);
    else if (key == "image_side") world.image_side = parse_number<std::size_t>(value, ctx);
    else if (key == "bands") world.bands = parse_number<std::size_t>(value, ctx);
    else throw ValidationError("unknown config key " + ctx);
  } else if (section == "model") {
    if (key == "patch_size") model.patch_size = parse_number<std::size_t>(value, ctx);
    else if (key == "embed_dim") model.embed_dim = parse_number<std::size_t>(value, ctx);
    else if (key == "num_layers") model.num_layers = parse_number<std::size_t>(value, ctx);
    else if (key == "num_heads") model.num_heads = parse_number<std::size_t>(value, ctx);
    else if (key == "dropout") model.dropout_rate = static_cast<float>(parse_dbl(value, ctx));
    else if (key == "drop_path") model.drop_path_rate = static_cast<float>(parse_dbl(value, ctx));
    else if (key == "activation") {
      const std::string a = parse_str(value, ctx);
      if (a == "gelu") model.activation = ModelConfig::Activation::Gelu;
      else if (a == "relu") model.activation = ModelConfig::Activation::Relu;
      else throw ValidationError("config key " + ctx + ": expected gelu or relu");
    }
    else throw ValidationError("unknown config key " + ctx);
  } else if (section == "train") {
    if (key == "epochs") train.epochs = parse_number<std::size_t>(value, ctx);
    else if (key == "batch_size") train.batch_size = parse_number<std::size_t>(value, ctx);
    else if (key == "folds") train.folds = parse_number<std::size_t>(value, ctx);
    else if (key == "learning_rate") train.learning_rate = static_cast<float>(parse_dbl(value, ctx));
    else if (key == "momentum") train.momentum = static_cast<float>(parse_dbl(value, ctx));
    else if (key == "weight_decay") train.weight_decay = static_cast<float>(parse_dbl(value, ctx));
    else if (key == "clip_lo") train.clip_lo = parse_dbl(value, ctx);
    else if (key == "clip_hi") train.clip_hi = parse_dbl(value, ctx);
    else if (key == "standardize_globally") train.standardize_globally = parse_bool(value, ctx);
    else if (key == "sd_floor") train.sd_floor = parse_dbl(value, ctx);
    else throw ValidationError("unknown config key " + ctx);
  } else if (section == "panel") {
    if (key == "window_first_year") panel.window_first_year = parse_number<int>(value, ctx);
    else if (key == "window_last_year") panel.window_last_year = parse_number<int>(value, ctx);
    else if (key == "min_treated_units") panel.min_treated_units = parse_number<std::size_t>(value, ctx);
    else if (key == "clip_lo") panel.clip_lo = parse_dbl(value, ctx);
    else if (key == "clip_hi") panel.clip_hi = parse_dbl(value, ctx);
    else throw ValidationError("unknown config key " + ctx);
  } else if (section == "paths") {
    if (key == "units_csv") units_csv = parse_str(value, ctx);
    else if (key == "projects_csv") projects_csv = parse_str(value, ctx);
    else if (key == "outcomes_csv") outcomes_csv = parse_str(value, ctx);
    else if (key == "covariates_csv") covariates_csv = parse_str(value, ctx);
    else if (key == "scenes_dir") scenes_dir = parse_str(value, ctx);
    else throw ValidationError("unknown config key " + ctx);
  } else {
    throw ValidationError("unknown config section [" + section + "]");
  }
}

std::string RunConfig::to_toml() const {
  std::ostringstream out;
  out << "[run]\n";
  out << "out_dir = " << quote(out_dir) << "\n";
  out << "seed = " << seed << "\n";
  out << "workers = " << workers << "\n";
  out << "specs = [";
  for (std::size_t i = 0; i < specs.size(); ++i)
    out << (i ? ", " : "") << quote(specs[i]);
  out << "]\n";
  out << "funder = " << quote(funder) << "\n";
  out << "sector = " << sector_code << "\n";
  out << "cluster_adm2 = " << bool_word(cluster_adm2) << "\n";
  out << "raw_ht = " << bool_word(raw_ht) << "\n";

  out << "\n[world]\n";
  out << "n_units = " << world.n_units << "\n";
  out << "n_adm2 = " << world.n_adm2 << "\n";
  out << "n_periods = " << world.n_periods << "\n";
  out << "tau_true = " << format_double(world.tau_true) << "\n";
  out << "heterogeneous = " << bool_word(world.heterogeneous) << "\n";
  out << "tau_slope = " << format_double(world.tau_slope) << "\n";
  out << "gamma_visible = " << format_double(world.gamma_visible) << "\n";
  out << "gamma_tabular = " << format_double(world.gamma_tabular) << "\n";
  out << "gamma_invisible = " << format_double(world.gamma_invisible) << "\n";
  if (std::isfinite(world.assign_intercept))
    out << "assign_intercept = " << format_double(world.assign_intercept)
        << "\n";
  out << "outcome_base = " << format_double(world.outcome_base) << "\n";
  out << "beta_visible = " << format_double(world.beta_visible) << "\n";
  out << "beta_tabular = " << format_double(world.beta_tabular) << "\n";
  out << "beta_invisible = " << format_double(world.beta_invisible) << "\n";
  out << "noise_sd = " << format_double(world.noise_sd) << "\n";
  out << "proxy_share = " << format_double(world.proxy_share) << "\n";
  out << "latent_rho = " << format_double(world.latent_rho) << "\n";
  out << "render_tiles = " << bool_word(world.render_tiles) << "\n";
  out << "image_side = " << world.image_side << "\n";
  out << "bands = " << world.bands << "\n";

  out << "\n[model]\n";
  out << "patch_size = " << model.patch_size << "\n";
  out << "embed_dim = " << model.embed_dim << "\n";
  out << "num_layers = " << model.num_layers << "\n";
  out << "num_heads = " << model.num_heads << "\n";
  out << "dropout = " << format_float(model.dropout_rate) << "\n";
  out << "drop_path = " << format_float(model.drop_path_rate) << "\n";
  out << "activation = "
      << (model.activation == ModelConfig::Activation::Gelu ? "\"gelu\""
                                                            : "\"relu\"")
      << "\n";

  out << "\n[train]\n";
  out << "epochs = " << train.epochs << "\n";
  out << "batch_size = " << train.batch_size << "\n";
  out << "folds = " << train.folds << "\n";
  out << "learning_rate = " << format_float(train.learning_rate) << "\n";
  out << "momentum = " << format_float(train.momentum) << "\n";
  out << "weight_decay = " << format_float(train.weight_decay) << "\n";
  out << "clip_lo = " << format_double(train.clip_lo) << "\n";
  out << "clip_hi = " << format_double(train.clip_hi) << "\n";
  out << "standardize_globally = " << bool_word(train.standardize_globally)
      << "\n";
  out << "sd_floor = " << format_double(train.sd_floor) << "\n";

  out << "\n[panel]\n";
  out << "window_first_year = " << panel.window_first_year << "\n";
  out << "window_last_year = " << panel.window_last_year << "\n";
  out << "min_treated_units = " << panel.min_treated_units << "\n";
  out << "clip_lo = " << format_double(panel.clip_lo) << "\n";
  out << "clip_hi = " << format_double(panel.clip_hi) << "\n";

  out << "\n[paths]\n";
  out << "units_csv = " << quote(units_csv) << "\n";
  out << "projects_csv = " << quote(projects_csv) << "\n";
  out << "outcomes_csv = " << quote(outcomes_csv) << "\n";
  out << "covariates_csv = " << quote(covariates_csv) << "\n";
  out << "scenes_dir = " << quote(scenes_dir) << "\n";
  return out.str();
}

void RunConfig::validate() const {
  if (out_dir.empty()) throw ValidationError("run.out_dir must not be empty");
  if (workers == 0) throw ValidationError("run.workers must be positive");
  if (specs.empty()) throw ValidationError("run.specs must not be empty");
  try {
    for (const auto& s : specs) parse_specification(s);
    parse_funder(funder);
  } catch (const DataError& e) {
    throw ValidationError(std::string("run config: ") + e.what());
  }
  if (train.clip_lo <= 0.0 || train.clip_hi >= 1.0 ||
      train.clip_lo >= train.clip_hi) {
    throw ValidationError("train.clip bounds must satisfy 0 < lo < hi < 1");
  }
}

RunConfig parse_run_config(const std::string& text,
                           const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // Strip comments outside string literals.
    bool in_str = false;
    std::string stripped;
    for (char c : line) {
      if (c == '"') in_str = !in_str;
      if (c == '#' && !in_str) break;
      stripped += c;
    }
    stripped = trim(stripped);
    if (stripped.empty()) continue;
    if (stripped.front() == '[') {
      if (stripped.back() != ']') bad(origin, lineno, "unterminated section");
      section = trim(stripped.substr(1, stripped.size() - 2));
      if (section.empty()) bad(origin, lineno, "empty section name");
      continue;
    }
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) bad(origin, lineno, "expected key = value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) bad(origin, lineno, "empty key");
    if (section.empty()) bad(origin, lineno, "key outside any [section]");
    try {
      cfg.apply(section, key, value);
    } catch (const ValidationError& e) {
      bad(origin, lineno, e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

void apply_overrides(RunConfig& cfg,
                     const std::vector<std::string>& overrides) {
  for (const auto& ov : overrides) {
    const std::size_t eq = ov.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("override '" + ov +
                            "' is not of the form section.key=value");
    }
    const std::string path = trim(ov.substr(0, eq));
    const std::string value = trim(ov.substr(eq + 1));
    const std::size_t dot = path.find('.');
    if (dot == std::string::npos) {
      throw ValidationError("override '" + ov +
                            "' is not of the form section.key=value");
    }
    cfg.apply(path.substr(0, dot), path.substr(dot + 1), value);
  }
}

}  // namespace geocause
