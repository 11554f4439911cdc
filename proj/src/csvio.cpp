#include "geocause/csvio.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "geocause/common.hpp"

namespace geocause {

namespace {

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void append_row(std::string& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_escape(fields[i]);
  }
  out += '\n';
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spill(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open file for writing: " + path);
  out << content;
  if (!out) throw DataError("write failed: " + path);
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text,
                                                const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, field_open = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        field_open = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        field_open = true;
        break;
      case '\r':
        break;
      case '\n':
        if (field_open || !field.empty() || !row.empty()) {
          row.push_back(std::move(field));
          field.clear();
          rows.push_back(std::move(row));
          row.clear();
          field_open = false;
        }
        break;
      default:
        field += c;
        break;
    }
  }
  if (quoted) throw DataError("unterminated quoted field in " + path);
  if (field_open || !field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::optional<double> parse_optional_double(const std::string& field,
                                            const std::string& context) {
  if (field.empty()) return std::nullopt;
  return parse_double_field(field, context);
}

void require_width(const std::vector<std::string>& row, std::size_t width,
                   std::size_t line, const std::string& path) {
  if (row.size() != width) {
    throw DataError(path + ": row " + std::to_string(line) + " has " +
                    std::to_string(row.size()) + " fields, expected " +
                    std::to_string(width));
  }
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw DataError("missing column: " + name);
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(const std::string& path) {
  auto rows = parse_csv(slurp(path), path);
  if (rows.empty()) throw DataError("empty CSV file: " + path);
  CsvTable table;
  table.header = std::move(rows.front());
  const std::size_t width = table.header.size();
  for (std::size_t i = 1; i < rows.size(); ++i) {
    require_width(rows[i], width, i + 1, path);
    table.rows.push_back(std::move(rows[i]));
  }
  return table;
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::string out;
  append_row(out, table.header);
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size()) {
      throw ValidationError("csv row width " + std::to_string(row.size()) +
                            " != header width " +
                            std::to_string(table.header.size()));
    }
    append_row(out, row);
  }
  spill(path, out);
}

double parse_double_field(const std::string& field,
                          const std::string& context) {
  double v = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw DataError("cannot parse number '" + field + "' (" + context + ")");
  }
  return v;
}

int parse_int_field(const std::string& field, const std::string& context) {
  int v = 0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw DataError("cannot parse integer '" + field + "' (" + context + ")");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Units
// ---------------------------------------------------------------------------

static const std::vector<std::string> kUnitHeader = {
    "unit_id", "lat",     "lon",           "country_code",
    "adm1_id", "adm2_id", "square_side_km"};

std::vector<Neighborhood> read_units_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  if (t.header != kUnitHeader) {
    throw DataError(path + ": unexpected header for a units file");
  }
  std::vector<Neighborhood> units;
  for (const auto& r : t.rows) {
    Neighborhood u;
    u.unit_id = r[0];
    u.centroid.lat = parse_double_field(r[1], path + " lat");
    u.centroid.lon = parse_double_field(r[2], path + " lon");
    u.country_code = r[3];
    u.adm1_id = r[4];
    u.adm2_id = r[5];
    u.square_side_km = parse_double_field(r[6], path + " square_side_km");
    u.validate();
    units.push_back(std::move(u));
  }
  return units;
}

void write_units_csv(const std::string& path,
                     const std::vector<Neighborhood>& units) {
  CsvTable t;
  t.header = kUnitHeader;
  for (const auto& u : units) {
    t.rows.push_back({u.unit_id, format_double(u.centroid.lat),
                      format_double(u.centroid.lon), u.country_code, u.adm1_id,
                      u.adm2_id, format_double(u.square_side_km)});
  }
  write_csv(path, t);
}

// ---------------------------------------------------------------------------
// Projects
// ---------------------------------------------------------------------------

static const std::vector<std::string> kProjectHeader = {
    "project_id", "funder",  "sector_code", "lat",
    "lon",        "precision", "adm2_id",   "commitment_year"};

std::vector<ProjectRecord> read_projects_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  if (t.header != kProjectHeader) {
    throw DataError(path + ": unexpected header for a projects file");
  }
  std::vector<ProjectRecord> projects;
  for (const auto& r : t.rows) {
    ProjectRecord p;
    p.project_id = r[0];
    p.funder = parse_funder(r[1]);
    p.sector_code = parse_int_field(r[2], path + " sector_code");
    p.location.lat = parse_double_field(r[3], path + " lat");
    p.location.lon = parse_double_field(r[4], path + " lon");
    p.precision = parse_int_field(r[5], path + " precision");
    p.adm2_id = r[6];
    p.commitment_year = parse_int_field(r[7], path + " commitment_year");
    p.validate();
    projects.push_back(std::move(p));
  }
  return projects;
}

void write_projects_csv(const std::string& path,
                        const std::vector<ProjectRecord>& projects) {
  CsvTable t;
  t.header = kProjectHeader;
  for (const auto& p : projects) {
    t.rows.push_back({p.project_id, funder_name(p.funder),
                      std::to_string(p.sector_code),
                      format_double(p.location.lat),
                      format_double(p.location.lon),
                      std::to_string(p.precision), p.adm2_id,
                      std::to_string(p.commitment_year)});
  }
  write_csv(path, t);
}

// ---------------------------------------------------------------------------
// Outcomes and covariates, keyed by the period's first year
// ---------------------------------------------------------------------------

namespace {

int period_index_for_year(const std::vector<Period>& periods, int first_year,
                          const std::string& path) {
  for (const auto& p : periods)
    if (p.first_year == first_year) return p.index;
  throw DataError(path + ": year " + std::to_string(first_year) +
                  " does not start any configured period");
}

}  // namespace

std::map<std::pair<std::string, int>, double> read_outcomes_csv(
    const std::string& path, const std::vector<Period>& periods) {
  CsvTable t = read_csv(path);
  const std::size_t id_col = t.column("unit_id");
  const std::size_t year_col = t.column("first_year");
  const std::size_t y_col = t.column("wealth_index");
  std::map<std::pair<std::string, int>, double> out;
  for (const auto& r : t.rows) {
    const int year = parse_int_field(r[year_col], path + " first_year");
    const int idx = period_index_for_year(periods, year, path);
    const double y = parse_double_field(r[y_col], path + " wealth_index");
    if (y < 0.0 || y > 100.0) {
      throw DataError(path + ": wealth index " + format_double(y) +
                      " outside [0, 100] for unit " + r[id_col]);
    }
    out[{r[id_col], idx}] = y;
  }
  return out;
}

CovariateTable read_covariates_csv(const std::string& path,
                                   const std::vector<Period>& periods) {
  CsvTable t = read_csv(path);
  const std::size_t id_col = t.column("unit_id");
  const std::size_t year_col = t.column("first_year");
  CovariateTable table;
  std::vector<std::size_t> value_cols;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (c == id_col || c == year_col) continue;
    table.names.push_back(t.header[c]);
    value_cols.push_back(c);
  }
  for (const auto& r : t.rows) {
    const int year = parse_int_field(r[year_col], path + " first_year");
    const int idx = period_index_for_year(periods, year, path);
    std::vector<double> values;
    values.reserve(value_cols.size());
    for (std::size_t c : value_cols)
      values.push_back(parse_double_field(r[c], path + " " + t.header[c]));
    table.values[r[id_col]][idx] = std::move(values);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Panel
// ---------------------------------------------------------------------------

static const std::vector<std::string> kPanelFixedHeader = {
    "funder",       "sector_code", "unit_id", "period_index",
    "period_first_year", "treated", "outcome_lead", "adm2_id",
    "adm1_id",      "country_code", "tile_ref"};

void write_panel_csv(const std::string& path, const PanelSlice& panel) {
  CsvTable t;
  t.header = kPanelFixedHeader;
  for (const auto& name : panel.covariate_names) t.header.push_back(name);
  for (const auto& c : panel.cells) {
    if (c.covariates.size() != panel.covariate_names.size()) {
      throw ValidationError("panel cell " + c.unit_id +
                            ": covariate width mismatch");
    }
    int first_year = 0;
    for (const auto& p : panel.periods)
      if (p.index == c.period_index) first_year = p.first_year;
    std::vector<std::string> row = {
        funder_name(panel.funder),
        std::to_string(panel.sector_code),
        c.unit_id,
        std::to_string(c.period_index),
        std::to_string(first_year),
        std::to_string(c.treated),
        c.outcome_lead ? format_double(*c.outcome_lead) : std::string{},
        c.adm2_id,
        c.adm1_id,
        c.country_code,
        c.tile_ref};
    for (double v : c.covariates) row.push_back(format_double(v));
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

PanelSlice read_panel_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  if (t.header.size() < kPanelFixedHeader.size() ||
      !std::equal(kPanelFixedHeader.begin(), kPanelFixedHeader.end(),
                  t.header.begin())) {
    throw DataError(path + ": unexpected header for a panel file");
  }
  PanelSlice panel;
  for (std::size_t c = kPanelFixedHeader.size(); c < t.header.size(); ++c)
    panel.covariate_names.push_back(t.header[c]);

  std::map<int, int> first_year_of_index;
  bool first_row = true;
  for (const auto& r : t.rows) {
    if (first_row) {
      panel.funder = parse_funder(r[0]);
      panel.sector_code = parse_int_field(r[1], path + " sector_code");
      first_row = false;
    } else if (r[0] != funder_name(panel.funder) ||
               parse_int_field(r[1], path + " sector_code") !=
                   panel.sector_code) {
      throw DataError(path + ": mixed funder/sector rows in one panel file");
    }
    PanelCell cell;
    cell.unit_id = r[2];
    cell.period_index = parse_int_field(r[3], path + " period_index");
    first_year_of_index[cell.period_index] =
        parse_int_field(r[4], path + " period_first_year");
    cell.treated = parse_int_field(r[5], path + " treated");
    if (cell.treated != 0 && cell.treated != 1) {
      throw DataError(path + ": treated must be 0/1 for unit " + cell.unit_id);
    }
    cell.outcome_lead =
        parse_optional_double(r[6], path + " outcome_lead " + cell.unit_id);
    cell.adm2_id = r[7];
    cell.adm1_id = r[8];
    cell.country_code = r[9];
    cell.tile_ref = r[10];
    for (std::size_t c = kPanelFixedHeader.size(); c < t.header.size(); ++c)
      cell.covariates.push_back(
          parse_double_field(r[c], path + " " + t.header[c]));
    panel.cells.push_back(std::move(cell));
  }
  for (const auto& [idx, first_year] : first_year_of_index) {
    Period p;
    p.index = idx;
    p.first_year = first_year;
    p.last_year = first_year + 2;
    panel.periods.push_back(p);
  }
  return panel;
}

// ---------------------------------------------------------------------------
// Out-of-fold probabilities
// ---------------------------------------------------------------------------

void write_oof_csv(
    const std::string& path, const PanelSlice& panel,
    const std::vector<std::pair<Specification, const TrainResult*>>& results) {
  CsvTable t;
  t.header = {"unit_id", "period_index", "specification", "probability",
              "fold"};
  for (const auto& [spec, tr] : results) {
    if (tr->oof_probability.size() != panel.cells.size()) {
      throw ValidationError("oof rows != panel cells for specification " +
                            specification_name(spec));
    }
    for (std::size_t i = 0; i < panel.cells.size(); ++i) {
      t.rows.push_back({panel.cells[i].unit_id,
                        std::to_string(panel.cells[i].period_index),
                        specification_name(spec),
                        format_double(tr->oof_probability[i]),
                        std::to_string(tr->oof_fold[i])});
    }
  }
  write_csv(path, t);
}

std::map<Specification, std::vector<double>> read_oof_csv(
    const std::string& path, const PanelSlice& panel) {
  CsvTable t = read_csv(path);
  const std::size_t id_col = t.column("unit_id");
  const std::size_t period_col = t.column("period_index");
  const std::size_t spec_col = t.column("specification");
  const std::size_t prob_col = t.column("probability");

  std::map<std::pair<std::string, int>, std::size_t> cell_index;
  for (std::size_t i = 0; i < panel.cells.size(); ++i)
    cell_index[{panel.cells[i].unit_id, panel.cells[i].period_index}] = i;

  std::map<Specification, std::vector<double>> out;
  std::map<Specification, std::size_t> filled;
  for (const auto& r : t.rows) {
    const Specification spec = parse_specification(r[spec_col]);
    auto key = std::make_pair(
        r[id_col], parse_int_field(r[period_col], path + " period_index"));
    auto it = cell_index.find(key);
    if (it == cell_index.end()) {
      throw DataError(path + ": row for unknown panel cell " + key.first +
                      " period " + std::to_string(key.second));
    }
    auto& v = out[spec];
    if (v.empty()) v.assign(panel.cells.size(), -1.0);
    v[it->second] = parse_double_field(r[prob_col], path + " probability");
    ++filled[spec];
  }
  for (const auto& [spec, v] : out) {
    if (filled[spec] != panel.cells.size() ||
        std::any_of(v.begin(), v.end(), [](double p) { return p < 0.0; })) {
      throw DataError(path + ": specification " + specification_name(spec) +
                      " does not cover every panel cell exactly once");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Estimates
// ---------------------------------------------------------------------------

void write_estimates_csv(const std::string& path,
                         const std::vector<AteEstimate>& estimates) {
  CsvTable t;
  t.header = {"funder",  "sector_code", "specification", "ate",
              "std_error", "ci_low",    "ci_high",       "n_treated",
              "n_control", "clip_lo",   "clip_hi",       "variance_method"};
  for (const auto& e : estimates) {
    t.rows.push_back({funder_name(e.funder), std::to_string(e.sector_code),
                      specification_name(e.specification), format_double(e.ate),
                      format_double(e.std_error), format_double(e.ci_low),
                      format_double(e.ci_high), std::to_string(e.n_treated),
                      std::to_string(e.n_control), format_double(e.clip_lo),
                      format_double(e.clip_hi), e.variance_method});
  }
  write_csv(path, t);
}

std::vector<AteEstimate> read_estimates_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  std::vector<AteEstimate> out;
  for (const auto& r : t.rows) {
    AteEstimate e;
    e.funder = parse_funder(r[t.column("funder")]);
    e.sector_code =
        parse_int_field(r[t.column("sector_code")], path + " sector_code");
    e.specification = parse_specification(r[t.column("specification")]);
    e.ate = parse_double_field(r[t.column("ate")], path + " ate");
    e.std_error =
        parse_double_field(r[t.column("std_error")], path + " std_error");
    e.ci_low = parse_double_field(r[t.column("ci_low")], path + " ci_low");
    e.ci_high = parse_double_field(r[t.column("ci_high")], path + " ci_high");
    e.n_treated = static_cast<std::size_t>(
        parse_int_field(r[t.column("n_treated")], path + " n_treated"));
    e.n_control = static_cast<std::size_t>(
        parse_int_field(r[t.column("n_control")], path + " n_control"));
    e.clip_lo = parse_double_field(r[t.column("clip_lo")], path + " clip_lo");
    e.clip_hi = parse_double_field(r[t.column("clip_hi")], path + " clip_hi");
    e.variance_method = r[t.column("variance_method")];
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// AUC and salience
// ---------------------------------------------------------------------------

void write_auc_csv(const std::string& path, const std::vector<AucRow>& rows) {
  CsvTable t;
  t.header = {"funder", "sector_code", "specification", "auc",
              "n_out_of_sample"};
  for (const auto& r : rows) {
    t.rows.push_back({funder_name(r.funder), std::to_string(r.sector_code),
                      specification_name(r.spec), format_double(r.auc),
                      std::to_string(r.n_out_of_sample)});
  }
  write_csv(path, t);
}

std::vector<AucRow> read_auc_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  std::vector<AucRow> out;
  for (const auto& r : t.rows) {
    AucRow row;
    row.funder = parse_funder(r[t.column("funder")]);
    row.sector_code =
        parse_int_field(r[t.column("sector_code")], path + " sector_code");
    row.spec = parse_specification(r[t.column("specification")]);
    row.auc = parse_double_field(r[t.column("auc")], path + " auc");
    row.n_out_of_sample = static_cast<std::size_t>(parse_int_field(
        r[t.column("n_out_of_sample")], path + " n_out_of_sample"));
    out.push_back(row);
  }
  return out;
}

void write_salience_csv(const std::string& path,
                        const std::vector<SalienceRow>& rows) {
  CsvTable t;
  t.header = {"specification", "covariate", "value"};
  for (const auto& r : rows) {
    t.rows.push_back(
        {specification_name(r.spec), r.covariate, format_double(r.value)});
  }
  write_csv(path, t);
}

std::vector<SalienceRow> read_salience_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  std::vector<SalienceRow> out;
  for (const auto& r : t.rows) {
    SalienceRow row;
    row.spec = parse_specification(r[t.column("specification")]);
    row.covariate = r[t.column("covariate")];
    row.value = parse_double_field(r[t.column("value")], path + " value");
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace geocause
