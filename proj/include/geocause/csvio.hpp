#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "geocause/estimator.hpp"
#include "geocause/geo.hpp"
#include "geocause/vit.hpp"

namespace geocause {

// ---------------------------------------------------------------------------
// Generic CSV: RFC-style quoting (fields containing comma, quote, or newline
// are wrapped in double quotes, embedded quotes doubled), CRLF tolerated on
// input, LF emitted on output. All numbers funnel through the shortest
// round-trip formatter so files are byte-stable across runs.
// ---------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a named column; DataError when absent.
  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

double parse_double_field(const std::string& field, const std::string& context);
int parse_int_field(const std::string& field, const std::string& context);

// ---------------------------------------------------------------------------
// Pipeline input readers (real-data mode).
// ---------------------------------------------------------------------------

// units.csv: unit_id,lat,lon,country_code,adm1_id,adm2_id,square_side_km
std::vector<Neighborhood> read_units_csv(const std::string& path);
void write_units_csv(const std::string& path,
                     const std::vector<Neighborhood>& units);

// projects.csv: project_id,funder,sector_code,lat,lon,precision,adm2_id,
//               commitment_year   (adm2_id empty unless precision 3)
std::vector<ProjectRecord> read_projects_csv(const std::string& path);
void write_projects_csv(const std::string& path,
                        const std::vector<ProjectRecord>& projects);

// outcomes.csv: unit_id,first_year,wealth_index — keyed by the first year of
// the unit's three-year period; unmatched years raise DataError.
std::map<std::pair<std::string, int>, double> read_outcomes_csv(
    const std::string& path, const std::vector<Period>& periods);

// covariates.csv: unit_id,first_year,<one column per covariate>
CovariateTable read_covariates_csv(const std::string& path,
                                   const std::vector<Period>& periods);

// ---------------------------------------------------------------------------
// Panel round-trip. Fixed leading columns, then one column per covariate;
// a missing outcome serialises as an empty field.
// ---------------------------------------------------------------------------

void write_panel_csv(const std::string& path, const PanelSlice& panel);
PanelSlice read_panel_csv(const std::string& path);

// ---------------------------------------------------------------------------
// Stage artifacts.
// ---------------------------------------------------------------------------

// oof.csv: unit_id,period_index,specification,probability,fold
void write_oof_csv(
    const std::string& path, const PanelSlice& panel,
    const std::vector<std::pair<Specification, const TrainResult*>>& results);

/// Probabilities per specification, aligned with `panel.cells`; rows that do
/// not match the panel raise DataError.
std::map<Specification, std::vector<double>> read_oof_csv(
    const std::string& path, const PanelSlice& panel);

void write_estimates_csv(const std::string& path,
                         const std::vector<AteEstimate>& estimates);
std::vector<AteEstimate> read_estimates_csv(const std::string& path);

struct AucRow {
  Funder funder = Funder::WorldBank;
  int sector_code = 0;
  Specification spec = Specification::b_x_fe;
  double auc = 0.0;
  std::size_t n_out_of_sample = 0;
};

void write_auc_csv(const std::string& path, const std::vector<AucRow>& rows);
std::vector<AucRow> read_auc_csv(const std::string& path);

struct SalienceRow {
  Specification spec = Specification::b_x_fe;
  std::string covariate;
  double value = 0.0;
};

void write_salience_csv(const std::string& path,
                        const std::vector<SalienceRow>& rows);
std::vector<SalienceRow> read_salience_csv(const std::string& path);

}  // namespace geocause
