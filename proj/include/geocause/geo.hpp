#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "geocause/common.hpp"

namespace geocause {

// ---------------------------------------------------------------------------
// Geodesy
// ---------------------------------------------------------------------------

struct GeoPoint {
  double lat = 0.0;  // degrees, [-90, 90]
  double lon = 0.0;  // degrees, [-180, 180]
};

/// Great-circle distance in kilometres, mean Earth radius 6371.0088 km.
double haversine_km(const GeoPoint& a, const GeoPoint& b);

struct LocalXY {
  double x_km = 0.0;  // east
  double y_km = 0.0;  // north
};

/// Project `p` into an azimuthal-equidistant frame centred on `center`:
/// the returned vector preserves the great-circle distance to the centre and
/// the initial bearing, so kilometre-scale squares stay square at any latitude.
LocalXY azimuthal_offset_km(const GeoPoint& center, const GeoPoint& p);

/// True iff `p` falls inside the axis-aligned square of the given side length
/// centred on `center` (in the centre's local azimuthal-equidistant frame).
bool point_in_unit_square(const GeoPoint& center, const GeoPoint& p,
                          double side_km = 6.7);

// ---------------------------------------------------------------------------
// Domain records
// ---------------------------------------------------------------------------

enum class Funder { WorldBank, China };

std::string funder_name(Funder f);
Funder parse_funder(const std::string& s);

struct Neighborhood {
  std::string unit_id;
  GeoPoint centroid;
  std::string country_code;
  std::string adm1_id;
  std::string adm2_id;
  double square_side_km = 6.7;

  void validate() const;
};

struct ProjectRecord {
  std::string project_id;
  Funder funder = Funder::WorldBank;
  int sector_code = 0;
  GeoPoint location;
  int precision = 1;  // 1 exact point, 2 within 25 km, 3 ADM2 only
  std::string adm2_id;  // required when precision == 3
  int commitment_year = 0;

  void validate() const;
};

/// Three-year period group. Periods partition the study window; the panel key
/// used in files is the first year of the group.
struct Period {
  int first_year = 0;
  int last_year = 0;
  int index = 0;

  bool contains(int year) const { return year >= first_year && year <= last_year; }
};

/// Fixed three-year groups covering [first_year, last_year]; span must be a
/// multiple of 3. Default window 2002..2013 -> 2002-04, 05-07, 08-10, 11-13.
std::vector<Period> make_periods(int first_year = 2002, int last_year = 2013);

// ---------------------------------------------------------------------------
// Image tiles
// ---------------------------------------------------------------------------

inline constexpr float kMaskedPixel = std::numeric_limits<float>::quiet_NaN();

/// Multi-band raster with validity mask. Pixels are stored band-major
/// (band, row, col); masked positions hold a NaN sentinel so accidental use
/// in statistics is loud rather than silently wrong.
struct ImageTile {
  std::string tile_id;
  std::size_t bands = 0;
  std::size_t side = 0;
  std::vector<float> pixels;        // bands * side * side
  std::vector<std::uint8_t> mask;   // side * side, 1 = valid
  int period_index = 0;

  std::size_t pixel_count() const { return side * side; }
  float& at(std::size_t band, std::size_t r, std::size_t c) {
    return pixels[(band * side + r) * side + c];
  }
  float at(std::size_t band, std::size_t r, std::size_t c) const {
    return pixels[(band * side + r) * side + c];
  }
  bool valid_at(std::size_t r, std::size_t c) const {
    return mask[r * side + c] != 0;
  }
  void validate() const;
};

/// Per-pixel median across co-registered scenes, ignoring masked inputs.
/// Even valid counts take the mean of the two middle values; positions with
/// zero valid inputs come out masked. Throws DataError on an empty list and
/// ValidationError on geometry mismatch.
ImageTile median_composite(std::span<const ImageTile> scenes);

// Tile container driver (magic "GCTL", little-endian):
//   magic[4] | version u32 | bands u32 | side u32 |
//   float32 pixels band-major | bitpacked mask (row-major, LSB-first)
inline constexpr std::uint32_t kTileVersion = 1;
void write_tile(const std::string& path, const ImageTile& tile);
ImageTile read_tile(const std::string& path);

// ---------------------------------------------------------------------------
// Panel
// ---------------------------------------------------------------------------

/// One neighborhood-by-period observation. Covariates are raw (untransformed
/// by folds); standardization happens at training time per fold.
struct PanelCell {
  std::string unit_id;
  int period_index = 0;
  int treated = 0;
  std::optional<double> outcome_lead;  // wealth index at t+1, [0, 100]
  std::vector<double> covariates;      // aligned with PanelSlice::covariate_names
  std::string tile_ref;                // composite tile id for t-1, may be empty
  // Denormalized unit attributes (fixed effects, clustering, fold grouping):
  std::string adm2_id;
  std::string adm1_id;
  std::string country_code;
};

/// Assembled panel for one funder-by-sector job.
struct PanelSlice {
  Funder funder = Funder::WorldBank;
  int sector_code = 0;
  std::vector<Period> periods;
  std::vector<std::string> covariate_names;
  std::vector<PanelCell> cells;
  double clip_lo = 0.01, clip_hi = 0.99;  // echoed into estimates

  std::size_t n_treated_cells() const;
  std::size_t n_treated_units() const;
};

/// 1 iff any project in `projects` (already filtered to one funder-by-sector
/// and to commitment years inside `period`) touches the unit under the three
/// precision rules. Throws DataError when a precision-3 record lacks adm2_id.
int assign_treatment(const Neighborhood& unit,
                     std::span<const ProjectRecord> projects,
                     const Period& period);

struct PanelOptions {
  int window_first_year = 2002;
  int window_last_year = 2013;
  std::size_t min_treated_units = 100;
  double clip_lo = 0.01, clip_hi = 0.99;
};

struct PanelBuildResult {
  bool rejected = false;
  std::string reject_reason;  // "min-treated" when under the floor
  PanelSlice panel;
  // Run-report counters, serialized to JSON by the pipeline layer.
  std::size_t n_units_in = 0;
  std::size_t n_units_dropped_never_treated_country = 0;
  std::size_t n_cells = 0;
  std::size_t n_cells_missing_outcome = 0;
  std::vector<std::string> dropped_zero_variance;
  std::vector<std::string> notes;
};

/// Covariate table input: per unit-period raw covariate vectors, shared schema.
struct CovariateTable {
  std::vector<std::string> names;
  // key: unit_id -> period_index -> values (aligned with names)
  std::map<std::string, std::map<int, std::vector<double>>> values;
};

/// Assemble the panel for one funder-by-sector pair. `outcomes` maps
/// (unit_id, period_index) -> wealth index. Projects may contain all funders
/// and sectors; filtering happens inside. Control cells are dropped in
/// countries where this funder ran no project in this sector anywhere in the
/// window; the whole job is rejected when fewer than `min_treated_units`
/// distinct units are ever treated.
PanelBuildResult build_panel(const std::vector<Neighborhood>& units,
                             const std::vector<ProjectRecord>& projects,
                             const std::map<std::pair<std::string, int>, double>& outcomes,
                             const CovariateTable& covariates,
                             Funder funder, int sector_code,
                             const PanelOptions& options);

// ---------------------------------------------------------------------------
// Administrative boundaries
// ---------------------------------------------------------------------------

struct Adm2Polygon {
  std::string adm2_id;
  std::string country_code;
  // Outer ring, closed (first == last vertex), lon/lat degree pairs.
  std::vector<GeoPoint> ring;
};

/// Symmetric adjacency between ADM2 polygons: two districts are adjacent when
/// their boundary rings come within tolerance `tau` degrees of one another at
/// any point (shared edges and corner contact both count). Cross-country
/// adjacency is included. Throws DataError for unclosed rings.
std::map<std::string, std::vector<std::string>> spatial_join_adjacent_adm2(
    const std::vector<Adm2Polygon>& polygons, double tau = 1e-6);

/// Minimal GeoJSON reader for Polygon / MultiPolygon feature collections with
/// `adm2_id` and `country_code` properties. Only outer rings are retained.
std::vector<Adm2Polygon> read_adm2_geojson(const std::string& path);

}  // namespace geocause
