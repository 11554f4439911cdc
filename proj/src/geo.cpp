#include "geocause/geo.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace geocause {

namespace {

constexpr double kEarthRadiusKm = 6371.0088;
constexpr double kDegToRad = 0.017453292519943295;

void require_data(bool ok, const std::string& msg) {
  if (!ok) throw DataError(msg);
}

}  // namespace

// ---------------------------------------------------------------------------
// Geodesy
// ---------------------------------------------------------------------------

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  const double phi1 = a.lat * kDegToRad, phi2 = b.lat * kDegToRad;
  const double dphi = (b.lat - a.lat) * kDegToRad;
  const double dlam = (b.lon - a.lon) * kDegToRad;
  const double s1 = std::sin(dphi / 2.0), s2 = std::sin(dlam / 2.0);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

LocalXY azimuthal_offset_km(const GeoPoint& center, const GeoPoint& p) {
  const double d = haversine_km(center, p);
  if (d == 0.0) return LocalXY{0.0, 0.0};
  const double phi1 = center.lat * kDegToRad, phi2 = p.lat * kDegToRad;
  const double dlam = (p.lon - center.lon) * kDegToRad;
  const double y = std::sin(dlam) * std::cos(phi2);
  const double x = std::cos(phi1) * std::sin(phi2) -
                   std::sin(phi1) * std::cos(phi2) * std::cos(dlam);
  const double bearing = std::atan2(y, x);  // from north, clockwise
  return LocalXY{d * std::sin(bearing), d * std::cos(bearing)};
}

bool point_in_unit_square(const GeoPoint& center, const GeoPoint& p,
                          double side_km) {
  const LocalXY xy = azimuthal_offset_km(center, p);
  const double half = side_km / 2.0;
  return std::abs(xy.x_km) <= half && std::abs(xy.y_km) <= half;
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

std::string funder_name(Funder f) {
  return f == Funder::WorldBank ? "world_bank" : "china";
}

Funder parse_funder(const std::string& s) {
  if (s == "world_bank" || s == "WorldBank" || s == "wb") return Funder::WorldBank;
  if (s == "china" || s == "China" || s == "ch") return Funder::China;
  throw DataError("unknown funder '" + s + "' (expected world_bank or china)");
}

void Neighborhood::validate() const {
  require_data(!unit_id.empty(), "neighborhood with empty unit_id");
  require_data(centroid.lat >= -90.0 && centroid.lat <= 90.0,
               "unit " + unit_id + ": latitude " + format_double(centroid.lat) +
                   " outside [-90, 90]");
  require_data(centroid.lon >= -180.0 && centroid.lon <= 180.0,
               "unit " + unit_id + ": longitude " + format_double(centroid.lon) +
                   " outside [-180, 180]");
  require_data(square_side_km > 0.0,
               "unit " + unit_id + ": non-positive square side");
}

void ProjectRecord::validate() const {
  require_data(precision >= 1 && precision <= 3,
               "project " + project_id + ": precision " +
                   std::to_string(precision) + " not in {1,2,3}");
  if (precision == 3) {
    require_data(!adm2_id.empty(),
                 "project " + project_id +
                     ": precision-3 record lacks adm2_id (record invalid)");
  }
}

std::vector<Period> make_periods(int first_year, int last_year) {
  if (last_year < first_year || (last_year - first_year + 1) % 3 != 0) {
    throw ValidationError("study window " + std::to_string(first_year) + ".." +
                          std::to_string(last_year) +
                          " is not a whole number of 3-year groups");
  }
  std::vector<Period> periods;
  int idx = 0;
  for (int y = first_year; y <= last_year; y += 3) {
    periods.push_back(Period{y, y + 2, idx++});
  }
  return periods;
}

// ---------------------------------------------------------------------------
// Tiles
// ---------------------------------------------------------------------------

void ImageTile::validate() const {
  require_data(bands > 0 && side > 0, "tile " + tile_id + ": empty geometry");
  require_data(pixels.size() == bands * side * side,
               "tile " + tile_id + ": pixel buffer size mismatch");
  require_data(mask.size() == side * side,
               "tile " + tile_id + ": mask size mismatch");
}

ImageTile median_composite(std::span<const ImageTile> scenes) {
  if (scenes.empty()) throw DataError("median_composite: empty scene list");
  const ImageTile& first = scenes.front();
  for (const auto& s : scenes) {
    if (s.bands != first.bands || s.side != first.side) {
      throw ValidationError("median_composite: scene '" + s.tile_id +
                            "' geometry differs from '" + first.tile_id + "'");
    }
  }
  ImageTile out;
  out.tile_id = first.tile_id + "_median";
  out.bands = first.bands;
  out.side = first.side;
  out.period_index = first.period_index;
  out.pixels.assign(out.bands * out.side * out.side, kMaskedPixel);
  out.mask.assign(out.side * out.side, 0);

  std::vector<float> vals;
  vals.reserve(scenes.size());
  for (std::size_t r = 0; r < out.side; ++r) {
    for (std::size_t c = 0; c < out.side; ++c) {
      bool any_valid = false;
      for (const auto& s : scenes) any_valid = any_valid || s.valid_at(r, c);
      if (!any_valid) continue;
      out.mask[r * out.side + c] = 1;
      for (std::size_t band = 0; band < out.bands; ++band) {
        vals.clear();
        for (const auto& s : scenes)
          if (s.valid_at(r, c)) vals.push_back(s.at(band, r, c));
        std::sort(vals.begin(), vals.end());
        const std::size_t n = vals.size();
        const float med = (n % 2 == 1)
                              ? vals[n / 2]
                              : 0.5f * (vals[n / 2 - 1] + vals[n / 2]);
        out.at(band, r, c) = med;
      }
    }
  }
  return out;
}

namespace {

template <typename T>
void put_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void get_raw(std::istream& is, T& v, const std::string& path) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("tile file '" + path + "' is truncated");
}

}  // namespace

void write_tile(const std::string& path, const ImageTile& tile) {
  tile.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os.write("GCTL", 4);
  put_raw(os, kTileVersion);
  put_raw(os, static_cast<std::uint32_t>(tile.bands));
  put_raw(os, static_cast<std::uint32_t>(tile.side));
  os.write(reinterpret_cast<const char*>(tile.pixels.data()),
           static_cast<std::streamsize>(tile.pixels.size() * sizeof(float)));
  const std::size_t nbits = tile.mask.size();
  std::vector<std::uint8_t> packed((nbits + 7) / 8, 0);
  for (std::size_t i = 0; i < nbits; ++i)
    if (tile.mask[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  os.write(reinterpret_cast<const char*>(packed.data()),
           static_cast<std::streamsize>(packed.size()));
  if (!os) throw DataError("failed writing tile '" + path + "'");
}

ImageTile read_tile(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open tile '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "GCTL", 4) != 0)
    throw DataError("'" + path + "' is not a tile container (bad magic)");
  std::uint32_t version = 0, bands = 0, side = 0;
  get_raw(is, version, path);
  if (version != kTileVersion)
    throw DataError("tile '" + path + "' has unsupported version " +
                    std::to_string(version));
  get_raw(is, bands, path);
  get_raw(is, side, path);
  ImageTile tile;
  tile.bands = bands;
  tile.side = side;
  tile.pixels.resize(static_cast<std::size_t>(bands) * side * side);
  is.read(reinterpret_cast<char*>(tile.pixels.data()),
          static_cast<std::streamsize>(tile.pixels.size() * sizeof(float)));
  if (!is) throw DataError("tile file '" + path + "' is truncated");
  const std::size_t nbits = static_cast<std::size_t>(side) * side;
  std::vector<std::uint8_t> packed((nbits + 7) / 8);
  is.read(reinterpret_cast<char*>(packed.data()),
          static_cast<std::streamsize>(packed.size()));
  if (!is) throw DataError("tile file '" + path + "' is truncated");
  tile.mask.resize(nbits);
  for (std::size_t i = 0; i < nbits; ++i)
    tile.mask[i] = (packed[i / 8] >> (i % 8)) & 1u;
  // Derive the id from the file name so round-trips are stable.
  const auto slash = path.find_last_of('/');
  std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  const auto dot = base.find_last_of('.');
  tile.tile_id = dot == std::string::npos ? base : base.substr(0, dot);
  return tile;
}

// ---------------------------------------------------------------------------
// Treatment assignment
// ---------------------------------------------------------------------------

int assign_treatment(const Neighborhood& unit,
                     std::span<const ProjectRecord> projects,
                     const Period& period) {
  for (const auto& pr : projects) {
    pr.validate();
    if (!period.contains(pr.commitment_year)) continue;
    switch (pr.precision) {
      case 1:
        if (point_in_unit_square(unit.centroid, pr.location,
                                 unit.square_side_km))
          return 1;
        break;
      case 2:
        if (haversine_km(unit.centroid, pr.location) <= 25.0) return 1;
        break;
      case 3:
        if (pr.adm2_id == unit.adm2_id) return 1;
        break;
      default:
        break;  // unreachable: validate() rejects other codes
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Panel assembly
// ---------------------------------------------------------------------------

std::size_t PanelSlice::n_treated_cells() const {
  std::size_t n = 0;
  for (const auto& c : cells) n += static_cast<std::size_t>(c.treated);
  return n;
}

std::size_t PanelSlice::n_treated_units() const {
  std::set<std::string> treated;
  for (const auto& c : cells)
    if (c.treated) treated.insert(c.unit_id);
  return treated.size();
}

PanelBuildResult build_panel(
    const std::vector<Neighborhood>& units,
    const std::vector<ProjectRecord>& projects,
    const std::map<std::pair<std::string, int>, double>& outcomes,
    const CovariateTable& covariates, Funder funder, int sector_code,
    const PanelOptions& options) {
  PanelBuildResult res;
  res.n_units_in = units.size();
  res.panel.funder = funder;
  res.panel.sector_code = sector_code;
  res.panel.periods = make_periods(options.window_first_year,
                                   options.window_last_year);
  res.panel.covariate_names = covariates.names;
  res.panel.clip_lo = options.clip_lo;
  res.panel.clip_hi = options.clip_hi;

  for (const auto& u : units) u.validate();

  // Restrict to this job's projects inside the window.
  std::vector<ProjectRecord> job_projects;
  for (const auto& pr : projects) {
    pr.validate();
    if (pr.funder != funder || pr.sector_code != sector_code) continue;
    if (pr.commitment_year < options.window_first_year ||
        pr.commitment_year > options.window_last_year)
      continue;
    job_projects.push_back(pr);
  }

  // Treatment status for every unit-period.
  std::map<std::string, std::vector<int>> treated_by_unit;
  std::set<std::string> treated_units;
  std::set<std::string> treated_countries;
  for (const auto& u : units) {
    auto& row = treated_by_unit[u.unit_id];
    row.resize(res.panel.periods.size(), 0);
    for (const auto& p : res.panel.periods) {
      row[static_cast<std::size_t>(p.index)] =
          assign_treatment(u, job_projects, p);
      if (row[static_cast<std::size_t>(p.index)]) {
        treated_units.insert(u.unit_id);
        treated_countries.insert(u.country_code);
      }
    }
  }

  if (treated_units.size() < options.min_treated_units) {
    res.rejected = true;
    res.reject_reason = "min-treated";
    res.notes.push_back("funder=" + funder_name(funder) + " sector=" +
                        std::to_string(sector_code) + " has " +
                        std::to_string(treated_units.size()) +
                        " treated locations, floor is " +
                        std::to_string(options.min_treated_units));
    return res;
  }

  // Cells: all periods for units in countries this funder-sector ever touched.
  const int last_period = static_cast<int>(res.panel.periods.size()) - 1;
  for (const auto& u : units) {
    if (!treated_countries.count(u.country_code)) {
      ++res.n_units_dropped_never_treated_country;
      continue;
    }
    const auto& row = treated_by_unit[u.unit_id];
    for (const auto& p : res.panel.periods) {
      PanelCell cell;
      cell.unit_id = u.unit_id;
      cell.period_index = p.index;
      cell.treated = row[static_cast<std::size_t>(p.index)];
      cell.adm2_id = u.adm2_id;
      cell.adm1_id = u.adm1_id;
      cell.country_code = u.country_code;
      cell.tile_ref = u.unit_id + "_p" + std::to_string(p.index);
      if (p.index < last_period) {
        auto it = outcomes.find({u.unit_id, p.index + 1});
        if (it != outcomes.end()) {
          require_data(it->second >= 0.0 && it->second <= 100.0,
                       "unit " + u.unit_id + " period " +
                           std::to_string(p.index + 1) + ": wealth index " +
                           format_double(it->second) + " outside [0, 100]");
          cell.outcome_lead = it->second;
        }
      }
      if (!cell.outcome_lead) ++res.n_cells_missing_outcome;
      if (!covariates.names.empty()) {
        auto uit = covariates.values.find(u.unit_id);
        const std::vector<double>* vec = nullptr;
        if (uit != covariates.values.end()) {
          auto pit = uit->second.find(p.index);
          if (pit != uit->second.end()) vec = &pit->second;
        }
        require_data(vec != nullptr, "unit " + u.unit_id + " period " +
                                         std::to_string(p.index) +
                                         ": no covariate vector supplied");
        require_data(vec->size() == covariates.names.size(),
                     "unit " + u.unit_id + ": covariate vector length " +
                         std::to_string(vec->size()) + " != schema length " +
                         std::to_string(covariates.names.size()));
        cell.covariates = *vec;
      }
      res.panel.cells.push_back(std::move(cell));
    }
  }
  res.n_cells = res.panel.cells.size();

  // Drop covariate columns that never vary across the retained cells.
  if (!res.panel.covariate_names.empty() && !res.panel.cells.empty()) {
    const std::size_t k = res.panel.covariate_names.size();
    std::vector<bool> varies(k, false);
    const auto& ref = res.panel.cells.front().covariates;
    for (const auto& cell : res.panel.cells)
      for (std::size_t j = 0; j < k; ++j)
        if (cell.covariates[j] != ref[j]) varies[j] = true;
    if (std::find(varies.begin(), varies.end(), false) != varies.end()) {
      std::vector<std::string> kept_names;
      for (std::size_t j = 0; j < k; ++j) {
        if (varies[j]) kept_names.push_back(res.panel.covariate_names[j]);
        else res.dropped_zero_variance.push_back(res.panel.covariate_names[j]);
      }
      for (auto& cell : res.panel.cells) {
        std::vector<double> kept;
        kept.reserve(kept_names.size());
        for (std::size_t j = 0; j < k; ++j)
          if (varies[j]) kept.push_back(cell.covariates[j]);
        cell.covariates = std::move(kept);
      }
      res.panel.covariate_names = std::move(kept_names);
      for (const auto& name : res.dropped_zero_variance)
        res.notes.push_back("covariate '" + name +
                            "' has no variation across cells; dropped");
    }
  }

  res.notes.push_back("treatment assigned in the commitment period only; "
                      "no persistence into later periods");
  res.notes.push_back("precision-2 rule: unit centroid within 25 km "
                      "great-circle distance of the project point");
  return res;
}

// ---------------------------------------------------------------------------
// ADM2 adjacency
// ---------------------------------------------------------------------------

namespace {

struct BBox {
  double min_lon, min_lat, max_lon, max_lat;
};

BBox ring_bbox(const std::vector<GeoPoint>& ring) {
  BBox b{1e9, 1e9, -1e9, -1e9};
  for (const auto& p : ring) {
    b.min_lon = std::min(b.min_lon, p.lon);
    b.min_lat = std::min(b.min_lat, p.lat);
    b.max_lon = std::max(b.max_lon, p.lon);
    b.max_lat = std::max(b.max_lat, p.lat);
  }
  return b;
}

bool bbox_near(const BBox& a, const BBox& b, double tau) {
  return a.min_lon <= b.max_lon + tau && b.min_lon <= a.max_lon + tau &&
         a.min_lat <= b.max_lat + tau && b.min_lat <= a.max_lat + tau;
}

// Squared distance between point p and segment [a, b] in degree space.
double point_segment_dist2(const GeoPoint& p, const GeoPoint& a,
                           const GeoPoint& b) {
  const double vx = b.lon - a.lon, vy = b.lat - a.lat;
  const double wx = p.lon - a.lon, wy = p.lat - a.lat;
  const double vv = vx * vx + vy * vy;
  double t = vv > 0.0 ? (wx * vx + wy * vy) / vv : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = wx - t * vx, dy = wy - t * vy;
  return dx * dx + dy * dy;
}

bool segments_within(const GeoPoint& a1, const GeoPoint& a2,
                     const GeoPoint& b1, const GeoPoint& b2, double tau) {
  // Proper crossings first.
  const auto orient = [](const GeoPoint& p, const GeoPoint& q,
                         const GeoPoint& r) {
    return (q.lon - p.lon) * (r.lat - p.lat) -
           (q.lat - p.lat) * (r.lon - p.lon);
  };
  const double o1 = orient(a1, a2, b1), o2 = orient(a1, a2, b2);
  const double o3 = orient(b1, b2, a1), o4 = orient(b1, b2, a2);
  if (((o1 > 0) != (o2 > 0)) && ((o3 > 0) != (o4 > 0))) return true;
  const double t2 = tau * tau;
  return point_segment_dist2(a1, b1, b2) <= t2 ||
         point_segment_dist2(a2, b1, b2) <= t2 ||
         point_segment_dist2(b1, a1, a2) <= t2 ||
         point_segment_dist2(b2, a1, a2) <= t2;
}

bool rings_touch(const std::vector<GeoPoint>& ra,
                 const std::vector<GeoPoint>& rb, double tau) {
  for (std::size_t i = 0; i + 1 < ra.size(); ++i)
    for (std::size_t j = 0; j + 1 < rb.size(); ++j)
      if (segments_within(ra[i], ra[i + 1], rb[j], rb[j + 1], tau)) return true;
  return false;
}

}  // namespace

std::map<std::string, std::vector<std::string>> spatial_join_adjacent_adm2(
    const std::vector<Adm2Polygon>& polygons, double tau) {
  for (const auto& poly : polygons) {
    if (poly.ring.size() < 4 ||
        poly.ring.front().lat != poly.ring.back().lat ||
        poly.ring.front().lon != poly.ring.back().lon) {
      throw DataError("polygon '" + poly.adm2_id +
                      "' has an unclosed or degenerate ring");
    }
  }
  std::vector<BBox> boxes;
  boxes.reserve(polygons.size());
  for (const auto& poly : polygons) boxes.push_back(ring_bbox(poly.ring));

  std::map<std::string, std::set<std::string>> adj;
  for (const auto& poly : polygons) adj[poly.adm2_id];  // ensure every key
  for (std::size_t i = 0; i < polygons.size(); ++i) {
    for (std::size_t j = i + 1; j < polygons.size(); ++j) {
      if (polygons[i].adm2_id == polygons[j].adm2_id) continue;
      if (!bbox_near(boxes[i], boxes[j], tau)) continue;
      if (rings_touch(polygons[i].ring, polygons[j].ring, tau)) {
        adj[polygons[i].adm2_id].insert(polygons[j].adm2_id);
        adj[polygons[j].adm2_id].insert(polygons[i].adm2_id);
      }
    }
  }
  std::map<std::string, std::vector<std::string>> out;
  for (auto& [id, nbrs] : adj) out[id] = {nbrs.begin(), nbrs.end()};
  return out;
}

std::vector<Adm2Polygon> read_adm2_geojson(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open boundaries file '" + path + "'");
  nlohmann::json doc;
  try {
    is >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("boundaries file '" + path + "' is not valid JSON: " +
                    e.what());
  }
  require_data(doc.value("type", "") == "FeatureCollection",
               "boundaries file '" + path + "' is not a FeatureCollection");
  std::vector<Adm2Polygon> out;
  for (const auto& feature : doc.value("features", nlohmann::json::array())) {
    const auto& props = feature.at("properties");
    const std::string adm2 = props.value("adm2_id", "");
    const std::string country = props.value("country_code", "");
    require_data(!adm2.empty(), "feature without adm2_id in '" + path + "'");
    const auto& geom = feature.at("geometry");
    const std::string gtype = geom.value("type", "");
    const auto ring_from = [&](const nlohmann::json& coords) {
      Adm2Polygon poly;
      poly.adm2_id = adm2;
      poly.country_code = country;
      for (const auto& pt : coords) {
        poly.ring.push_back(GeoPoint{pt.at(1).get<double>(),
                                     pt.at(0).get<double>()});
      }
      return poly;
    };
    if (gtype == "Polygon") {
      out.push_back(ring_from(geom.at("coordinates").at(0)));
    } else if (gtype == "MultiPolygon") {
      for (const auto& part : geom.at("coordinates"))
        out.push_back(ring_from(part.at(0)));
    } else {
      throw DataError("feature '" + adm2 + "' has unsupported geometry type '" +
                      gtype + "'");
    }
  }
  return out;
}

}  // namespace geocause
