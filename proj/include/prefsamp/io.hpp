#pragma once

#include "prefsamp/mesh.hpp"
#include "prefsamp/model.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace prefsamp {

struct RawSite {
  long site_id;
  double easting, northing;
};

struct RawObservation {
  long site_id;
  int year;
  double value;
  /// Explicit operational flag; when absent the record counts as selected
  /// if its capture fraction reaches the threshold.
  std::optional<bool> selected;
  double capture = 1.0;
};

/// Constants needed to invert the preprocessing transforms.
struct PreprocessConstants {
  double global_mean = 1.0;
  double coord_scale = 1.0;
  int year_min = 0, year_max = 1;

  double transform(double value) const { return std::log(value / global_mean); }
  double back_transform(double y) const { return std::exp(y) * global_mean; }
  double t_star(int year) const {
    return static_cast<double>(year - year_min) / static_cast<double>(year_max - year_min);
  }
  Point scale(double easting, double northing) const { return {easting / coord_scale, northing / coord_scale}; }

  bool operator==(const PreprocessConstants &) const = default;
};

struct PreprocessOptions {
  /// Minimum capture fraction for a year to count as operational.
  double min_capture = 0.75;
};

struct PreprocessResult {
  SiteTable sites;
  PreprocessConstants constants;
  std::vector<int> years; ///< calendar year of each column
  std::vector<std::string> warnings;
};

/// Log ratio to the global mean, coordinates over the sample sd of the
/// eastings, years mapped onto [0, 1]. Every calendar year between the first
/// and last observation gets a column.
PreprocessResult preprocess(const std::vector<RawSite> &sites, const std::vector<RawObservation> &obs,
                            const PreprocessOptions &opt = {});

/// Sample standard deviation (n - 1 denominator).
double sample_sd(const std::vector<double> &v);

/// Triangular (hexagonal packing) lattice with the given spacing clipped to
/// the domain; rows alternate a half-spacing offset.
PointList hex_lattice(const DomainPolygon &domain, double spacing);

/// Pseudo-site population at the requested spacing, minus points in any
/// exclusion polygon. Throws DataError when the result is empty.
PointList generate_pseudosites(const DomainPolygon &domain, double spacing,
                               const std::vector<DomainPolygon> &exclusions = {});
/// Mesh-vertex population: vertices inside the domain, minus exclusions.
PointList generate_pseudosites(const Mesh &mesh, const std::vector<DomainPolygon> &exclusions = {});

} // namespace prefsamp

namespace prefsamp {

// ---------------------------------------------------------------------------
// Files. Output CSVs start with "# prefsamp <schema> v<major>.<minor>".

inline constexpr int schema_major = 1;
inline constexpr int schema_minor = 0;

struct CsvTable {
  std::string schema; ///< empty when the file had no version line
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> lines; ///< 1-based source line of each row
  std::string source;

  /// Column index; throws DataError naming the file when absent.
  std::size_t column(const std::string &name) const;
  std::optional<std::size_t> find_column(const std::string &name) const;
  double number(std::size_t row, std::size_t col) const;
  long integer(std::size_t row, std::size_t col) const;
};

/// Reads a comma separated file with a header row. When `schema` is given
/// and the file carries a version line, the schema name must match; an
/// unknown major version is always rejected.
CsvTable read_csv(const std::string &path, const std::string &schema = {});
CsvTable parse_csv(const std::string &text, const std::string &source, const std::string &schema = {});

std::string version_line(const std::string &schema);
/// Shortest representation that reads back to the same double.
std::string format_double(double v);
/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::string &path, const std::string &content);
std::string read_file(const std::string &path);

/// `site_id,easting,northing`.
std::vector<RawSite> read_sites(const std::string &path);
/// `site_id,year,value` with optional `selected` (0/1) and `capture` columns.
std::vector<RawObservation> read_observations(const std::string &path);
std::string sites_csv(const std::vector<RawSite> &sites);
std::string observations_csv(const std::vector<RawObservation> &obs);

/// Ring vertex text: one "x y" (or "x,y") pair per line. A line "boundary"
/// starts a new polygon and "hole" a hole in the current one; a file without
/// keywords holds a single boundary. '#' starts a comment.
std::vector<DomainPolygon> read_polygons(const std::string &path);
DomainPolygon read_polygon(const std::string &path);
std::string polygon_text(const DomainPolygon &p);

/// Cell centroids and raw weights, from an ESRI ASCII grid or an
/// `x,y,weight` CSV. NODATA cells are skipped.
struct RasterCounts {
  PointList centroids;
  Vector counts;
};
RasterCounts read_raster(const std::string &path);

/// Preprocessed table in long form (`site_id,kind,x,y,year,t_star,r,response`), one row per
/// site-year, plus the scaled times as a separate schema.
std::string site_table_csv(const SiteTable &s);
SiteTable read_site_table(const std::string &path);

} // namespace prefsamp
