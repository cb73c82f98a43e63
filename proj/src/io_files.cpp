#include "prefsamp/error.hpp"
#include "prefsamp/io.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace prefsamp {

namespace {

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string &line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep))
    out.push_back(trim(cell));
  if (!line.empty() && line.back() == sep)
    out.emplace_back();
  return out;
}

bool parse_double(const std::string &s, double &v) {
  const char *b = s.data(), *e = s.data() + s.size();
  if (b != e && *b == '+')
    ++b;
  const auto r = std::from_chars(b, e, v);
  return r.ec == std::errc() && r.ptr == e;
}

// "# prefsamp <schema> v<major>.<minor>"
bool parse_version(const std::string &line, std::string &schema, int &major) {
  std::istringstream in(line);
  std::string hash, tag, version;
  if (!(in >> hash >> tag >> schema >> version) || hash != "#" || tag != "prefsamp" || version.size() < 2 ||
      version[0] != 'v')
    return false;
  const auto dot = version.find('.');
  const std::string m = version.substr(1, dot == std::string::npos ? std::string::npos : dot - 1);
  const auto r = std::from_chars(m.data(), m.data() + m.size(), major);
  return r.ec == std::errc() && r.ptr == m.data() + m.size();
}

} // namespace

std::optional<std::size_t> CsvTable::find_column(const std::string &name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end())
    return std::nullopt;
  return static_cast<std::size_t>(it - header.begin());
}

std::size_t CsvTable::column(const std::string &name) const {
  if (auto c = find_column(name))
    return *c;
  throw DataError(source + ": missing column '" + name + "'");
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  double v;
  if (!parse_double(rows[row][col], v))
    throw DataError(source + ":" + std::to_string(lines[row]) + ": column '" + header[col] + "' is not a number: '" +
                    rows[row][col] + "'");
  return v;
}

long CsvTable::integer(std::size_t row, std::size_t col) const {
  const std::string &s = rows[row][col];
  long v;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw DataError(source + ":" + std::to_string(lines[row]) + ": column '" + header[col] +
                    "' is not an integer: '" + s + "'");
  return v;
}

CsvTable parse_csv(const std::string &text, const std::string &source, const std::string &schema) {
  CsvTable t;
  t.source = source;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++n;
    const std::string s = trim(line);
    if (s.empty())
      continue;
    if (s[0] == '#') {
      std::string name;
      int major = 0;
      if (!have_header && t.schema.empty() && parse_version(s, name, major)) {
        if (major != schema_major)
          throw DataError(source + ": unsupported " + name + " schema major version " + std::to_string(major));
        if (!schema.empty() && name != schema)
          throw DataError(source + ": expected a " + schema + " file, found " + name);
        t.schema = name;
      }
      continue;
    }
    auto cells = split(s, ',');
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size())
      throw DataError(source + ":" + std::to_string(n) + ": expected " + std::to_string(t.header.size()) +
                      " fields, found " + std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
    t.lines.push_back(n);
  }
  if (!have_header)
    throw DataError(source + ": no header row");
  return t;
}

std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

CsvTable read_csv(const std::string &path, const std::string &schema) {
  return parse_csv(read_file(path), path, schema);
}

std::string version_line(const std::string &schema) {
  return "# prefsamp " + schema + " v" + std::to_string(schema_major) + "." + std::to_string(schema_minor) + "\n";
}

std::string format_double(double v) {
  if (std::isnan(v))
    return "nan";
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_file_atomic(const std::string &path, const std::string &content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path())
    fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw DataError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out)
      throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::vector<RawSite> read_sites(const std::string &path) {
  const CsvTable t = read_csv(path, "sites");
  const auto id = t.column("site_id"), e = t.column("easting"), n = t.column("northing");
  std::vector<RawSite> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    out.push_back({t.integer(r, id), t.number(r, e), t.number(r, n)});
  return out;
}

std::vector<RawObservation> read_observations(const std::string &path) {
  const CsvTable t = read_csv(path, "observations");
  const auto id = t.column("site_id"), yr = t.column("year"), v = t.column("value");
  const auto sel = t.find_column("selected"), cap = t.find_column("capture");
  std::vector<RawObservation> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    RawObservation o{t.integer(r, id), static_cast<int>(t.integer(r, yr)), t.number(r, v), std::nullopt, 1.0};
    if (sel && !t.rows[r][*sel].empty()) {
      const long s = t.integer(r, *sel);
      if (s != 0 && s != 1)
        throw DataError(path + ":" + std::to_string(t.lines[r]) + ": selected must be 0 or 1");
      o.selected = s == 1;
    }
    if (cap && !t.rows[r][*cap].empty())
      o.capture = t.number(r, *cap);
    out.push_back(o);
  }
  return out;
}

std::string sites_csv(const std::vector<RawSite> &sites) {
  std::string s = version_line("sites") + "site_id,easting,northing\n";
  for (const auto &x : sites)
    s += std::to_string(x.site_id) + "," + format_double(x.easting) + "," + format_double(x.northing) + "\n";
  return s;
}

std::string observations_csv(const std::vector<RawObservation> &obs) {
  std::string s = version_line("observations") + "site_id,year,value,selected\n";
  for (const auto &o : obs)
    s += std::to_string(o.site_id) + "," + std::to_string(o.year) + "," + format_double(o.value) + "," +
         (o.selected ? (*o.selected ? "1" : "0") : "") + "\n";
  return s;
}

std::vector<DomainPolygon> read_polygons(const std::string &path) {
  std::istringstream in(read_file(path));
  std::vector<DomainPolygon> out;
  PointList *ring = nullptr;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    std::string s = trim(line.substr(0, line.find('#')));
    if (s.empty())
      continue;
    if (s == "boundary") {
      out.emplace_back();
      ring = &out.back().boundary;
      continue;
    }
    if (s == "hole") {
      if (out.empty())
        throw DataError(path + ":" + std::to_string(n) + ": hole before any boundary");
      out.back().holes.emplace_back();
      ring = &out.back().holes.back();
      continue;
    }
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream xy(s);
    std::string a, b, extra;
    double x, y;
    if (!(xy >> a >> b) || (xy >> extra) || !parse_double(a, x) || !parse_double(b, y))
      throw DataError(path + ":" + std::to_string(n) + ": expected a coordinate pair, got '" + s + "'");
    if (!ring) {
      out.emplace_back();
      ring = &out.back().boundary;
    }
    ring->emplace_back(x, y);
  }
  if (out.empty())
    throw DataError(path + ": no polygon");
  for (auto &p : out) {
    try {
      p.validate();
    } catch (const GeometryError &e) {
      throw DataError(path + ": " + e.what());
    }
  }
  return out;
}

DomainPolygon read_polygon(const std::string &path) {
  auto v = read_polygons(path);
  if (v.size() != 1)
    throw DataError(path + ": expected one polygon, found " + std::to_string(v.size()));
  return v.front();
}

std::string polygon_text(const DomainPolygon &p) {
  std::string s = "# prefsamp polygon v1.0\nboundary\n";
  auto ring = [&](const PointList &r) {
    for (const auto &q : r)
      s += format_double(q.x()) + " " + format_double(q.y()) + "\n";
  };
  ring(p.boundary);
  for (const auto &h : p.holes) {
    s += "hole\n";
    ring(h);
  }
  return s;
}

RasterCounts read_raster(const std::string &path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string first;
  in >> first;
  std::transform(first.begin(), first.end(), first.begin(), ::tolower);
  RasterCounts out;
  if (first != "ncols") {
    const CsvTable t = parse_csv(text, path, "raster");
    const auto x = t.column("x"), y = t.column("y"), w = t.column("weight");
    out.counts.resize(static_cast<Index>(t.rows.size()));
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      out.centroids.emplace_back(t.number(r, x), t.number(r, y));
      out.counts(static_cast<Index>(r)) = t.number(r, w);
    }
    return out;
  }
  in.seekg(0);
  std::map<std::string, double> h;
  std::string key;
  const std::vector<std::string> keys{"ncols", "nrows", "xllcorner", "yllcorner", "xllcenter",
                                      "yllcenter", "cellsize", "nodata_value"};
  while (in >> key) {
    std::string lower = key;
    std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
    if (std::find(keys.begin(), keys.end(), lower) == keys.end())
      break;
    std::string v;
    in >> v;
    double d;
    if (!parse_double(v, d))
      throw DataError(path + ": bad value for " + key);
    h[lower] = d;
  }
  for (const char *k : {"ncols", "nrows", "cellsize"})
    if (!h.count(k))
      throw DataError(path + ": grid header lacks " + std::string(k));
  const int nc = static_cast<int>(h["ncols"]), nr = static_cast<int>(h["nrows"]);
  const double cs = h["cellsize"];
  double x0, y0;
  if (h.count("xllcenter") && h.count("yllcenter")) {
    x0 = h["xllcenter"];
    y0 = h["yllcenter"];
  } else if (h.count("xllcorner") && h.count("yllcorner")) {
    x0 = h["xllcorner"] + cs / 2;
    y0 = h["yllcorner"] + cs / 2;
  } else {
    throw DataError(path + ": grid header lacks the lower-left origin");
  }
  const bool has_nodata = h.count("nodata_value") > 0;
  const double nodata = has_nodata ? h["nodata_value"] : 0.0;
  std::vector<double> w;
  std::string token = key;
  for (int r = 0; r < nr; ++r)
    for (int c = 0; c < nc; ++c) {
      if (r != 0 || c != 0)
        if (!(in >> token))
          throw DataError(path + ": grid has fewer than " + std::to_string(nr * nc) + " cells");
      double v;
      if (!parse_double(token, v))
        throw DataError(path + ": bad cell value '" + token + "'");
      if (has_nodata && v == nodata)
        continue;
      out.centroids.emplace_back(x0 + c * cs, y0 + (nr - 1 - r) * cs);
      w.push_back(v);
    }
  out.counts = Eigen::Map<const Vector>(w.data(), static_cast<Index>(w.size()));
  return out;
}

std::string site_table_csv(const SiteTable &s) {
  std::string out = version_line("site_table") + "site_id,kind,x,y,year,t_star,r,response\n";
  for (Index i = 0; i < s.num_sites(); ++i)
    for (int j = 0; j < s.num_years(); ++j)
      out += std::to_string(s.site_id[i]) + "," + (s.kind[i] == SiteKind::pseudo ? "pseudo" : "observed") + "," +
             format_double(s.location[i].x()) + "," + format_double(s.location[i].y()) + "," + std::to_string(j) +
             "," + format_double(s.t_star(j)) + "," + std::to_string(s.r(i, j)) + "," + format_double(s.y(i, j)) +
             "\n";
  return out;
}

SiteTable read_site_table(const std::string &path) {
  const CsvTable t = read_csv(path, "site_table");
  const auto id = t.column("site_id"), kind = t.column("kind"), x = t.column("x"), y = t.column("y"),
             yr = t.column("year"), ts = t.column("t_star"), r = t.column("r"), val = t.column("response");
  int N = 0;
  for (std::size_t k = 0; k < t.rows.size(); ++k)
    N = std::max(N, static_cast<int>(t.integer(k, yr)) + 1);
  if (N == 0 || t.rows.size() % static_cast<std::size_t>(N) != 0)
    throw DataError(path + ": site table is not rectangular");
  const Index n = static_cast<Index>(t.rows.size() / static_cast<std::size_t>(N));
  SiteTable s;
  s.t_star.resize(N);
  s.r.resize(n, N);
  s.y.resize(n, N);
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const Index i = static_cast<Index>(k / static_cast<std::size_t>(N));
    const int j = static_cast<int>(t.integer(k, yr));
    if (j != static_cast<int>(k % static_cast<std::size_t>(N)))
      throw DataError(path + ":" + std::to_string(t.lines[k]) + ": rows out of order");
    if (j == 0) {
      s.site_id.push_back(t.integer(k, id));
      s.location.emplace_back(t.number(k, x), t.number(k, y));
      s.kind.push_back(t.rows[k][kind] == "pseudo" ? SiteKind::pseudo : SiteKind::observed);
    }
    s.t_star(j) = t.number(k, ts);
    s.r(i, j) = static_cast<int>(t.integer(k, r));
    s.y(i, j) = t.number(k, val);
  }
  return s;
}

} // namespace prefsamp
