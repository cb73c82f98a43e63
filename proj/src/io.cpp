#include "prefsamp/io.hpp"

#include "prefsamp/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

namespace prefsamp {

double sample_sd(const std::vector<double> &v) {
  if (v.size() < 2)
    return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v)
    ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

PreprocessResult preprocess(const std::vector<RawSite> &sites, const std::vector<RawObservation> &obs,
                            const PreprocessOptions &opt) {
  PreprocessResult out;
  std::map<long, std::size_t> site_row;
  std::vector<double> eastings;
  for (std::size_t k = 0; k < sites.size(); ++k) {
    if (!site_row.emplace(sites[k].site_id, k).second)
      throw DataError("site " + std::to_string(sites[k].site_id) + " is listed twice");
    eastings.push_back(sites[k].easting);
  }
  if (std::set<double>(eastings.begin(), eastings.end()).size() < 2)
    throw DataError("coordinate scale: eastings take fewer than two distinct values");
  if (obs.empty())
    throw DataError("no observations");

  double sum = 0.0;
  std::set<int> years;
  for (std::size_t k = 0; k < obs.size(); ++k) {
    const RawObservation &o = obs[k];
    if (!(o.value > 0.0) || !std::isfinite(o.value))
      throw DataError("observation " + std::to_string(k + 1) + " (site " + std::to_string(o.site_id) + ", year " +
                      std::to_string(o.year) + "): value must be positive, got " + std::to_string(o.value));
    if (!site_row.count(o.site_id))
      throw DataError("observation " + std::to_string(k + 1) + ": unknown site " + std::to_string(o.site_id));
    sum += o.value;
    years.insert(o.year);
  }
  if (years.size() < 2)
    throw DataError("observations span fewer than two distinct years");

  PreprocessConstants &c = out.constants;
  c.global_mean = sum / static_cast<double>(obs.size());
  c.coord_scale = sample_sd(eastings);
  c.year_min = *years.begin();
  c.year_max = *years.rbegin();
  const int N = c.year_max - c.year_min + 1;
  for (int year = c.year_min; year <= c.year_max; ++year)
    out.years.push_back(year);

  const Index n = static_cast<Index>(sites.size());
  Eigen::MatrixXi r = Eigen::MatrixXi::Zero(n, N);
  Matrix y = Matrix::Constant(n, N, std::numeric_limits<double>::quiet_NaN());
  Eigen::MatrixXi seen = Eigen::MatrixXi::Zero(n, N);
  for (std::size_t k = 0; k < obs.size(); ++k) {
    const RawObservation &o = obs[k];
    const Index i = static_cast<Index>(site_row.at(o.site_id));
    const int j = o.year - c.year_min;
    if (seen(i, j)++)
      throw DataError("observation " + std::to_string(k + 1) + ": duplicate record for site " +
                      std::to_string(o.site_id) + " in " + std::to_string(o.year));
    const bool selected = o.selected ? *o.selected : o.capture >= opt.min_capture;
    if (!selected)
      continue;
    r(i, j) = 1;
    y(i, j) = c.transform(o.value);
  }

  SiteTable &t = out.sites;
  t.t_star.resize(N);
  for (int j = 0; j < N; ++j)
    t.t_star(j) = c.t_star(out.years[j]);
  std::vector<Index> keep;
  for (Index i = 0; i < n; ++i) {
    if (r.row(i).sum() == 0) {
      out.warnings.push_back("site " + std::to_string(sites[i].site_id) + " has no operational year; dropped");
      continue;
    }
    keep.push_back(i);
  }
  t.r.resize(static_cast<Index>(keep.size()), N);
  t.y.resize(static_cast<Index>(keep.size()), N);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const RawSite &s = sites[keep[k]];
    t.site_id.push_back(s.site_id);
    t.location.push_back(c.scale(s.easting, s.northing));
    t.kind.push_back(SiteKind::observed);
    t.r.row(static_cast<Index>(k)) = r.row(keep[k]);
    t.y.row(static_cast<Index>(k)) = y.row(keep[k]);
  }
  const auto w = t.validate();
  out.warnings.insert(out.warnings.end(), w.begin(), w.end());
  return out;
}

PointList hex_lattice(const DomainPolygon &domain, double spacing) {
  if (!(spacing > 0.0))
    throw ParameterError("pseudo-site spacing must be positive");
  const auto [lo, hi] = domain.bounds();
  const double dy = spacing * std::sqrt(3.0) / 2.0;
  PointList out;
  int row = 0;
  for (double y = lo.y() + dy / 2; y <= hi.y(); y += dy, ++row) {
    const double shift = (row % 2) ? spacing / 2 : 0.0;
    for (double x = lo.x() + spacing / 4 + shift; x <= hi.x(); x += spacing) {
      const Point p(x, y);
      if (domain.contains(p))
        out.push_back(p);
    }
  }
  return out;
}

namespace {

PointList exclude(PointList points, const std::vector<DomainPolygon> &exclusions) {
  std::erase_if(points, [&](const Point &p) {
    return std::any_of(exclusions.begin(), exclusions.end(), [&](const DomainPolygon &e) { return e.contains(p); });
  });
  if (points.empty())
    throw DataError("pseudo-site population is empty (spacing too large or domain fully excluded)");
  return points;
}

} // namespace

PointList generate_pseudosites(const DomainPolygon &domain, double spacing,
                               const std::vector<DomainPolygon> &exclusions) {
  const auto [lo, hi] = domain.bounds();
  if (spacing > std::max(hi.x() - lo.x(), hi.y() - lo.y()))
    throw DataError("pseudo-site spacing " + std::to_string(spacing) + " exceeds the domain extent");
  return exclude(hex_lattice(domain, spacing), exclusions);
}

PointList generate_pseudosites(const Mesh &mesh, const std::vector<DomainPolygon> &exclusions) {
  return exclude(mesh.domain_vertices(), exclusions);
}

} // namespace prefsamp
