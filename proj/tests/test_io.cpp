#include "doctest.h"

#include "prefsamp/config.hpp"
#include "prefsamp/error.hpp"
#include "prefsamp/io.hpp"

#include <filesystem>
#include <fstream>
#include <random>

using namespace prefsamp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name) {
  const fs::path p = fs::temp_directory_path() / ("prefsamp_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path &p, const std::string &text) {
  std::ofstream(p) << text;
}

std::vector<RawSite> three_sites() { return {{1, 0.0, 0.0}, {2, 3.0, 1.0}, {3, 6.0, 2.0}}; }

double nn_cv(const PointList &pts) {
  std::vector<double> d;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double best = 1e300;
    for (std::size_t j = 0; j < pts.size(); ++j)
      if (i != j)
        best = std::min(best, (pts[i] - pts[j]).norm());
    d.push_back(best);
  }
  double m = 0, ss = 0;
  for (double x : d)
    m += x / static_cast<double>(d.size());
  for (double x : d)
    ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(d.size() - 1)) / m;
}

} // namespace

TEST_CASE("preprocess transforms") {
  SUBCASE("log ratio to the global mean") {
    const std::vector<RawObservation> obs{{1, 2000, 2.0}, {2, 2000, 4.0}, {3, 2001, 6.0}};
    const PreprocessResult r = preprocess(three_sites(), obs);
    CHECK(r.constants.global_mean == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(r.sites.y(0, 0) == doctest::Approx(std::log(0.5)).epsilon(1e-15));
    CHECK(r.sites.y(1, 0) == doctest::Approx(0.0));
    CHECK(r.sites.y(2, 1) == doctest::Approx(std::log(1.5)).epsilon(1e-15));
    CHECK(std::isnan(r.sites.y(0, 1)));
    CHECK(r.constants.coord_scale == doctest::Approx(3.0));
    CHECK(r.sites.location[2].x() == doctest::Approx(2.0));
    CHECK(r.sites.location[2].y() == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("years on the unit interval") {
    std::vector<RawObservation> obs;
    for (int y = 1966; y <= 1996; ++y)
      obs.push_back({1, y, 10.0 + y % 3});
    obs.push_back({2, 1980, 3.0});
    const PreprocessResult r = preprocess(three_sites(), obs);
    CHECK(r.years.size() == 31);
    CHECK(r.constants.t_star(1981) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r.sites.t_star(15) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r.warnings.size() == 1); // site 3 never observed
    CHECK(r.sites.num_sites() == 2);
  }
  SUBCASE("round trip") {
    std::mt19937_64 rng(3);
    std::lognormal_distribution<double> ln(3.0, 1.0);
    std::vector<RawObservation> obs;
    for (int y = 0; y < 20; ++y)
      for (long s = 1; s <= 3; ++s)
        obs.push_back({s, 1990 + y, ln(rng)});
    const PreprocessResult r = preprocess(three_sites(), obs);
    for (const auto &o : obs) {
      const Index i = o.site_id - 1;
      const double back = r.constants.back_transform(r.sites.y(i, o.year - 1990));
      CHECK(std::abs(back - o.value) <= 1e-12 * o.value);
    }
  }
  SUBCASE("capture threshold and explicit flags") {
    std::vector<RawObservation> obs{{1, 2000, 2.0, std::nullopt, 0.5}, {1, 2001, 2.0}, {2, 2000, 4.0, false, 1.0},
                                    {2, 2001, 4.0, std::nullopt, 0.8}, {3, 2001, 1.0, true, 0.1}};
    const PreprocessResult r = preprocess(three_sites(), obs);
    CHECK(r.sites.r(0, 0) == 0);
    CHECK(r.sites.r(0, 1) == 1);
    CHECK(r.sites.r(1, 0) == 0);
    CHECK(r.sites.r(1, 1) == 1);
    CHECK(r.sites.r(2, 1) == 1);
    PreprocessOptions strict;
    strict.min_capture = 0.9;
    const PreprocessResult q = preprocess(three_sites(), obs, strict);
    CHECK(q.sites.site_id == std::vector<long>{1, 3});
    CHECK(q.warnings.size() == 1);
  }
}

TEST_CASE("preprocess errors") {
  CHECK_THROWS_WITH_AS(preprocess(three_sites(), {{2, 2000, 1.0}, {3, 2001, -1.0}}),
                       doctest::Contains("observation 2 (site 3, year 2001)"), DataError);
  CHECK_THROWS_WITH_AS(preprocess({{1, 5.0, 0.0}, {2, 5.0, 1.0}}, {{1, 2000, 1.0}, {2, 2001, 1.0}}),
                       doctest::Contains("coordinate scale"), DataError);
  CHECK_THROWS_AS(preprocess(three_sites(), {{1, 2000, 1.0}, {2, 2000, 1.0}}), DataError);
  CHECK_THROWS_AS(preprocess(three_sites(), {{1, 2000, 1.0}, {9, 2001, 1.0}}), DataError);
  CHECK_THROWS_AS(preprocess(three_sites(), {{1, 2000, 1.0}, {1, 2000, 2.0}, {2, 2001, 1.0}}), DataError);
  CHECK_THROWS_AS(preprocess({{1, 0, 0}, {1, 1, 1}}, {{1, 2000, 1.0}, {1, 2001, 1.0}}), DataError);
}

TEST_CASE("pseudo sites") {
  const DomainPolygon unit = rectangle_domain(0, 0, 1, 1);
  const PointList a = generate_pseudosites(unit, 0.1);
  CHECK(nn_cv(a) < 0.5);
  for (const auto &p : a)
    CHECK(unit.contains(p));
  const double ratio = static_cast<double>(generate_pseudosites(unit, 0.05).size()) / static_cast<double>(a.size());
  CHECK(ratio >= 3.0);
  CHECK(ratio <= 5.0);
  CHECK_THROWS_AS(generate_pseudosites(unit, 0.1, {rectangle_domain(-1, -1, 2, 2)}), DataError);
  CHECK_THROWS_AS(generate_pseudosites(unit, 2.0), DataError);
  CHECK_THROWS_AS(generate_pseudosites(unit, 0.0), ParameterError);

  const PointList cut = generate_pseudosites(unit, 0.1, {rectangle_domain(0, 0, 0.5, 1)});
  CHECK(cut.size() < a.size());
  for (const auto &p : cut)
    CHECK(p.x() >= 0.5);

  // Independent of any observed sites: equal inputs give equal sets.
  CHECK(generate_pseudosites(unit, 0.1) == a);

  MeshOptions mo{0.1, 0.2, 25};
  const Mesh mesh = build_mesh(unit, mo);
  const PointList v = generate_pseudosites(mesh);
  CHECK(v.size() == mesh.domain_vertices().size());
  CHECK(nn_cv(v) < 0.5);
}

TEST_CASE("versioned csv") {
  CHECK(parse_csv("# prefsamp sites v1.3\nsite_id,easting,northing\n1,2,3\n", "s", "sites").schema == "sites");
  CHECK_THROWS_WITH_AS(parse_csv("# prefsamp sites v2.0\nsite_id,easting,northing\n", "s", "sites"),
                       doctest::Contains("major version 2"), DataError);
  CHECK_THROWS_AS(parse_csv("# prefsamp study v1.0\na\n", "s", "sites"), DataError);
  CHECK_THROWS_AS(parse_csv("a,b\n1\n", "s"), DataError);
  CHECK(parse_csv("site_id,easting,northing\n1,2,3\n", "s", "sites").schema.empty());

  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) {
    double back;
    const std::string s = format_double(v);
    back = std::stod(s);
    CHECK(back == v);
  }
  CHECK(format_double(std::nan("")) == "nan");

  const fs::path d = scratch("csv");
  const std::string f = (d / "sub" / "sites.csv").string();
  const std::vector<RawSite> sites{{7, 1.5, -2.25}, {9, 1e6, 3.0}};
  write_file_atomic(f, sites_csv(sites));
  CHECK_FALSE(fs::exists(f + ".tmp"));
  const auto back = read_sites(f);
  REQUIRE(back.size() == 2);
  CHECK(back[1].site_id == 9);
  CHECK(back[1].easting == 1e6);
  CHECK(back[0].northing == -2.25);

  write(d / "obs.csv", "site_id,year,value,selected,capture\n7,2000,1.5,1,\n7,2001,2.5,,0.5\n");
  const auto obs = read_observations((d / "obs.csv").string());
  CHECK(obs[0].selected == std::optional<bool>(true));
  CHECK_FALSE(obs[1].selected.has_value());
  CHECK(obs[1].capture == 0.5);
  write(d / "bad.csv", "site_id,year,value\n7,2000,abc\n");
  CHECK_THROWS_WITH_AS(read_observations((d / "bad.csv").string()), doctest::Contains(":2:"), DataError);
}

TEST_CASE("site table round trip") {
  SiteTable s;
  s.site_id = {4, 8};
  s.location = {Point(0.5, 1.5), Point(2.0, -1.0)};
  s.kind = {SiteKind::observed, SiteKind::pseudo};
  s.t_star = unit_times(3);
  s.r.resize(2, 3);
  s.r << 1, 0, 1, 0, 0, 0;
  s.y = Matrix::Constant(2, 3, std::nan(""));
  s.y(0, 0) = -0.25;
  s.y(0, 2) = 1.0 / 7.0;
  const fs::path d = scratch("table");
  write_file_atomic((d / "t.csv").string(), site_table_csv(s));
  const SiteTable b = read_site_table((d / "t.csv").string());
  CHECK(b.site_id == s.site_id);
  CHECK(b.location == s.location);
  CHECK(b.kind == s.kind);
  CHECK(b.t_star == s.t_star);
  CHECK(b.r == s.r);
  CHECK(b.y(0, 2) == s.y(0, 2));
  CHECK(std::isnan(b.y(1, 1)));
}

TEST_CASE("polygons and rasters") {
  const fs::path d = scratch("poly");
  write(d / "p.txt", "# study area\n0 0\n4,0\n4 4\n0 4\nhole\n1 1\n2 1\n2 2\n1 2\n");
  const DomainPolygon p = read_polygon((d / "p.txt").string());
  CHECK(p.holes.size() == 1);
  CHECK(p.area() == doctest::Approx(15.0));
  write_file_atomic((d / "q.txt").string(), polygon_text(p));
  CHECK(read_polygon((d / "q.txt").string()).area() == doctest::Approx(15.0));
  write(d / "two.txt", "boundary\n0 0\n1 0\n1 1\nboundary\n2 2\n3 2\n3 3\n");
  CHECK(read_polygons((d / "two.txt").string()).size() == 2);
  CHECK_THROWS_AS(read_polygon((d / "two.txt").string()), DataError);
  write(d / "bad.txt", "0 0\n1 x\n");
  CHECK_THROWS_WITH_AS(read_polygons((d / "bad.txt").string()), doctest::Contains(":2:"), DataError);

  write(d / "g.asc", "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 10\ncellsize 2\nNODATA_value -9999\n"
                     "1 2 -9999\n4 5 6\n");
  const RasterCounts g = read_raster((d / "g.asc").string());
  REQUIRE(g.centroids.size() == 5);
  CHECK(g.centroids[0] == Point(1, 13));
  CHECK(g.centroids[2] == Point(1, 11));
  CHECK(g.counts.sum() == 18.0);
  write(d / "r.csv", "x,y,weight\n0,0,2\n1,1,3\n");
  const RasterCounts c = read_raster((d / "r.csv").string());
  CHECK(c.counts(1) == 3.0);
  write(d / "short.asc", "ncols 2\nnrows 2\nxllcenter 0\nyllcenter 0\ncellsize 1\n1 2 3\n");
  CHECK_THROWS_AS(read_raster((d / "short.asc").string()), DataError);
}

TEST_CASE("run configuration") {
  const fs::path d = scratch("config");
  write(d / "sites.csv", "site_id,easting,northing\n1,0,0\n");

  SUBCASE("round trip is the identity") {
    RunConfig c;
    c.sites = "sites.csv";
    c.spec.implementation = 3;
    c.spec.lag = Lag::concurrent;
    c.population = PopulationMode::domain;
    c.pseudo_spacing = 0.35;
    c.constants = PreprocessConstants{12.5, 3.0e4, 1966, 1996};
    c.mesh.min_edge = 0.1;
    c.mesh.max_edge = 1.0 / 3.0;
    c.priors.d_variance = 7.25;
    c.outer.spread_tol = 1e-7;
    c.sim.design = TemporalDesign::independent_fields;
    c.sim.beta[1].sd = 0.123456789012345678;
    c.spacings = {2, 0.5, 0.125};
    c.seed = 99;
    const RunConfig a = parse_config(config_text(c), "a", d.string());
    save_config(a, (d / "a.ini").string());
    const RunConfig b = load_config((d / "a.ini").string());
    CHECK(b == a);
    CHECK(config_text(b) == config_text(a));
    CHECK(b.spec == c.spec);
    CHECK(b.mesh == c.mesh);
    CHECK(b.priors == c.priors);
    CHECK(b.outer == c.outer);
    CHECK(b.constants == c.constants);
    CHECK(b.sim.beta[1].sd == c.sim.beta[1].sd);
    CHECK(b.sim.seed == 99);
    CHECK(b.convergence.seed == 99);
    CHECK(b.resolve(b.sites) == (d / "sites.csv").lexically_normal().string());
  }
  SUBCASE("errors name the line and key") {
    auto where = [&](const std::string &text) {
      try {
        parse_config(text, "cfg", d.string());
      } catch (const ConfigError &e) {
        return e.where();
      }
      return std::string("no error");
    };
    CHECK(where("[model]\nimplementation = 2\nlag = sideways\n") == "cfg:3: [model] lag");
    CHECK(where("[mesh]\n\nmax_edge = wide\n") == "cfg:3: [mesh] max_edge");
    CHECK(where("[model]\nimplmentation = 2\n") == "cfg:2: [model] implmentation");
    CHECK(where("[model]\nimplementation = 4\n") == "cfg:2: [model] implementation");
    CHECK(where("[data]\nsites = missing.csv\n") == "cfg:2: [data] sites");
    CHECK(where("[mesh\nmax_edge = 1\n") == "cfg:1");
    CHECK(where("[constants]\nglobal_mean = 2\n") == "cfg:1: [constants]");
    CHECK(where("[data]\nsites = sites.csv\n") == "no error");
  }
}
