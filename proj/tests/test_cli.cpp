#include "doctest.h"

#include "prefsamp/cli.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace prefsamp;
namespace fs = std::filesystem;

namespace {

const fs::path toy_config = fs::path(PREFSAMP_SOURCE_DIR) / "data" / "toy" / "toy.ini";

fs::path scratch(const std::string &name) {
  const fs::path p = fs::temp_directory_path() / ("prefsamp_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string> &args) {
  std::vector<const char *> argv{"prefsamp"};
  for (const auto &a : args)
    argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int data_rows(const fs::path &p) {
  std::istringstream in(slurp(p));
  std::string line;
  int n = -1; // header
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#')
      ++n;
  return n;
}

// Small study: a handful of short replicates with tiny meshes.
const char *study_ini = R"([model]
implementation = 2

[mesh]
min_edge = 1.2
max_edge = 2.4
exterior_band = false

[optimizer]
spread_tol = 1e-3
compute_covariance = true

[run]
seed = 5
output = out

[simulation]
grid_n = 8
extent = 6
n_population = 20
n_initial = 10
years = 3
design = independent
lag = concurrent
beta0_sd = 1
beta1_sd = 0
beta2_sd = 0
sd_b1 = 0
alpha0 = -1
alpha_ret = 0
d_beta = 1

[study]
replicates = 2

[convergence]
extent = 6
replicates = 2
spacings = 2, 1
)";

} // namespace

TEST_CASE("fit on the toy data writes every artifact") {
  const fs::path out = scratch("toy");
  const Run r = run({"fit", toy_config.string(), "--output", out.string()});
  INFO(r.err);
  REQUIRE(r.code == exit_ok);
  for (const char *f : {"config.ini", "domain.txt", "site_table.csv", "fit.json", "theta.csv", "x_mode.csv",
                        "ensemble.csv", "population_mean.csv"})
    CHECK(fs::exists(out / f));
  CHECK(data_rows(out / "population_mean.csv") == 6);

  const FitBundle b = read_fit_dir(out.string());
  CHECK(b.config.constants.has_value());
  CHECK(b.years.front() == 2001);
  CHECK(b.ensemble.size() == 100);
  CHECK(b.fit.converged);
  const AssembledModel m = rebuild_model(b);
  CHECK(m.n_latent() == b.ensemble.draws.rows());

  SUBCASE("predict") {
    const Run p = run({"predict", out.string(), "--grid", "0.5"});
    INFO(p.err);
    CHECK(p.code == exit_ok);
    CHECK(data_rows(out / "prediction.csv") > 0);
    CHECK(data_rows(out / "prediction.csv") % 6 == 0);
  }
  SUBCASE("exposure renormalizes the raster") {
    std::ofstream(out / "raster.csv") << "x,y,weight\n1500,2500,10\n3000,3000,30\n2500,4500,60\n";
    const Run e = run({"exposure", out.string(), "--raster", (out / "raster.csv").string(), "--threshold", "22"});
    INFO(e.err);
    CHECK(e.code == exit_ok);
    CHECK(e.err.find("renormalized by factor 0.01") != std::string::npos);
    CHECK(data_rows(out / "exposure.csv") == 6);
    CHECK(data_rows(out / "exceedance_cells.csv") == 18);
    const Run x = run({"exposure", out.string(), "--raster", (out / "raster.csv").string(), "--threshold", "22",
                       "--b-mode", "exclude"});
    CHECK(x.code == exit_ok);
  }
}

TEST_CASE("non-convergence still writes results") {
  const fs::path out = scratch("cap");
  const std::string text = slurp(toy_config);
  const fs::path cfg = out / "toy.ini";
  std::ofstream(cfg) << text << "\n; capped\n";
  std::string capped = slurp(cfg);
  capped.replace(capped.find("spread_tol = 1e-5"), 17, "spread_tol = 1e-5\nmax_evaluations = 10");
  std::ofstream(cfg) << capped;
  for (const char *f : {"sites.csv", "observations.csv"})
    fs::copy_file(toy_config.parent_path() / f, out / f);
  const Run r = run({"fit", cfg.string(), "--output", (out / "fit").string()});
  CHECK(r.code == exit_not_converged);
  CHECK(fs::exists(out / "fit" / "ensemble.csv"));
}

TEST_CASE("study is byte-identical on rerun") {
  const fs::path d = scratch("study");
  std::ofstream(d / "study.ini") << study_ini;
  const Run a = run({"study", (d / "study.ini").string(), "-o", (d / "a").string()});
  INFO(a.err);
  REQUIRE(a.code == exit_ok);
  const Run b = run({"study", (d / "study.ini").string(), "-o", (d / "b").string()});
  REQUIRE(b.code == exit_ok);
  CHECK(data_rows(d / "a" / "study.csv") == 2);
  CHECK(slurp(d / "a" / "study.csv") == slurp(d / "b" / "study.csv"));
  CHECK(slurp(d / "a" / "study_summary.csv") == slurp(d / "b" / "study_summary.csv"));
}

TEST_CASE("simulate and convergence-check") {
  const fs::path d = scratch("sim");
  std::ofstream(d / "study.ini") << study_ini;
  const Run s = run({"simulate", (d / "study.ini").string(), "-o", (d / "sim").string()});
  INFO(s.err);
  REQUIRE(s.code == exit_ok);
  const auto sites = read_sites((d / "sim" / "sites.csv").string());
  const auto obs = read_observations((d / "sim" / "observations.csv").string());
  CHECK(sites.size() >= 10);
  CHECK(obs.size() >= 10);
  CHECK(data_rows(d / "sim" / "truth.csv") == 64 * 3);

  const Run c = run({"convergence-check", (d / "study.ini").string(), "--spacings", "2,1", "-o", (d / "c").string()});
  INFO(c.err);
  REQUIRE(c.code == exit_ok);
  CHECK(data_rows(d / "c" / "convergence.csv") == 2);
  CHECK(c.out.find("max z") != std::string::npos);
}

TEST_CASE("usage and configuration errors") {
  CHECK(run({}).code == exit_usage);
  CHECK(run({"fit", toy_config.string(), "--bogus"}).code == exit_usage);
  CHECK(run({"dance"}).code == exit_usage);
  CHECK(run({"--help"}).code == exit_ok);
  CHECK(run({"predict", "/nonexistent/dir", "--grid", "1"}).code == exit_error);

  const fs::path d = scratch("errors");
  std::ofstream(d / "bad.ini") << "[mesh]\nmax_edge = 1\nmin_angle = steep\n";
  const Run r = run({"fit", (d / "bad.ini").string()});
  CHECK(r.code == exit_config);
  CHECK(r.err.find(":3: [mesh] min_angle") != std::string::npos);
  std::ofstream(d / "syntax.ini") << "[mesh\n";
  CHECK(run({"study", (d / "syntax.ini").string()}).code == exit_config);
  CHECK(run({"study", (d / "missing.ini").string()}).code == exit_config);
}
