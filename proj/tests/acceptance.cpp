// Acceptance checks: one PASS/FAIL line per criterion. Pass criterion
// numbers on the command line to run a subset.

#include "prefsamp/cli.hpp"
#include "prefsamp/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>

using namespace prefsamp;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double laplace_rel_tol = 1e-6;
constexpr double laplace_seconds = 5.0;
constexpr double spde_corr_tol = 0.05;
constexpr double spde_sd_rel_tol = 0.10;
constexpr double spde_seconds = 30.0;
constexpr int study_replicates = 50;
constexpr double coverage_lo = 0.86, coverage_hi = 1.00;
constexpr double null_mc_se_factor = 2.0;
constexpr double null_minutes = 30.0;
constexpr double signal_mean_lo = 0.7, signal_mean_hi = 1.3;
constexpr double signal_minutes = 45.0;
constexpr int overdetermined_replicates = 10;
constexpr int overdetermined_years = 30;
constexpr double overdetermined_min_lifetime = 12.0;
constexpr double overdetermined_rel_diff = 0.05;
constexpr double underdetermined_max_lifetime = 3.0;
constexpr double underdetermined_fraction = 0.80;
constexpr double convergence_z = 2.0;
constexpr double convergence_minutes = 20.0;
const std::vector<double> convergence_spacings{1.0, 0.5, 0.25};
constexpr int directional_replicates = 20;
constexpr double directional_d_beta = 2.0;
constexpr double directional_fraction = 0.90;
constexpr double exposure_tol = 1e-10;
constexpr int exposure_thresholds = 100;

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char *f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double mean_of(const std::vector<double> &v) {
  double s = 0;
  for (double x : v)
    s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// Study designs.

StudyOptions study_options() {
  StudyOptions o;
  o.mesh = MeshOptions{1.0, 2.0, 25};
  o.outer.spread_tol = 1e-4;
  return o;
}

SimConfig rigid_design() {
  SimConfig c;
  c.grid_n = 20;
  c.extent = 10;
  c.n_population = 100;
  c.n_initial = 50;
  c.N = 10;
  c.design = TemporalDesign::rigid_quadratic;
  c.gamma = {0.0, -1.0, 0.5};
  c.beta = {MaternParams{4, 0.9}, MaternParams{3, 0.7}, MaternParams{3, 0}};
  c.sd_b1 = 0;
  c.sigma2_eps = 0.1;
  c.alpha0 = -2;
  c.alpha_ret = 3;
  c.alpha_rep = 0.5;
  c.repulsion_distance = 1.0;
  c.beta_star0 = MaternParams{3.5, 0.45};
  c.d_beta = 0;
  c.seed = 11;
  return c;
}

SimConfig flexible_design() {
  SimConfig c;
  c.grid_n = 20;
  c.extent = 10;
  c.n_population = 80;
  c.n_initial = 40;
  c.N = 8;
  c.design = TemporalDesign::independent_fields;
  c.lag = Lag::concurrent;
  c.beta = {MaternParams{3, 1}, MaternParams{3, 0}, MaternParams{3, 0}};
  c.sd_b1 = 0;
  c.sigma2_eps = 0.1;
  c.alpha0 = -1;
  c.alpha_ret = 0;
  c.d_beta = 1;
  c.seed = 11;
  return c;
}

SimConfig overdetermined_design() {
  SimConfig c = rigid_design();
  c.n_population = 60;
  c.n_initial = 30;
  c.N = overdetermined_years;
  c.alpha0 = -3;
  c.alpha_ret = 7;
  return c;
}

const StudyReport &flexible_study(int implementation) {
  static std::map<int, StudyReport> cache;
  auto it = cache.find(implementation);
  if (it == cache.end())
    it = cache.emplace(implementation, run_study(flexible_design(), study_replicates, implementation, study_options()))
             .first;
  return it->second;
}

std::string coverage_text(const StudyReport &r) {
  return fmt("mean d_beta %.3f, coverage %.3f (%d replicates, %d failed)", r.summary.d_beta_mean,
             r.summary.d_beta_coverage, r.summary.replicates, r.summary.failures);
}

// ---------------------------------------------------------------------------

Outcome laplace_exactness() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.1, 2.9);
  std::normal_distribution<double> z;
  SiteTable s;
  s.t_star = unit_times(4);
  s.r = Eigen::MatrixXi::Ones(8, 4);
  s.y.resize(8, 4);
  for (int i = 0; i < 8; ++i) {
    s.site_id.push_back(i + 1);
    s.location.emplace_back(u(rng), u(rng));
    s.kind.push_back(SiteKind::observed);
    for (int j = 0; j < 4; ++j)
      s.y(i, j) = 0.5 + z(rng);
  }
  JointModelSpec spec;
  spec.selection = false;
  spec.beta2 = false;
  MeshOptions mo{0.7, 1.0, 25};
  mo.exterior_band = false;
  const AssembledModel m = assemble(spec, s, build_mesh(rectangle_domain(0, 0, 3, 3), mo));
  Hyperparameters h;
  h.sigma2_eps = 0.3;
  h.zeta[0] = {1.2, 0.8};
  h.zeta[1] = {1.5, 0.4};
  h.sd_b1 = 0.4;
  h.sd_b2 = 0.2;
  h.rho_b = -0.3;

  const auto t0 = std::chrono::steady_clock::now();
  const double approx = laplace_log_marginal(m, h);
  const double elapsed = seconds_since(t0);

  // Closed form: y ~ N(0, A Sigma_c A^T + sigma2 I) with Sigma_c the prior
  // covariance conditioned on the constraints.
  const Matrix Sigma = Matrix(m.Q_prior(h)).inverse();
  const Matrix C = Matrix(m.constraints);
  Matrix Sc = Sigma;
  if (C.rows() > 0)
    Sc -= Sigma * C.transpose() * (C * Sigma * C.transpose()).inverse() * C * Sigma;
  Matrix K = Matrix(m.A_obs) * Sc * Matrix(m.A_obs).transpose();
  K.diagonal().array() += h.sigma2_eps;
  const Eigen::LLT<Matrix> llt(K);
  const Matrix L = llt.matrixL();
  const double exact = -L.diagonal().array().log().sum() - 0.5 * m.y.dot(llt.solve(m.y)) -
                       0.5 * static_cast<double>(m.y.size()) * std::log(2 * std::numbers::pi);
  const double rel = std::abs(approx - exact) / std::abs(exact);
  return {m.n_latent() <= 200 && rel <= laplace_rel_tol && elapsed < laplace_seconds,
          fmt("%ld latent, relative error %.2e (tol %.0e), %.3f s", static_cast<long>(m.n_latent()), rel,
              laplace_rel_tol, elapsed)};
}

Outcome spde_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  const double range = 2.0;
  const Mesh mesh = build_mesh(rectangle_domain(0, 0, 10, 10), MeshOptions{0.3, 0.45, 25});
  const Matrix S = Matrix(matern_precision(fem_matrices(mesh), MaternParams{range, 1.0})).inverse();
  std::vector<Index> interior;
  for (Index v = 0; v < mesh.num_vertices(); ++v) {
    const Point &p = mesh.vertices[v];
    if (p.x() > 2 && p.x() < 8 && p.y() > 2 && p.y() < 8)
      interior.push_back(v);
  }
  double worst_corr = 0, worst_sd = 0;
  for (Index i : interior) {
    worst_sd = std::max(worst_sd, std::abs(std::sqrt(S(i, i)) - 1.0));
    for (Index j : interior) {
      const double h = (mesh.vertices[i] - mesh.vertices[j]).norm();
      if (h < 0.5 * range || h > 2 * range)
        continue;
      worst_corr = std::max(worst_corr, std::abs(S(i, j) / std::sqrt(S(i, i) * S(j, j)) - matern_correlation(h, range)));
    }
  }
  const double elapsed = seconds_since(t0);
  return {worst_corr <= spde_corr_tol && worst_sd <= spde_sd_rel_tol && elapsed < spde_seconds,
          fmt("%ld vertices, max |corr error| %.4f, max sd error %.3f, %.1f s", static_cast<long>(mesh.num_vertices()),
              worst_corr, worst_sd, elapsed)};
}

Outcome null_detection() {
  const auto t0 = std::chrono::steady_clock::now();
  const StudyReport r = run_study(rigid_design(), study_replicates, 2, study_options());
  const double minutes = seconds_since(t0) / 60;
  std::vector<double> d;
  for (const auto &row : r.rows)
    if (row.ok)
      d.push_back(row.d_beta);
  const double m = mean_of(d);
  double ss = 0;
  for (double x : d)
    ss += (x - m) * (x - m);
  const double mc_se = std::sqrt(ss / static_cast<double>(d.size() - 1) / static_cast<double>(d.size()));
  const double cov = r.summary.d_beta_coverage;
  return {!r.summary.failed && cov >= coverage_lo && cov <= coverage_hi && std::abs(m) < null_mc_se_factor * mc_se &&
              minutes < null_minutes,
          coverage_text(r) + fmt(", |mean| %.4f vs %.0f MC se %.4f, %.1f min", std::abs(m), null_mc_se_factor,
                                 null_mc_se_factor * mc_se, minutes)};
}

Outcome signal_detection() {
  const auto t0 = std::chrono::steady_clock::now();
  const StudyReport &r = flexible_study(2);
  const double minutes = seconds_since(t0) / 60;
  const double m = r.summary.d_beta_mean, cov = r.summary.d_beta_coverage;
  return {!r.summary.failed && m >= signal_mean_lo && m <= signal_mean_hi && cov >= coverage_lo && cov <= coverage_hi &&
              minutes < signal_minutes,
          coverage_text(r) + fmt(", mean lifetime %.2f, %.1f min", r.summary.mean_lifetime, minutes)};
}

Outcome overdetermined() {
  const SimConfig c = overdetermined_design();
  const StudyReport a = run_study(c, overdetermined_replicates, 1, study_options());
  const StudyReport b = run_study(c, overdetermined_replicates, 2, study_options());
  std::vector<double> diffs, sds, life;
  for (int k = 0; k < overdetermined_replicates; ++k) {
    const StudyRow &x = a.rows[k], &y = b.rows[k];
    if (!x.ok || !y.ok)
      continue;
    for (std::size_t j = 0; j < x.p1_hat.size(); ++j)
      if (!std::isnan(x.p1_hat[j]) && !std::isnan(y.p1_hat[j]))
        diffs.push_back(std::abs(x.p1_hat[j] - y.p1_hat[j]));
    life.push_back(x.mean_lifetime);
    // Spatial sd of the true field, averaged over years.
    SimConfig rc = c;
    rc.seed = x.seed;
    const SimField f = simulate_field(rc);
    double var = 0;
    for (int j = 0; j < c.N; ++j) {
      const Vector col = f.mu.col(j);
      var += (col.array() - col.mean()).square().sum() / static_cast<double>(col.size() - 1) / c.N;
    }
    sds.push_back(std::sqrt(var));
  }
  const double diff = mean_of(diffs), sd = mean_of(sds), lifetime = mean_of(life);
  return {!life.empty() && lifetime >= overdetermined_min_lifetime && diff < overdetermined_rel_diff * sd,
          fmt("mean lifetime %.1f of %d years, mean |P1 diff| %.4f vs %.0f%% of field sd %.3f (%zu pairs)", lifetime,
              c.N, diff, 100 * overdetermined_rel_diff, sd, life.size())};
}

Outcome underdetermined() {
  const StudyReport &one = flexible_study(1);
  const StudyReport &two = flexible_study(2);
  int better = 0, pairs = 0;
  for (int k = 0; k < study_replicates; ++k) {
    if (!one.rows[k].ok || !two.rows[k].ok)
      continue;
    ++pairs;
    better += two.rows[k].p2_bias < one.rows[k].p2_bias;
  }
  const double frac = pairs ? static_cast<double>(better) / study_replicates : 0.0;
  const double life = two.summary.mean_lifetime;
  return {life <= underdetermined_max_lifetime && frac >= underdetermined_fraction,
          fmt("joint fit lowers the P-mean bias in %d of %d replicates (mean %.3f vs %.3f), mean lifetime %.2f", better,
              study_replicates, two.summary.p2_bias, one.summary.p2_bias, life)};
}

Outcome pseudo_convergence() {
  const auto t0 = std::chrono::steady_clock::now();
  const ConvergenceTable t = convergence_check(ConvergenceConfig{}, convergence_spacings);
  const double minutes = seconds_since(t0) / 60;
  std::printf("  spacing  n_pseudo  mean_coef  mean_se  mean_abs_error\n");
  for (const auto &r : t.rows)
    std::printf("  %7.3f  %8ld  %9.4f  %7.4f  %14.4f\n", r.spacing, static_cast<long>(r.n_pseudo), r.mean_coef,
                r.mean_se, r.mean_abs_error);
  double worst_z = 0;
  bool drift = true;
  for (std::size_t k = 1; k < t.rows.size(); ++k) {
    const auto &a = t.rows[k - 1], &b = t.rows[k];
    for (std::size_t i = 0; i < a.coef.size(); ++i)
      worst_z = std::max(worst_z, std::abs(a.coef[i] - b.coef[i]) / std::hypot(a.se[i], b.se[i]));
    drift = drift && b.mean_abs_error <= a.mean_abs_error;
  }
  return {worst_z < convergence_z && drift && minutes < convergence_minutes,
          fmt("max z between successive spacings %.3f (tol %.0f), error falls with spacing: %s, %.2f min", worst_z,
              convergence_z, drift ? "yes" : "no", minutes)};
}

Outcome directional() {
  SimConfig c = flexible_design();
  c.d_beta = directional_d_beta;
  const StudyReport r = run_study(c, directional_replicates, 3, study_options());
  int below = 0, ok = 0;
  for (const auto &row : r.rows) {
    if (!row.ok)
      continue;
    ++ok;
    below += mean_of(row.p2_hat) < mean_of(row.p1_hat);
  }
  const double frac = static_cast<double>(below) / directional_replicates;
  return {frac >= directional_fraction,
          fmt("domain mean below network mean in %d of %d replicates (%d fitted), mean d_beta %.3f", below,
              directional_replicates, ok, r.summary.d_beta_mean)};
}

Outcome exposure_integrals() {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::lognormal_distribution<double> ln(3.0, 0.6);
  double worst = 0;
  bool monotone = true;
  for (int rep = 0; rep < 5; ++rep) {
    const int cells = 20 + 10 * rep, draws = 30;
    PointList c;
    Vector counts(cells);
    for (int i = 0; i < cells; ++i) {
      c.emplace_back(u(rng), u(rng));
      counts(i) = 100 * u(rng);
    }
    const PopulationRaster raster = PopulationRaster::from_counts(c, counts);
    Matrix v(cells, draws);
    for (Index i = 0; i < v.size(); ++i)
      v(i) = ln(rng);
    const PopulationMean pm = population_mean(v, raster);
    const double thr = 20.0 + 10 * u(rng);
    const Exceedance e = exceedance(v, raster, thr);
    for (int d = 0; d < draws; ++d) {
      double mean = 0, pop = 0, area = 0;
      for (int i = 0; i < cells; ++i) {
        mean += counts(i) / counts.sum() * v(i, d);
        pop += counts(i) / counts.sum() * (v(i, d) > thr ? 1.0 : 0.0);
        area += (v(i, d) > thr ? 1.0 : 0.0) / cells;
      }
      worst = std::max({worst, std::abs(pm.per_draw(d) - mean) / mean, std::abs(e.population_per_draw(d) - pop),
                        std::abs(e.area_per_draw(d) - area)});
    }
    std::vector<double> thresholds(exposure_thresholds);
    for (auto &t : thresholds)
      t = 80 * u(rng);
    std::sort(thresholds.begin(), thresholds.end());
    Exceedance prev = exceedance(v, raster, thresholds[0]);
    for (std::size_t k = 1; k < thresholds.size(); ++k) {
      const Exceedance cur = exceedance(v, raster, thresholds[k]);
      monotone = monotone && (cur.population_per_draw.array() <= prev.population_per_draw.array() + 1e-15).all() &&
                 (cur.area_per_draw.array() <= prev.area_per_draw.array()).all() &&
                 (cur.cell_probability.array() <= prev.cell_probability.array()).all();
      prev = cur;
    }
  }
  return {worst <= exposure_tol && monotone,
          fmt("max deviation from naive loops %.2e (tol %.0e), monotone over %d thresholds: %s", worst, exposure_tol,
              exposure_thresholds, monotone ? "yes" : "no")};
}

Outcome determinism() {
  const fs::path d = fs::temp_directory_path() / "prefsamp_acceptance_determinism";
  fs::remove_all(d);
  fs::create_directories(d);
  std::ofstream(d / "study.ini") << "[mesh]\nmin_edge = 1.2\nmax_edge = 2.4\nexterior_band = false\n\n"
                                    "[optimizer]\nspread_tol = 1e-3\n\n[run]\nseed = 21\n\n"
                                    "[simulation]\ngrid_n = 8\nextent = 6\nn_population = 20\nn_initial = 10\n"
                                    "years = 3\ndesign = independent\nlag = concurrent\nbeta1_sd = 0\nbeta2_sd = 0\n"
                                    "sd_b1 = 0\nalpha0 = -1\nalpha_ret = 0\nd_beta = 1\n\n[study]\nreplicates = 3\n";
  auto run = [&](const std::string &out) {
    const std::string cfg = (d / "study.ini").string(), o = (d / out).string();
    const char *argv[] = {"prefsamp", "study", cfg.c_str(), "--output", o.c_str()};
    std::ostringstream so, se;
    return run_cli(5, argv, so, se);
  };
  auto slurp = [](const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  };
  const int a = run("a"), b = run("b");
  const bool same = slurp(d / "a" / "study.csv") == slurp(d / "b" / "study.csv") &&
                    slurp(d / "a" / "study_summary.csv") == slurp(d / "b" / "study_summary.csv") &&
                    !slurp(d / "a" / "study.csv").empty();
  return {a == exit_ok && b == exit_ok && same,
          fmt("two study runs with seed 21: exit %d/%d, outputs byte-identical: %s", a, b, same ? "yes" : "no")};
}

Outcome registry() {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0.2, 3.8);
  std::normal_distribution<double> z;
  SiteTable s;
  s.t_star = unit_times(4);
  s.r = Eigen::MatrixXi::Zero(6, 4);
  s.y = Matrix::Constant(6, 4, std::nan(""));
  for (int i = 0; i < 6; ++i) {
    s.site_id.push_back(i + 1);
    s.location.emplace_back(u(rng), u(rng));
    s.kind.push_back(SiteKind::observed);
    for (int j = 0; j < 4; ++j)
      if ((s.r(i, j) = (i + j) % 2 == 0 || j == 0))
        s.y(i, j) = z(rng);
  }
  s.add_pseudo_sites({Point(1, 1), Point(3, 3)}, 1000);
  JointModelSpec spec;
  spec.implementation = 2;
  const AssembledModel m = assemble(spec, s, build_mesh(rectangle_domain(0, 0, 4, 4), MeshOptions{0.6, 1.0, 25}));
  const std::vector<std::string> symbols{
      "gamma0", "gamma1",  "gamma2",     "b0",        "b1",     "sigma2_b1",  "sigma2_b2", "rho_b",
      "beta0",  "beta1",   "beta2",      "zeta0",     "zeta1",  "zeta2",      "sigma2_eps", "alpha00",
      "alpha01", "alpha1", "alpha2",     "alpha_ret", "alpha_rep", "I",       "c",          "beta_star0",
      "zeta_R", "beta_star1", "rho_a",   "sigma2_a",  "d_b",    "d_beta",     "t_star",     "phi"};
  const auto reg = symbol_registry(m);
  const auto comps = model_components(m);
  std::set<std::string> claimed;
  std::string problems;
  for (const auto &sym : symbols) {
    int n = 0;
    for (const auto &b : reg)
      if (b.symbol == sym) {
        ++n;
        if (std::find(comps.begin(), comps.end(), b.component) == comps.end())
          problems += " " + sym + "->unknown";
        if (!claimed.insert(b.component).second)
          problems += " " + b.component + " claimed twice";
      }
    if (n != 1)
      problems += " " + sym + " bound " + std::to_string(n) + "x";
  }
  for (const auto &c : comps)
    if (!claimed.count(c))
      problems += " orphan " + c;
  return {problems.empty() && reg.size() == symbols.size(),
          fmt("%zu symbols, %zu components%s", symbols.size(), comps.size(),
              problems.empty() ? ", each bound exactly once" : problems.c_str())};
}

} // namespace

int main(int argc, char **argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"Laplace exactness", laplace_exactness},
      {"SPDE fidelity", spde_fidelity},
      {"PS detection (null)", null_detection},
      {"PS detection (signal)", signal_detection},
      {"over-determined regime", overdetermined},
      {"under-determined regime", underdetermined},
      {"pseudo-site convergence", pseudo_convergence},
      {"directional correction", directional},
      {"exposure integrals", exposure_integrals},
      {"determinism", determinism},
      {"symbol registry", registry},
  };
  std::set<int> only;
  for (int k = 1; k < argc; ++k)
    only.insert(std::atoi(argv[k]));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id))
      continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o{false, ""};
    try {
      o = criteria[k].second();
    } catch (const std::exception &e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %-26s %s  %s [%.1f s]\n", id, criteria[k].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
