#include "doctest.h"

#include "prefsamp/error.hpp"
#include "prefsamp/simulate.hpp"

#include <numeric>

using namespace prefsamp;

namespace {

SimConfig small_config() {
  SimConfig c;
  c.grid_n = 10;
  c.extent = 5.0;
  c.n_population = 50;
  c.n_initial = 25;
  c.N = 8;
  c.beta = {MaternParams{2.0, 1.0}, MaternParams{2.0, 0.0}, MaternParams{2.0, 0.0}};
  c.sd_b1 = 0.0;
  c.alpha0 = -1.0;
  c.alpha_ret = 1.0;
  return c;
}

double correlation(const std::vector<double> &a, const std::vector<double> &b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

} // namespace

TEST_CASE("degenerate fields reduce to the trend") {
  SimConfig c = small_config();
  c.beta[0].sd = 0.0;
  c.sigma2_eps = 0.0;
  c.gamma = {1.0, -2.0, 1.0};
  const SimField f = simulate_field(c);
  for (int j = 0; j < c.N; ++j) {
    const double t = f.t_star(j);
    CHECK((f.mu.col(j).array() == f.trend(0, j)).all());
    CHECK(f.y.col(j).mean() == doctest::Approx(1 - 2 * t + t * t).epsilon(1e-14));
    CHECK(f.trend(0, j) == doctest::Approx(1 - 2 * t + t * t).epsilon(1e-14));
  }
}

TEST_CASE("empirical correlation at the range") {
  SimConfig c;
  c.grid_n = 20;
  c.extent = 10.0;
  c.n_population = 0;
  c.n_initial = 1;
  c.N = 1;
  c.beta = {MaternParams{2.0, 1.0}, MaternParams{2.0, 0.0}, MaternParams{2.0, 0.0}};
  c.sd_b1 = 0.0;
  const PointList grid = c.grid();
  std::vector<std::pair<Index, Index>> pairs;
  for (Index i = 0; i < static_cast<Index>(grid.size()); ++i)
    for (Index j = 0; j < i; ++j) {
      const double d = (grid[i] - grid[j]).norm();
      if (std::abs(d - 2.0) < 0.1)
        pairs.emplace_back(i, j);
    }
  REQUIRE(pairs.size() > 100);
  double mean_corr = 0;
  for (int rep = 0; rep < 50; ++rep) {
    c.seed = 1000 + rep;
    const SimField f = simulate_field(c);
    double gamma = 0;
    for (const auto &[i, j] : pairs)
      gamma += 0.5 * std::pow(f.beta(i, 0) - f.beta(j, 0), 2);
    gamma /= static_cast<double>(pairs.size());
    mean_corr += (1.0 - gamma) / 50.0;
  }
  CHECK(std::abs(mean_corr - 0.13) <= 0.1);
  CHECK(std::abs(mean_corr - matern_correlation(2.0, 2.0)) <= 0.1);
}

TEST_CASE("field is reproducible from the seed") {
  const SimConfig c = small_config();
  CHECK(simulate_field(c).y == simulate_field(c).y);
  SimConfig d = c;
  d.seed = 2;
  CHECK(simulate_field(d).y != simulate_field(c).y);
  const SimField f = simulate_field(c);
  CHECK(simulate_panel(c, f) == simulate_panel(c, f));
}

TEST_CASE("independent design redraws the field every year") {
  SimConfig c = small_config();
  c.design = TemporalDesign::independent_fields;
  c.lag = Lag::concurrent;
  const SimField f = simulate_field(c);
  CHECK(f.beta.col(0) != f.beta.col(1));
  CHECK(f.beta_lagged == f.beta);
  c.lag = Lag::reactive;
  const SimField g = simulate_field(c);
  CHECK(g.beta_lagged.col(3) == g.beta.col(2));
  CHECK(g.beta_lagged.col(0) == g.beta.col(0));
}

TEST_CASE("selection panel structure") {
  const SimConfig c = small_config();
  const SimField f = simulate_field(c);
  const Eigen::MatrixXi p = simulate_panel(c, f);
  CHECK(p.col(0).sum() == c.n_initial);
  int population = 0;
  for (Index i = 0; i < p.rows(); ++i)
    population += p.row(i).sum() > 0;
  CHECK(population <= c.n_population);
  const SiteTable s = simulate_selection(c, f);
  CHECK(s.num_sites() == population);
  CHECK_NOTHROW(s.validate());
  for (Index i = 0; i < s.num_sites(); ++i)
    for (int j = 0; j < c.N; ++j) {
      CHECK(s.has_y(i, j) == (s.r(i, j) == 1));
      if (s.r(i, j))
        CHECK(s.y(i, j) == f.y(s.site_id[i], j));
    }
}

TEST_CASE("retention saturation keeps every initial site") {
  SimConfig c = small_config();
  c.alpha_ret = 50.0;
  c.alpha0 = -3.0;
  for (int rep = 0; rep < 5; ++rep) {
    c.seed = 70 + rep;
    const SimField f = simulate_field(c);
    const Eigen::MatrixXi p = simulate_panel(c, f);
    for (Index i = 0; i < p.rows(); ++i)
      if (p(i, 0))
        CHECK(p.row(i).sum() == c.N);
  }
}

TEST_CASE("null design selects independently of the field") {
  SimConfig c = small_config();
  c.alpha_rep = 0.0;
  c.d_beta = c.d_b = 0.0;
  std::vector<double> freq, value;
  for (int rep = 0; rep < 200; ++rep) {
    c.seed = 5000 + rep;
    const SimField f = simulate_field(c);
    const Eigen::MatrixXi p = simulate_panel(c, f);
    for (Index i = 0; i < p.rows(); ++i) {
      if (p.row(i).sum() == 0)
        continue;
      freq.push_back(p.row(i).tail(c.N - 1).cast<double>().mean());
      value.push_back(f.beta(i, 0));
    }
  }
  CHECK(std::abs(correlation(freq, value)) <= 0.05);
}

TEST_CASE("preferential selection favours high field values") {
  SimConfig c = small_config();
  c.design = TemporalDesign::independent_fields;
  c.lag = Lag::concurrent;
  c.d_beta = 1.0;
  c.alpha_ret = 0.0;
  int above = 0;
  for (int rep = 0; rep < 100; ++rep) {
    c.seed = 9000 + rep;
    const SimField f = simulate_field(c);
    const Eigen::MatrixXi p = simulate_panel(c, f);
    double sel = 0, grid = 0;
    long n_sel = 0;
    for (int j = 1; j < c.N; ++j) {
      grid += f.beta.col(j).mean() / (c.N - 1);
      for (Index i = 0; i < p.rows(); ++i)
        if (p(i, j)) {
          sel += f.beta(i, j);
          ++n_sel;
        }
    }
    above += sel / static_cast<double>(n_sel) > grid;
  }
  CHECK(above >= 95);
}

TEST_CASE("invalid configurations") {
  SimConfig c = small_config();
  c.n_initial = 60;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = small_config();
  c.grid_n = 0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = small_config();
  c.candidates = {Point(0, 0), Point(1, 1), Point(1, 1)};
  c.n_population = 0;
  c.n_initial = 1;
  CHECK_THROWS_AS(simulate_field(c), ParameterError);
}

TEST_CASE("run lengths") {
  Eigen::MatrixXi p(2, 5);
  p << 1, 1, 0, 1, 0, //
      0, 1, 1, 1, 1;
  CHECK(mean_run_length(p) == doctest::Approx(7.0 / 3.0));
}

TEST_CASE("fit spec mirrors the generating design") {
  SimConfig c = small_config();
  c.design = TemporalDesign::independent_fields;
  c.alpha_ret = 0.0;
  c.alpha_rep = 0.0;
  const JointModelSpec s = fit_spec(c, 2);
  CHECK(s.beta0_per_year);
  CHECK_FALSE(s.retention);
  CHECK_FALSE(s.b_intercept);
  CHECK(s.first_selection_year == 2);
  const ThetaCodec codec(s);
  CHECK(codec.find("d_beta") >= 0);
  CHECK(codec.find("d_b") < 0);
  CHECK(ThetaCodec(fit_spec(c, 1)).find("d_beta") < 0);
}

TEST_CASE("study bookkeeping") {
  SimConfig c = small_config();
  c.N = 5;
  c.alpha_rep = 0.0;
  StudyOptions opt;
  opt.mesh = MeshOptions{0.8, 1.6, 25};
  opt.outer.spread_tol = 1e-4;

  SUBCASE("independent fits are unbiased on null data") {
    const StudyReport r = run_study(c, 12, 1, opt);
    CHECK(r.summary.failures == 0);
    std::vector<double> bias;
    for (const auto &row : r.rows) {
      double b = 0;
      for (std::size_t j = 0; j < row.p2_hat.size(); ++j)
        b += (row.p2_hat[j] - row.p2_true[j]) / static_cast<double>(row.p2_hat.size());
      bias.push_back(b);
    }
    const double n = static_cast<double>(bias.size());
    const double mean = std::accumulate(bias.begin(), bias.end(), 0.0) / n;
    double ss = 0;
    for (double b : bias)
      ss += (b - mean) * (b - mean);
    CHECK(std::abs(mean) <= 2 * std::sqrt(ss / (n - 1) / n));
  }
  SUBCASE("seed determinism and thread independence") {
    opt.threads = 1;
    const StudyReport a = run_study(c, 3, 2, opt);
    opt.threads = 3;
    const StudyReport b = run_study(c, 3, 2, opt);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t k = 0; k < a.rows.size(); ++k) {
      CHECK(a.rows[k].d_beta == b.rows[k].d_beta);
      CHECK(a.rows[k].p1_hat == b.rows[k].p1_hat);
      CHECK(a.rows[k].seed == b.rows[k].seed);
    }
  }
  SUBCASE("failure accounting") {
    std::vector<StudyRow> rows(10);
    for (int k = 0; k < 10; ++k) {
      rows[k].ok = k >= 3;
      rows[k].d_beta = 0.1 * k;
      rows[k].d_b = std::nan("");
      rows[k].d_beta_covered = k % 2 == 0;
    }
    const StudySummary s = summarize(rows, c, 2);
    CHECK(s.failures == 3);
    CHECK(s.failed);
    CHECK(s.d_beta_mean == doctest::Approx(0.6));
    CHECK(s.d_beta_coverage == doctest::Approx(3.0 / 7.0));
    rows[0].ok = true;
    CHECK_FALSE(summarize(rows, c, 2).failed);
  }
}
