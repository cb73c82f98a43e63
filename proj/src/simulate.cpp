#include "prefsamp/simulate.hpp"

#include "prefsamp/error.hpp"
#include "prefsamp/io.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

namespace prefsamp {

namespace {

constexpr std::uint64_t field_stream = 0x6669656c64;
constexpr std::uint64_t panel_stream = 0x70616e656c;

double sigmoid(double v) {
  if (v >= 0)
    return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

Vector standard_normal(std::mt19937_64 &rng, Index n) {
  std::normal_distribution<double> z;
  Vector v(n);
  for (Index k = 0; k < n; ++k)
    v(k) = z(rng);
  return v;
}

bool on(const MaternParams &p) { return p.sd > 0.0; }

} // namespace

void SimConfig::validate() const {
  if (candidates.empty()) {
    if (grid_n < 1)
      throw ParameterError("grid_n must be at least 1");
    if (!(extent > 0.0))
      throw ParameterError("grid spacing must be positive");
  }
  const Index n = candidates.empty() ? static_cast<Index>(grid_n) * grid_n : static_cast<Index>(candidates.size());
  if (n_population < 0 || n_population > n)
    throw ParameterError("n_population = " + std::to_string(n_population) + " exceeds the grid size " +
                         std::to_string(n));
  const Index pop = n_population > 0 ? n_population : n;
  if (n_initial < 1 || n_initial > pop)
    throw ParameterError("n_initial = " + std::to_string(n_initial) + " must lie in [1, " + std::to_string(pop) + "]");
  if (N < 1)
    throw ParameterError("N must be at least 1");
  if (!(sigma2_eps >= 0.0))
    throw ParameterError("sigma2_eps must be nonnegative");
  for (const auto &b : beta)
    if (on(b) && !(b.range > 0.0))
      throw ParameterError("field range must be positive");
  if (on(beta_star0) && !(beta_star0.range > 0.0))
    throw ParameterError("beta_star0 range must be positive");
  if (sd_b1 < 0 || sd_b2 < 0 || std::abs(rho_b) >= 1.0)
    throw ParameterError("invalid site-effect parameters");
  if (sigma2_a < 0 || std::abs(rho_a) >= 1.0)
    throw ParameterError("invalid AR1 parameters");
  if (!(repulsion_distance >= 0.0))
    throw ParameterError("repulsion distance must be nonnegative");
}

PointList SimConfig::grid() const {
  if (!candidates.empty())
    return candidates;
  PointList out;
  const double h = extent / grid_n;
  for (int iy = 0; iy < grid_n; ++iy)
    for (int ix = 0; ix < grid_n; ++ix)
      out.emplace_back((ix + 0.5) * h, (iy + 0.5) * h);
  return out;
}

DomainPolygon SimConfig::domain() const {
  if (candidates.empty())
    return rectangle_domain(0, 0, extent, extent);
  Point lo = candidates.front(), hi = lo;
  for (const auto &p : candidates) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double pad = 0.05 * std::max((hi - lo).maxCoeff(), 1e-3);
  return rectangle_domain(lo.x() - pad, lo.y() - pad, hi.x() + pad, hi.y() + pad);
}

Matrix matern_cholesky(const PointList &points, const MaternParams &p) {
  const Index n = static_cast<Index>(points.size());
  Matrix K(n, n);
  for (Index i = 0; i < n; ++i) {
    K(i, i) = p.sd * p.sd;
    for (Index j = 0; j < i; ++j) {
      const double d = (points[i] - points[j]).norm();
      if (d == 0.0)
        throw ParameterError("Matern covariance is singular: points " + std::to_string(j) + " and " +
                             std::to_string(i) + " coincide");
      K(i, j) = K(j, i) = p.sd * p.sd * matern_correlation(d, p.range);
    }
  }
  Eigen::LLT<Matrix> llt(K);
  if (llt.info() != Eigen::Success)
    throw ParameterError("Matern covariance is not positive definite");
  return llt.matrixL();
}

SimField simulate_field(const SimConfig &config) {
  config.validate();
  std::mt19937_64 rng(derive_seed(config.seed, field_stream));
  SimField f;
  f.grid = config.grid();
  const Index n = static_cast<Index>(f.grid.size());
  const int N = config.N;
  f.t_star = unit_times(N);
  const Vector &t = f.t_star;

  f.trend.resize(n, N);
  for (int j = 0; j < N; ++j)
    f.trend.col(j).setConstant(config.gamma[0] + config.gamma[1] * t(j) + config.gamma[2] * t(j) * t(j));

  f.beta = Matrix::Zero(n, N);
  std::vector<std::pair<MaternParams, Matrix>> cache;
  auto factor = [&](const MaternParams &p) -> const Matrix & {
    for (const auto &[q, L] : cache)
      if (q.range == p.range && q.sd == p.sd)
        return L;
    cache.emplace_back(p, matern_cholesky(f.grid, p));
    return cache.back().second;
  };
  if (config.design == TemporalDesign::rigid_quadratic) {
    for (int k = 0; k < 3; ++k) {
      if (!on(config.beta[k]))
        continue;
      const Vector field = factor(config.beta[k]) * standard_normal(rng, n);
      for (int j = 0; j < N; ++j)
        f.beta.col(j) += field * std::pow(t(j), k);
    }
  } else if (on(config.beta[0])) {
    const Matrix &L = factor(config.beta[0]);
    for (int j = 0; j < N; ++j)
      f.beta.col(j) = L * standard_normal(rng, n);
  }

  f.b = Matrix::Zero(n, N);
  {
    const Vector z0 = standard_normal(rng, n), z1 = standard_normal(rng, n);
    const double c = std::sqrt(1.0 - config.rho_b * config.rho_b);
    for (Index i = 0; i < n; ++i) {
      const double b0 = config.sd_b1 * z0(i);
      const double b1 = config.sd_b2 * (config.rho_b * z0(i) + c * z1(i));
      for (int j = 0; j < N; ++j)
        f.b(i, j) = b0 + b1 * t(j);
    }
  }

  f.mu = f.trend + f.beta + f.b;
  f.y = f.mu + std::sqrt(config.sigma2_eps) * Matrix(standard_normal(rng, n * N).reshaped(n, N));

  f.beta_star0 = on(config.beta_star0) ? Vector(factor(config.beta_star0) * standard_normal(rng, n)) : Vector::Zero(n);
  f.beta_star1 = Vector::Zero(N);
  if (config.sigma2_a > 0) {
    const Vector e = standard_normal(rng, N);
    f.beta_star1(0) = std::sqrt(config.sigma2_a) * e(0);
    const double innov = std::sqrt(config.sigma2_a * (1 - config.rho_a * config.rho_a));
    for (int j = 1; j < N; ++j)
      f.beta_star1(j) = config.rho_a * f.beta_star1(j - 1) + innov * e(j);
  }

  f.beta_lagged.resize(n, N);
  f.b_lagged.resize(n, N);
  for (int j = 0; j < N; ++j) {
    f.beta_lagged.col(j) = f.beta.col(lag_year(config.lag, j));
    f.b_lagged.col(j) = f.b.col(lag_year(config.lag, j));
  }
  return f;
}

Eigen::MatrixXi simulate_panel(const SimConfig &config, const SimField &field, std::vector<std::string> *warnings) {
  config.validate();
  const Index n = static_cast<Index>(field.grid.size());
  const int N = static_cast<int>(field.t_star.size());
  if (field.mu.rows() != n || field.mu.cols() != N || N != config.N)
    throw ParameterError("field does not match the configured grid and years");
  std::mt19937_64 rng(derive_seed(config.seed, panel_stream));
  std::uniform_real_distribution<double> u(0.0, 1.0);

  SiteTable all;
  all.location = field.grid;
  all.t_star = field.t_star;
  all.kind.assign(n, SiteKind::observed);
  all.site_id.resize(n);
  std::iota(all.site_id.begin(), all.site_id.end(), 0L);
  all.r = Eigen::MatrixXi::Zero(n, N);

  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  const Index pop = config.n_population > 0 ? config.n_population : n;
  std::vector<Index> population(order.begin(), order.begin() + pop);
  std::shuffle(population.begin(), population.end(), rng);
  for (int k = 0; k < config.n_initial; ++k)
    all.r(population[k], 0) = 1;
  std::sort(population.begin(), population.end());

  for (int j = 1; j < N; ++j) {
    const double t = field.t_star(j);
    std::vector<int> rep;
    if (config.alpha_rep != 0.0)
      rep = repulsion_covariate(all, j, config.repulsion_distance);
    for (Index i : population) {
      double nu = config.alpha0 + config.alpha1 * t + config.alpha2 * t * t + config.alpha_ret * all.r(i, j - 1) +
                  field.beta_star0(i) + field.beta_star1(j) + config.d_b * field.b_lagged(i, j) +
                  config.d_beta * field.beta_lagged(i, j);
      if (!rep.empty())
        nu += config.alpha_rep * rep[i];
      all.r(i, j) = u(rng) < sigmoid(nu) ? 1 : 0;
    }
    if (warnings && all.r.col(j).sum() == 0)
      warnings->push_back("no site selected in year " + std::to_string(j + 1));
  }
  return all.r;
}

SiteTable site_table_from_panel(const SimField &field, const Eigen::MatrixXi &panel) {
  SiteTable s;
  s.t_star = field.t_star;
  const int N = static_cast<int>(field.t_star.size());
  std::vector<Index> rows;
  for (Index i = 0; i < panel.rows(); ++i)
    if (panel.row(i).sum() > 0)
      rows.push_back(i);
  const Index m = static_cast<Index>(rows.size());
  s.r.resize(m, N);
  s.y = Matrix::Constant(m, N, std::numeric_limits<double>::quiet_NaN());
  for (Index k = 0; k < m; ++k) {
    const Index i = rows[k];
    s.site_id.push_back(static_cast<long>(i));
    s.location.push_back(field.grid[i]);
    s.kind.push_back(SiteKind::observed);
    s.r.row(k) = panel.row(i);
    for (int j = 0; j < N; ++j)
      if (panel(i, j))
        s.y(k, j) = field.y(i, j);
  }
  return s;
}

SiteTable simulate_selection(const SimConfig &config, const SimField &field, std::vector<std::string> *warnings) {
  return site_table_from_panel(field, simulate_panel(config, field, warnings));
}

JointModelSpec fit_spec(const SimConfig &config, int implementation) {
  JointModelSpec s;
  s.implementation = implementation;
  if (config.design == TemporalDesign::rigid_quadratic) {
    s.beta0 = on(config.beta[0]);
    s.beta1 = on(config.beta[1]);
    s.beta2 = on(config.beta[2]);
  } else {
    s.beta0 = on(config.beta[0]);
    s.beta0_per_year = true;
    s.beta1 = s.beta2 = false;
  }
  s.b_intercept = config.sd_b1 > 0;
  s.b_slope = s.b_intercept && config.sd_b2 > 0;
  s.first_selection_year = 2;
  s.alpha1 = config.alpha1 != 0.0;
  s.alpha2 = config.alpha2 != 0.0;
  s.retention = config.alpha_ret != 0.0;
  s.repulsion = config.alpha_rep != 0.0;
  s.repulsion_distance = config.repulsion_distance;
  s.beta_star0 = on(config.beta_star0);
  s.beta_star1 = config.sigma2_a > 0;
  s.share_b = s.b_intercept;
  s.share_beta = s.beta0;
  s.lag = config.lag;
  return s;
}

Hyperparameters true_hyperparameters(const SimConfig &config) {
  Hyperparameters h;
  h.sigma2_eps = config.sigma2_eps;
  for (int k = 0; k < 3; ++k)
    if (on(config.beta[k]))
      h.zeta[k] = config.beta[k];
  if (config.sd_b1 > 0)
    h.sd_b1 = config.sd_b1;
  if (config.sd_b2 > 0)
    h.sd_b2 = config.sd_b2;
  h.rho_b = config.rho_b;
  if (on(config.beta_star0))
    h.zeta_R = config.beta_star0;
  if (config.sigma2_a > 0)
    h.sigma2_a = config.sigma2_a;
  h.rho_a = config.rho_a;
  h.d_b = config.d_b;
  h.d_beta = config.d_beta;
  return h;
}

double mean_run_length(const Eigen::MatrixXi &panel) {
  long runs = 0, total = 0;
  for (Index i = 0; i < panel.rows(); ++i)
    for (Index j = 0; j < panel.cols(); ++j)
      if (panel(i, j)) {
        ++total;
        if (j == 0 || !panel(i, j - 1))
          ++runs;
      }
  return runs ? static_cast<double>(total) / static_cast<double>(runs) : 0.0;
}

StudyRow run_replicate(const SimConfig &config, int replicate, int implementation, const StudyOptions &opt,
                       const Mesh &mesh) {
  StudyRow row;
  row.replicate = replicate;
  row.seed = derive_seed(config.seed, static_cast<std::uint64_t>(replicate));
  const double nan = std::numeric_limits<double>::quiet_NaN();
  row.d_beta = row.d_beta_lo = row.d_beta_hi = nan;
  row.d_b = row.d_b_lo = row.d_b_hi = nan;
  SimConfig cfg = config;
  cfg.seed = row.seed;
  try {
    const SimField field = simulate_field(cfg);
    const Eigen::MatrixXi panel = simulate_panel(cfg, field);
    SiteTable table = site_table_from_panel(field, panel);
    row.mean_lifetime = mean_run_length(panel);
    const std::vector<Index> obs_rows = table.observed_sites();
    if (implementation == 3)
      table.add_pseudo_sites(opt.pseudo_spacing > 0 ? generate_pseudosites(cfg.domain(), opt.pseudo_spacing)
                                                    : generate_pseudosites(mesh),
                             static_cast<long>(field.grid.size()));
    const AssembledModel model = assemble(fit_spec(cfg, implementation), table, mesh, opt.priors);
    row.n_sites = static_cast<Index>(obs_rows.size());
    row.n_obs = model.n_obs();

    Hyperparameters h0 = true_hyperparameters(cfg);
    h0.d_b = h0.d_beta = 0.0;
    const FitResult fit = optimize_hyperparameters(model, h0, opt.outer, opt.inner);
    row.converged = fit.converged;
    row.evaluations = fit.evaluations;

    auto record = [&](const char *name, double truth, double &est, double &lo, double &hi, bool &covered) {
      const Index k = model.codec.find(name);
      if (k < 0)
        return true;
      est = fit.theta(k);
      if (fit.theta_cov.size() == 0)
        return false;
      std::tie(lo, hi) = fit.interval(name);
      covered = lo <= truth && truth <= hi;
      return true;
    };
    const bool have_beta = record("d_beta", cfg.d_beta, row.d_beta, row.d_beta_lo, row.d_beta_hi, row.d_beta_covered);
    const bool have_b = record("d_b", cfg.d_b, row.d_b, row.d_b_lo, row.d_b_hi, row.d_b_covered);

    const Index n_grid = static_cast<Index>(field.grid.size());
    const int N = cfg.N;
    for (int j = 0; j < N; ++j) {
      double p1 = 0.0;
      for (Index k : obs_rows)
        p1 += field.mu(static_cast<Index>(table.site_id[k]), j);
      row.p1_true.push_back(p1 / static_cast<double>(obs_rows.size()));
      row.p1_hat.push_back((model.site_prediction_matrix(obs_rows, j) * fit.x_mode).mean());
      row.p2_true.push_back((field.trend.col(j) + field.beta.col(j)).sum() / static_cast<double>(n_grid));
      row.p2_hat.push_back((model.prediction_matrix(field.grid, j) * fit.x_mode).mean());
      row.p1_bias += std::abs(row.p1_hat[j] - row.p1_true[j]) / N;
      row.p2_bias += std::abs(row.p2_hat[j] - row.p2_true[j]) / N;
    }
    row.ok = have_beta && have_b;
    if (!row.ok)
      row.message = "hyperparameter curvature not positive definite";
  } catch (const Error &e) {
    row.ok = false;
    row.message = e.what();
  }
  return row;
}

StudySummary summarize(const std::vector<StudyRow> &rows, const SimConfig &config, int implementation) {
  StudySummary s;
  s.replicates = static_cast<int>(rows.size());
  int n = 0, n_cov = 0;
  double cov_beta = 0, cov_b = 0, se2_beta = 0, se2_b = 0;
  for (const auto &r : rows) {
    if (!r.ok) {
      ++s.failures;
      continue;
    }
    ++n;
    s.p1_bias += r.p1_bias;
    s.p2_bias += r.p2_bias;
    s.mean_lifetime += r.mean_lifetime;
    if (implementation != 1) {
      ++n_cov;
      s.d_beta_mean += r.d_beta;
      se2_beta += (r.d_beta - config.d_beta) * (r.d_beta - config.d_beta);
      cov_beta += r.d_beta_covered;
      if (!std::isnan(r.d_b)) {
        s.d_b_mean += r.d_b;
        se2_b += (r.d_b - config.d_b) * (r.d_b - config.d_b);
        cov_b += r.d_b_covered;
      }
    }
  }
  s.failed = s.replicates == 0 || s.failures > 0.2 * s.replicates;
  if (n > 0) {
    s.p1_bias /= n;
    s.p2_bias /= n;
    s.mean_lifetime /= n;
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (n_cov > 0) {
    auto fill = [&](double &mean, double &bias, double &mse, double &cov, double &cov_se, double sum_cov, double se2,
                    double truth) {
      mean /= n_cov;
      bias = mean - truth;
      mse = se2 / n_cov;
      cov = sum_cov / n_cov;
      cov_se = std::sqrt(cov * (1 - cov) / n_cov);
    };
    fill(s.d_beta_mean, s.d_beta_bias, s.d_beta_mse, s.d_beta_coverage, s.d_beta_coverage_se, cov_beta, se2_beta,
         config.d_beta);
    const bool has_b = std::any_of(rows.begin(), rows.end(), [](const StudyRow &r) { return r.ok && !std::isnan(r.d_b); });
    if (has_b)
      fill(s.d_b_mean, s.d_b_bias, s.d_b_mse, s.d_b_coverage, s.d_b_coverage_se, cov_b, se2_b, config.d_b);
    else
      s.d_b_mean = s.d_b_bias = s.d_b_mse = s.d_b_coverage = s.d_b_coverage_se = nan;
  } else {
    s.d_beta_mean = s.d_beta_bias = s.d_beta_mse = s.d_beta_coverage = s.d_beta_coverage_se = nan;
    s.d_b_mean = s.d_b_bias = s.d_b_mse = s.d_b_coverage = s.d_b_coverage_se = nan;
  }
  return s;
}

StudyReport run_study(const SimConfig &config, int n_replicates, int implementation, const StudyOptions &opt) {
  config.validate();
  if (n_replicates < 1)
    throw ParameterError("a study needs at least one replicate");
  StudyReport report;
  report.config = config;
  report.implementation = implementation;
  report.rows.resize(n_replicates);
  const Mesh mesh = build_mesh(config.domain(), opt.mesh);

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int k = next++; k < n_replicates; k = next++)
      report.rows[k] = run_replicate(config, k, implementation, opt, mesh);
  };
  const int threads = std::clamp(opt.threads, 1, n_replicates);
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t)
    pool.emplace_back(worker);
  worker();
  for (auto &t : pool)
    t.join();
  report.summary = summarize(report.rows, config, implementation);
  return report;
}

double convergence_covariate(const ConvergenceConfig &c, const Point &p) {
  const double w = 2.0 * std::numbers::pi / c.extent;
  return 0.5 * (std::cos(w * p.x()) + std::sin(w * p.y()));
}

PointList simulate_ipp(const ConvergenceConfig &c, int replicate) {
  std::mt19937_64 rng(derive_seed(c.seed, static_cast<std::uint64_t>(replicate)));
  const double lmax = std::exp(c.b0 + std::abs(c.b1));
  std::poisson_distribution<long> count(lmax * c.extent * c.extent);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const long n = count(rng);
  PointList out;
  for (long k = 0; k < n; ++k) {
    const Point p(u(rng) * c.extent, u(rng) * c.extent);
    const double keep = std::exp(c.b0 + c.b1 * convergence_covariate(c, p)) / lmax;
    if (u(rng) < keep)
      out.push_back(p);
  }
  return out;
}

ConvergenceTable convergence_check(const ConvergenceConfig &config, const std::vector<double> &spacings) {
  if (spacings.size() < 2)
    throw ParameterError("convergence check needs at least two spacings");
  if (config.replicates < 1)
    throw ParameterError("convergence check needs at least one replicate");
  ConvergenceTable table;
  table.config = config;
  const DomainPolygon domain = rectangle_domain(0, 0, config.extent, config.extent);
  MeshOptions mo{config.extent / 4, config.extent / 2, 25};
  mo.exterior_band = false;
  const Mesh mesh = build_mesh(domain, mo);

  JointModelSpec spec;
  spec.implementation = 3;
  spec.observation = false;
  spec.alpha1 = spec.alpha2 = spec.retention = spec.repulsion = false;
  spec.beta_star0 = spec.beta_star1 = false;
  spec.share_b = spec.share_beta = false;
  spec.selection_covariates = 1;

  std::vector<PointList> patterns;
  for (int r = 0; r < config.replicates; ++r)
    patterns.push_back(simulate_ipp(config, r));

  for (double h : spacings) {
    ConvergenceRow row;
    row.spacing = h;
    const PointList pseudo = generate_pseudosites(domain, h);
    row.n_pseudo = static_cast<Index>(pseudo.size());
    for (int r = 0; r < config.replicates; ++r) {
      const PointList &pts = patterns[r];
      SiteTable s;
      s.t_star = unit_times(1);
      const Index n = static_cast<Index>(pts.size() + pseudo.size());
      s.r = Eigen::MatrixXi::Zero(n, 1);
      s.y = Matrix::Constant(n, 1, std::numeric_limits<double>::quiet_NaN());
      s.covariates.resize(n, 1);
      for (Index i = 0; i < n; ++i) {
        const bool obs = i < static_cast<Index>(pts.size());
        const Point &p = obs ? pts[i] : pseudo[i - pts.size()];
        s.site_id.push_back(static_cast<long>(i));
        s.location.push_back(p);
        s.kind.push_back(obs ? SiteKind::observed : SiteKind::pseudo);
        s.r(i, 0) = obs ? 1 : 0;
        s.covariates(i, 0) = convergence_covariate(config, p);
      }
      const AssembledModel m = assemble(spec, s, mesh);
      FitResult fit;
      const InnerResult ir = inner_mode(m, fit.theta_hat, Vector::Zero(m.n_latent()));
      fit.x_mode = ir.x;
      fit.Q_post = ir.H;
      const Index k = m.layout.fixed("alpha_cov1");
      row.coef.push_back(ir.x(k));
      row.se.push_back(std::sqrt(latent_covariance(m, fit, {k})(0, 0)));
    }
    const double R = config.replicates;
    for (int r = 0; r < config.replicates; ++r) {
      row.mean_coef += row.coef[r] / R;
      row.mean_se += row.se[r] / R;
      row.mean_abs_error += std::abs(row.coef[r] - config.b1) / R;
    }
    table.rows.push_back(std::move(row));
  }
  const ConvergenceRow &a = table.rows[table.rows.size() - 2], &b = table.rows.back();
  for (int r = 0; r < config.replicates; ++r)
    table.max_finest_z = std::max(table.max_finest_z, std::abs(a.coef[r] - b.coef[r]) /
                                                          std::sqrt(a.se[r] * a.se[r] + b.se[r] * b.se[r]));
  return table;
}

} // namespace prefsamp
