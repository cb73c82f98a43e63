#include "prefsamp/cli.hpp"

#include "prefsamp/error.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <ostream>

namespace prefsamp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join(const fs::path &dir, const std::string &name) { return (dir / name).string(); }

json hyper_json(const Hyperparameters &h) {
  json z = json::array();
  for (const auto &m : h.zeta)
    z.push_back({{"range", m.range}, {"sd", m.sd}});
  return {{"sigma2_eps", h.sigma2_eps},
          {"zeta", z},
          {"sd_b1", h.sd_b1},
          {"sd_b2", h.sd_b2},
          {"rho_b", h.rho_b},
          {"zeta_R", {{"range", h.zeta_R.range}, {"sd", h.zeta_R.sd}}},
          {"rho_a", h.rho_a},
          {"sigma2_a", h.sigma2_a},
          {"d_b", h.d_b},
          {"d_beta", h.d_beta}};
}

std::string matrix_csv(const std::string &schema, const std::string &first, const Matrix &m) {
  std::string s = version_line(schema) + first;
  for (Index c = 0; c < m.cols(); ++c)
    s += ",c" + std::to_string(c);
  s += "\n";
  for (Index r = 0; r < m.rows(); ++r) {
    s += std::to_string(r);
    for (Index c = 0; c < m.cols(); ++c)
      s += "," + format_double(m(r, c));
    s += "\n";
  }
  return s;
}

Matrix read_matrix(const std::string &path, const std::string &schema) {
  const CsvTable t = read_csv(path, schema);
  if (t.header.empty())
    throw DataError(path + ": empty header");
  Matrix m(static_cast<Index>(t.rows.size()), static_cast<Index>(t.header.size() - 1));
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t c = 1; c < t.header.size(); ++c)
      m(static_cast<Index>(r), static_cast<Index>(c - 1)) = t.number(r, c);
  return m;
}

std::string output_override;

RunConfig load_run_config(const std::string &path) {
  RunConfig c = load_config(path);
  if (!output_override.empty())
    c.output = fs::absolute(output_override).lexically_normal().string();
  return c;
}

std::string summary_cells(const DrawSummary &s) {
  return format_double(s.mean) + "," + format_double(s.lower) + "," + format_double(s.upper);
}

DomainPolygon scaled(const DomainPolygon &p, const PreprocessConstants &k) {
  DomainPolygon out;
  for (const auto &q : p.boundary)
    out.boundary.push_back(k.scale(q.x(), q.y()));
  for (const auto &h : p.holes) {
    out.holes.emplace_back();
    for (const auto &q : h)
      out.holes.back().push_back(k.scale(q.x(), q.y()));
  }
  out.validate();
  return out;
}

// Bounding box of the sites padded by a tenth of its larger side.
DomainPolygon site_box(const SiteTable &s) {
  Point lo = s.location.front(), hi = lo;
  for (const auto &p : s.location) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double pad = std::max(0.1 * (hi - lo).maxCoeff(), 1e-3);
  return rectangle_domain(lo.x() - pad, lo.y() - pad, hi.x() + pad, hi.y() + pad);
}

// Population of the reported mean trajectory: operational sites in the year
// (with their b effects) or a lattice over the domain.
Vector population_draws(const AssembledModel &m, const PosteriorEnsemble &ens, const FitBundle &b, int year) {
  const PreprocessConstants &k = *b.config.constants;
  if (b.config.population == PopulationMode::network) {
    std::vector<Index> rows;
    for (Index i = 0; i < m.sites.num_sites(); ++i)
      if (m.sites.kind[i] == SiteKind::observed && m.sites.r(i, year))
        rows.push_back(i);
    if (rows.empty())
      return Vector::Constant(ens.size(), std::nan(""));
    const Matrix eta = m.site_prediction_matrix(rows, year) * ens.draws;
    return eta.unaryExpr([&](double y) { return k.back_transform(y); }).colwise().mean().transpose();
  }
  const double h = b.config.mesh.max_edge / 2;
  const PointList pts = hex_lattice(b.domain, h);
  const Matrix eta = m.prediction_matrix(pts, year) * ens.draws;
  return eta.unaryExpr([&](double y) { return k.back_transform(y); }).colwise().mean().transpose();
}

std::string population_csv(const AssembledModel &m, const FitBundle &b) {
  std::string s = version_line("population_mean") + "year,population,mean,lower,upper\n";
  const std::string pop = b.config.population == PopulationMode::network ? "network" : "domain";
  for (int j = 0; j < m.sites.num_years(); ++j) {
    const Vector v = population_draws(m, b.ensemble, b, j);
    s += std::to_string(b.years[j]) + "," + pop + "," +
         (std::isnan(v(0)) ? std::string("nan,nan,nan") : summary_cells(summarize_draws(v))) + "\n";
  }
  return s;
}

std::string theta_csv(const FitResult &f) {
  std::string s = version_line("theta") + "name,estimate,se,lower,upper\n";
  for (std::size_t i = 0; i < f.theta_names.size(); ++i) {
    const Index k = static_cast<Index>(i);
    const double se = f.theta_cov.size() ? std::sqrt(f.theta_cov(k, k)) : std::nan("");
    const auto [lo, hi] = f.theta_cov.size() ? f.interval(f.theta_names[i])
                                             : std::pair<double, double>{std::nan(""), std::nan("")};
    s += f.theta_names[i] + "," + format_double(f.theta(k)) + "," + format_double(se) + "," + format_double(lo) +
         "," + format_double(hi) + "\n";
  }
  return s;
}

int cmd_fit(const std::string &path, std::ostream &out, std::ostream &err) {
  RunConfig cfg = load_run_config(path);
  if (cfg.sites.empty() || cfg.observations.empty())
    throw ConfigError(path + ": [data]", "fit needs sites and observations");
  PreprocessOptions po;
  po.min_capture = cfg.min_capture;
  PreprocessResult pre = preprocess(read_sites(cfg.resolve(cfg.sites)), read_observations(cfg.resolve(cfg.observations)), po);
  for (const auto &w : pre.warnings)
    err << "warning: " << w << "\n";

  FitBundle b;
  b.years = pre.years;
  b.domain = cfg.domain.empty() ? site_box(pre.sites) : scaled(read_polygon(cfg.resolve(cfg.domain)), pre.constants);
  std::vector<DomainPolygon> exclusions;
  if (!cfg.exclusions.empty())
    for (const auto &p : read_polygons(cfg.resolve(cfg.exclusions)))
      exclusions.push_back(scaled(p, pre.constants));
  const Mesh mesh = build_mesh(b.domain, cfg.mesh);
  if (cfg.spec.implementation == 3) {
    long next = 0;
    for (long id : pre.sites.site_id)
      next = std::max(next, id + 1);
    pre.sites.add_pseudo_sites(cfg.pseudo_spacing > 0 ? generate_pseudosites(b.domain, cfg.pseudo_spacing, exclusions)
                                                      : generate_pseudosites(mesh, exclusions),
                               next);
  }
  const AssembledModel m = assemble(cfg.spec, pre.sites, mesh, cfg.priors);
  err << "assembled " << m.n_latent() << " latent entries, " << m.n_obs() << " observations, " << m.n_sel()
      << " selection rows, " << m.codec.size() << " hyperparameters\n";
  b.fit = optimize_hyperparameters(m, Hyperparameters{}, cfg.outer, cfg.inner);
  err << "optimizer " << (b.fit.converged ? "converged" : "did not converge") << " after " << b.fit.evaluations
      << " evaluations, log marginal " << b.fit.log_ml << "\n";
  b.ensemble = sample_posterior(m, b.fit, cfg.draws, derive_seed(cfg.seed, 1), cfg.threads);

  for (auto *p : {&cfg.sites, &cfg.observations, &cfg.domain, &cfg.exclusions})
    if (!p->empty())
      *p = fs::absolute(cfg.resolve(*p)).lexically_normal().string();
  cfg.constants = pre.constants;
  const fs::path dir = fs::path(cfg.resolve(cfg.output));
  cfg.output = fs::absolute(dir).lexically_normal().string();
  b.config = cfg;
  b.sites = m.sites;
  write_fit_dir(dir.string(), b);
  write_file_atomic(join(dir, "population_mean.csv"), population_csv(m, b));
  out << "wrote " << dir.string() << "\n";
  return b.fit.converged ? exit_ok : exit_not_converged;
}

int cmd_simulate(const std::string &path, std::ostream &out, std::ostream &err) {
  const RunConfig cfg = load_run_config(path);
  std::vector<std::string> warnings;
  const SimField f = simulate_field(cfg.sim);
  const Eigen::MatrixXi panel = simulate_panel(cfg.sim, f, &warnings);
  for (const auto &w : warnings)
    err << "warning: " << w << "\n";
  std::vector<RawSite> sites;
  std::vector<RawObservation> obs;
  for (Index i = 0; i < panel.rows(); ++i) {
    if (panel.row(i).sum() == 0)
      continue;
    sites.push_back({static_cast<long>(i), f.grid[i].x(), f.grid[i].y()});
    for (int j = 0; j < cfg.sim.N; ++j)
      if (panel(i, j))
        obs.push_back({static_cast<long>(i), j + 1, std::exp(f.y(i, j)), true, 1.0});
  }
  std::string truth = version_line("truth") + "grid_index,x,y,year,mu,trend_beta\n";
  for (Index i = 0; i < static_cast<Index>(f.grid.size()); ++i)
    for (int j = 0; j < cfg.sim.N; ++j)
      truth += std::to_string(i) + "," + format_double(f.grid[i].x()) + "," + format_double(f.grid[i].y()) + "," +
               std::to_string(j + 1) + "," + format_double(f.mu(i, j)) + "," +
               format_double(f.trend(i, j) + f.beta(i, j)) + "\n";
  const fs::path dir(cfg.resolve(cfg.output));
  write_file_atomic(join(dir, "sites.csv"), sites_csv(sites));
  write_file_atomic(join(dir, "observations.csv"), observations_csv(obs));
  write_file_atomic(join(dir, "truth.csv"), truth);
  out << "wrote " << sites.size() << " sites and " << obs.size() << " observations to " << dir.string() << "\n";
  return exit_ok;
}

int cmd_study(const std::string &path, std::ostream &out, std::ostream &err) {
  const RunConfig cfg = load_run_config(path);
  const StudyReport r = run_study(cfg.sim, cfg.replicates, cfg.study_implementation, cfg.study_options());
  const fs::path dir(cfg.resolve(cfg.output));
  write_file_atomic(join(dir, "study.csv"), study_csv(r));
  write_file_atomic(join(dir, "study_summary.csv"), study_summary_csv(r));
  if (r.summary.failures)
    err << "warning: " << r.summary.failures << " of " << r.summary.replicates << " replicates failed\n";
  out << "d_beta mean " << r.summary.d_beta_mean << ", coverage " << r.summary.d_beta_coverage << "\n";
  out << "wrote " << dir.string() << "\n";
  return r.summary.failed ? exit_error : exit_ok;
}

int cmd_predict(const std::string &dir, double spacing, std::ostream &out, std::ostream &) {
  if (!(spacing > 0))
    throw ParameterError("grid spacing must be positive");
  const FitBundle b = read_fit_dir(dir);
  const AssembledModel m = rebuild_model(b);
  const PreprocessConstants &k = *b.config.constants;
  const auto [lo, hi] = b.domain.bounds();
  PointList pts;
  for (double y = lo.y() + spacing / 2; y < hi.y(); y += spacing)
    for (double x = lo.x() + spacing / 2; x < hi.x(); x += spacing)
      if (b.domain.contains(Point(x, y)))
        pts.emplace_back(x, y);
  if (pts.empty())
    throw DataError("grid spacing " + format_double(spacing) + " leaves no point inside the domain");
  std::string s = version_line("prediction") + "year,x,y,easting,northing,mean,sd,value_mean\n";
  for (int j = 0; j < m.sites.num_years(); ++j) {
    const Matrix eta = m.prediction_matrix(pts, j) * b.ensemble.draws;
    const Vector mean = eta.rowwise().mean();
    const Vector sd = ((eta.colwise() - mean).array().square().rowwise().sum() / std::max<Index>(eta.cols() - 1, 1))
                          .sqrt()
                          .matrix();
    const Vector value = eta.unaryExpr([&](double y) { return k.back_transform(y); }).rowwise().mean();
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Index r = static_cast<Index>(i);
      s += std::to_string(b.years[j]) + "," + format_double(pts[i].x()) + "," + format_double(pts[i].y()) + "," +
           format_double(pts[i].x() * k.coord_scale) + "," + format_double(pts[i].y() * k.coord_scale) + "," +
           format_double(mean(r)) + "," + format_double(sd(r)) + "," + format_double(value(r)) + "\n";
    }
  }
  write_file_atomic(join(dir, "prediction.csv"), s);
  out << "wrote " << join(dir, "prediction.csv") << " (" << pts.size() << " points per year)\n";
  return exit_ok;
}

int cmd_exposure(const std::string &dir, const std::string &raster_path, double threshold, bool scaled_coords,
                 const std::string &mode, std::ostream &out, std::ostream &err) {
  const FitBundle b = read_fit_dir(dir);
  const AssembledModel m = rebuild_model(b);
  const PreprocessConstants &k = *b.config.constants;
  RasterCounts rc = read_raster(raster_path);
  if (!scaled_coords)
    for (auto &p : rc.centroids)
      p = k.scale(p.x(), p.y());
  const PopulationRaster raster = PopulationRaster::from_counts(rc.centroids, rc.counts);
  if (std::abs(rc.counts.sum() - 1.0) > 1e-12)
    err << "raster weights renormalized by factor " << format_double(raster.renormalization) << "\n";
  ExposureOptions opt;
  opt.b_mode = mode == "exclude" ? BEffectMode::exclude : BEffectMode::fresh_draws;
  opt.seed = derive_seed(b.config.seed, 2);

  std::string series = version_line("exposure") +
                       "year,b_mode,threshold,mean,mean_lower,mean_upper,population_exceedance,"
                       "population_exceedance_lower,population_exceedance_upper,area_exceedance,"
                       "area_exceedance_lower,area_exceedance_upper\n";
  std::string cells = version_line("exceedance_cells") + "year,x,y,probability\n";
  for (int j = 0; j < m.sites.num_years(); ++j) {
    const Matrix v = cell_values(m, b.ensemble, m.prediction_matrix(raster.centroids, j), j, k, opt);
    const PopulationMean pm = population_mean(v, raster);
    const Exceedance e = exceedance(v, raster, threshold);
    series += std::to_string(b.years[j]) + "," + mode + "," + format_double(threshold) + "," +
              summary_cells(pm.summary) + "," + summary_cells(e.population) + "," + summary_cells(e.area) + "\n";
    for (Index i = 0; i < raster.size(); ++i)
      cells += std::to_string(b.years[j]) + "," + format_double(rc.centroids[i].x()) + "," +
               format_double(rc.centroids[i].y()) + "," + format_double(e.cell_probability(i)) + "\n";
  }
  write_file_atomic(join(dir, "exposure.csv"), series);
  write_file_atomic(join(dir, "exceedance_cells.csv"), cells);
  out << "wrote " << join(dir, "exposure.csv") << " and " << join(dir, "exceedance_cells.csv") << "\n";
  return exit_ok;
}

int cmd_convergence(const std::string &path, const std::vector<double> &spacings, std::ostream &out,
                    std::ostream &) {
  const RunConfig cfg = load_run_config(path);
  const std::vector<double> h = spacings.empty() ? cfg.spacings : spacings;
  for (double x : h)
    if (!(x > 0))
      throw ParameterError("spacings must be positive");
  const ConvergenceTable t = convergence_check(cfg.convergence, h);
  const fs::path dir(cfg.resolve(cfg.output));
  write_file_atomic(join(dir, "convergence.csv"), convergence_csv(t));
  out << "spacing  n_pseudo  mean_coef  mean_se  mean_abs_error\n";
  for (const auto &r : t.rows)
    out << r.spacing << "  " << r.n_pseudo << "  " << r.mean_coef << "  " << r.mean_se << "  " << r.mean_abs_error
        << "\n";
  out << "max z (two finest spacings) " << t.max_finest_z << "\n";
  return exit_ok;
}

} // namespace

void write_fit_dir(const std::string &dir, const FitBundle &b) {
  const fs::path d(dir);
  save_config(b.config, join(d, "config.ini"));
  write_file_atomic(join(d, "domain.txt"), polygon_text(b.domain));
  write_file_atomic(join(d, "site_table.csv"), site_table_csv(b.sites));
  json j{{"theta_names", b.fit.theta_names},
         {"theta", std::vector<double>(b.fit.theta.data(), b.fit.theta.data() + b.fit.theta.size())},
         {"hyperparameters", hyper_json(b.fit.theta_hat)},
         {"log_ml", b.fit.log_ml},
         {"objective", b.fit.objective},
         {"converged", b.fit.converged},
         {"evaluations", b.fit.evaluations},
         {"years", b.years},
         {"ensemble_seed", b.ensemble.seed}};
  json cov = json::array();
  for (Index r = 0; r < b.fit.theta_cov.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < b.fit.theta_cov.cols(); ++c)
      row.push_back(b.fit.theta_cov(r, c));
    cov.push_back(row);
  }
  j["theta_cov"] = cov;
  json trace = json::array();
  for (const auto &t : b.fit.trace)
    trace.push_back({t.evaluation, t.value, t.best});
  j["trace"] = trace;
  write_file_atomic(join(d, "fit.json"), j.dump(2) + "\n");
  write_file_atomic(join(d, "theta.csv"), theta_csv(b.fit));
  write_file_atomic(join(d, "x_mode.csv"), matrix_csv("x_mode", "row", b.fit.x_mode));
  write_file_atomic(join(d, "ensemble.csv"), matrix_csv("ensemble", "row", b.ensemble.draws));
}

FitBundle read_fit_dir(const std::string &dir) {
  const fs::path d(dir);
  if (!fs::is_directory(d))
    throw DataError(dir + " is not a fit directory");
  FitBundle b;
  b.config = load_config(join(d, "config.ini"));
  if (!b.config.constants)
    throw ConfigError(join(d, "config.ini") + ": [constants]",
                      "stored preprocessing constants are required for back-transformation");
  b.domain = read_polygon(join(d, "domain.txt"));
  b.sites = read_site_table(join(d, "site_table.csv"));
  json j;
  try {
    j = json::parse(read_file(join(d, "fit.json")));
    b.fit.theta_names = j.at("theta_names").get<std::vector<std::string>>();
    const auto theta = j.at("theta").get<std::vector<double>>();
    b.fit.theta = Eigen::Map<const Vector>(theta.data(), static_cast<Index>(theta.size()));
    b.fit.log_ml = j.at("log_ml").get<double>();
    b.fit.objective = j.at("objective").get<double>();
    b.fit.converged = j.at("converged").get<bool>();
    b.fit.evaluations = j.at("evaluations").get<int>();
    b.years = j.at("years").get<std::vector<int>>();
    b.ensemble.seed = j.at("ensemble_seed").get<std::uint64_t>();
    const auto &cov = j.at("theta_cov");
    if (!cov.empty()) {
      b.fit.theta_cov.resize(static_cast<Index>(cov.size()), static_cast<Index>(cov.size()));
      for (std::size_t r = 0; r < cov.size(); ++r)
        for (std::size_t c = 0; c < cov.size(); ++c)
          b.fit.theta_cov(static_cast<Index>(r), static_cast<Index>(c)) = cov[r][c].get<double>();
    }
  } catch (const json::exception &e) {
    throw DataError(join(d, "fit.json") + ": " + e.what());
  }
  if (static_cast<int>(b.years.size()) != b.sites.num_years())
    throw DataError(dir + ": years in fit.json do not match the site table");
  const ThetaCodec codec(b.config.spec);
  if (codec.names() != b.fit.theta_names)
    throw DataError(dir + ": hyperparameter names do not match the configured model");
  b.fit.theta_hat = codec.decode(b.fit.theta);
  b.fit.x_mode = read_matrix(join(d, "x_mode.csv"), "x_mode").col(0);
  b.ensemble.draws = read_matrix(join(d, "ensemble.csv"), "ensemble");
  b.ensemble.theta = b.fit.theta_hat;
  return b;
}

AssembledModel rebuild_model(const FitBundle &b) {
  AssembledModel m = assemble(b.config.spec, b.sites, build_mesh(b.domain, b.config.mesh), b.config.priors);
  if (m.n_latent() != b.ensemble.draws.rows() || m.n_latent() != b.fit.x_mode.size())
    throw DataError("stored ensemble has " + std::to_string(b.ensemble.draws.rows()) +
                    " latent entries but the rebuilt model has " + std::to_string(m.n_latent()));
  return m;
}

std::string study_csv(const StudyReport &r) {
  std::string s = version_line("study") +
                  "replicate,seed,ok,converged,evaluations,n_sites,n_obs,mean_lifetime,d_beta,d_beta_lo,d_beta_hi,"
                  "d_beta_covered,d_b,d_b_lo,d_b_hi,d_b_covered,p1_bias,p2_bias,p1_true,p1_hat,p2_true,p2_hat,"
                  "message\n";
  auto series = [](const std::vector<double> &v) {
    std::string out;
    for (std::size_t k = 0; k < v.size(); ++k)
      out += (k ? ";" : "") + format_double(v[k]);
    return out;
  };
  for (const auto &row : r.rows) {
    std::string msg = row.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    s += std::to_string(row.replicate) + "," + std::to_string(row.seed) + "," + (row.ok ? "1" : "0") + "," +
         (row.converged ? "1" : "0") + "," + std::to_string(row.evaluations) + "," + std::to_string(row.n_sites) +
         "," + std::to_string(row.n_obs) + "," + format_double(row.mean_lifetime) + "," +
         format_double(row.d_beta) + "," + format_double(row.d_beta_lo) + "," + format_double(row.d_beta_hi) + "," +
         (row.d_beta_covered ? "1" : "0") + "," + format_double(row.d_b) + "," + format_double(row.d_b_lo) + "," +
         format_double(row.d_b_hi) + "," + (row.d_b_covered ? "1" : "0") + "," + format_double(row.p1_bias) + "," +
         format_double(row.p2_bias) + "," + series(row.p1_true) + "," + series(row.p1_hat) + "," +
         series(row.p2_true) + "," + series(row.p2_hat) + "," + msg + "\n";
  }
  return s;
}

std::string study_summary_csv(const StudyReport &r) {
  const StudySummary &m = r.summary;
  std::string s = version_line("study_summary") + "key,value\n";
  auto add = [&](const std::string &k, const std::string &v) { s += k + "," + v + "\n"; };
  add("implementation", std::to_string(r.implementation));
  add("seed", std::to_string(r.config.seed));
  add("replicates", std::to_string(m.replicates));
  add("failures", std::to_string(m.failures));
  add("failed", m.failed ? "1" : "0");
  add("d_beta_true", format_double(r.config.d_beta));
  add("d_beta_mean", format_double(m.d_beta_mean));
  add("d_beta_bias", format_double(m.d_beta_bias));
  add("d_beta_mse", format_double(m.d_beta_mse));
  add("d_beta_coverage", format_double(m.d_beta_coverage));
  add("d_beta_coverage_se", format_double(m.d_beta_coverage_se));
  add("d_b_true", format_double(r.config.d_b));
  add("d_b_mean", format_double(m.d_b_mean));
  add("d_b_bias", format_double(m.d_b_bias));
  add("d_b_mse", format_double(m.d_b_mse));
  add("d_b_coverage", format_double(m.d_b_coverage));
  add("d_b_coverage_se", format_double(m.d_b_coverage_se));
  add("p1_bias", format_double(m.p1_bias));
  add("p2_bias", format_double(m.p2_bias));
  add("mean_lifetime", format_double(m.mean_lifetime));
  return s;
}

std::string convergence_csv(const ConvergenceTable &t) {
  std::string s = version_line("convergence") + "spacing,n_pseudo,mean_coef,mean_se,mean_abs_error,true_coef\n";
  for (const auto &r : t.rows)
    s += format_double(r.spacing) + "," + std::to_string(r.n_pseudo) + "," + format_double(r.mean_coef) + "," +
         format_double(r.mean_se) + "," + format_double(r.mean_abs_error) + "," + format_double(t.config.b1) + "\n";
  s += "# max_finest_z " + format_double(t.max_finest_z) + "\n";
  return s;
}

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  CLI::App app{"Preferential sampling models for monitoring networks"};
  app.require_subcommand(1);
  std::string config, dir, raster, b_mode = "fresh";
  double grid = 0, threshold = 0;
  bool scaled_coords = false;
  std::vector<double> spacings;
  output_override.clear();

  auto *fit = app.add_subcommand("fit", "Fit the configured model; writes the fit directory");
  fit->add_option("config", config, "run configuration")->required();
  fit->add_option("-o,--output", output_override, "output directory (overrides the config)");
  auto *sim = app.add_subcommand("simulate", "Simulate a preferentially sampled network");
  sim->add_option("config", config, "run configuration")->required();
  sim->add_option("-o,--output", output_override, "output directory (overrides the config)");
  auto *study = app.add_subcommand("study", "Simulation study: simulate and refit replicates");
  study->add_option("config", config, "run configuration")->required();
  study->add_option("-o,--output", output_override, "output directory (overrides the config)");
  auto *predict = app.add_subcommand("predict", "Per-year field mean and sd on a grid");
  predict->add_option("fit-dir", dir, "output directory of fit")->required();
  predict->add_option("--grid", grid, "grid spacing in scaled units")->required();
  auto *expo = app.add_subcommand("exposure", "Population exposure summaries");
  expo->add_option("fit-dir", dir, "output directory of fit")->required();
  expo->add_option("--raster", raster, "ESRI ASCII grid or x,y,weight CSV")->required();
  expo->add_option("--threshold", threshold, "exceedance threshold in the data units")->required();
  expo->add_option("--b-mode", b_mode, "site effects for cells")->check(CLI::IsMember({"fresh", "exclude"}));
  expo->add_flag("--scaled", scaled_coords, "raster coordinates are already in the scaled frame");
  auto *conv = app.add_subcommand("convergence-check", "Logistic versus Poisson convergence table");
  conv->add_option("config", config, "run configuration")->required();
  conv->add_option("-o,--output", output_override, "output directory (overrides the config)");
  conv->add_option("--spacings", spacings, "pseudo-site spacings, coarse to fine")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return exit_ok;
    }
    err << "error: " << e.what() << "\n" << app.help();
    return exit_usage;
  }

  try {
    if (*fit)
      return cmd_fit(config, out, err);
    if (*sim)
      return cmd_simulate(config, out, err);
    if (*study)
      return cmd_study(config, out, err);
    if (*predict)
      return cmd_predict(dir, grid, out, err);
    if (*expo)
      return cmd_exposure(dir, raster, threshold, scaled_coords, b_mode, out, err);
    if (*conv)
      return cmd_convergence(config, spacings, out, err);
  } catch (const ConfigError &e) {
    err << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return exit_error;
  }
  return exit_usage;
}

} // namespace prefsamp
