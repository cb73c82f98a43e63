#pragma once

#include "prefsamp/inference.hpp"
#include "prefsamp/mesh.hpp"
#include "prefsamp/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace prefsamp {

enum class TemporalDesign { rigid_quadratic, independent_fields };

/// Generating model for synthetic preferentially sampled networks.
struct SimConfig {
  /// Candidate lattice: grid_n x grid_n cell centres over [0, extent]^2.
  int grid_n = 50;
  double extent = 10.0;
  /// Replaces the lattice when non-empty.
  PointList candidates;
  /// Random subset of the grid considered for selection (0: whole grid).
  int n_population = 200;
  /// Population members selected completely at random in year one.
  int n_initial = 100;
  int N = 30;
  TemporalDesign design = TemporalDesign::rigid_quadratic;

  std::array<double, 3> gamma{0.0, 0.0, 0.0};
  /// Fields multiplying 1, t and t^2 (rigid); beta[0] is redrawn each year
  /// in the independent design.
  std::array<MaternParams, 3> beta{MaternParams{2.0, 1.0}, MaternParams{2.0, 0.5}, MaternParams{2.0, 0.0}};
  double sd_b1 = 0.3, sd_b2 = 0.0, rho_b = 0.0;
  double sigma2_eps = 0.1;

  double alpha0 = -2.0; ///< selection intercept for years after the first
  double alpha1 = 0.0, alpha2 = 0.0;
  double alpha_ret = 3.0;
  double alpha_rep = 0.0;
  double repulsion_distance = 1.0;
  MaternParams beta_star0{2.0, 0.0}; ///< sd 0 switches the term off
  double sigma2_a = 0.0, rho_a = 0.5;
  double d_b = 0.0, d_beta = 0.0;
  Lag lag = Lag::reactive;

  std::uint64_t seed = 1;

  /// Throws ParameterError.
  void validate() const;
  PointList grid() const;
  DomainPolygon domain() const;
  bool operator==(const SimConfig &) const = default;
};

/// Realized latent field on the candidate grid.
struct SimField {
  PointList grid;
  Vector t_star;
  Matrix trend;       ///< n x N fixed-effect curve
  Matrix beta;        ///< n x N Matern contribution at each year
  Matrix b;           ///< n x N site effect b0 + b1 t
  Matrix mu;          ///< trend + beta + b
  Matrix y;           ///< mu plus measurement noise (every site-year)
  Vector beta_star0;  ///< per grid point
  Vector beta_star1;  ///< per year
  Matrix beta_lagged; ///< n x N shared Matern term at the lagged year
  Matrix b_lagged;    ///< n x N shared site term at the lagged year
};

/// Dense lower Cholesky factor of the Matern covariance on `points`. Throws
/// ParameterError when the covariance is not positive definite.
Matrix matern_cholesky(const PointList &points, const MaternParams &p);

SimField simulate_field(const SimConfig &config);

/// Full selection panel over the grid (n x N); rows outside the random
/// population stay zero. Year one selects n_initial population members
/// completely at random.
Eigen::MatrixXi simulate_panel(const SimConfig &config, const SimField &field,
                               std::vector<std::string> *warnings = nullptr);

/// Table of the sites selected at least once, with y where selected.
/// site_id is the 0-based grid index.
SiteTable simulate_selection(const SimConfig &config, const SimField &field,
                             std::vector<std::string> *warnings = nullptr);
SiteTable site_table_from_panel(const SimField &field, const Eigen::MatrixXi &panel);

/// Model spec matching the generating design.
JointModelSpec fit_spec(const SimConfig &config, int implementation);
/// Generating values as hyperparameters.
Hyperparameters true_hyperparameters(const SimConfig &config);

struct StudyOptions {
  MeshOptions mesh{0.8, 1.6, 25};
  OuterOptions outer{};
  InnerOptions inner{};
  PriorSettings priors{};
  int threads = 1;
  /// Pseudo-site spacing for Implementation 3; 0 uses the mesh vertices.
  double pseudo_spacing = 0.0;
  bool operator==(const StudyOptions &) const = default;
};

struct StudyRow {
  int replicate = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string message;
  bool converged = false;
  int evaluations = 0;
  Index n_sites = 0, n_obs = 0;
  double mean_lifetime = 0.0; ///< mean run length of consecutive operational years
  double d_beta = 0, d_beta_lo = 0, d_beta_hi = 0;
  double d_b = 0, d_b_lo = 0, d_b_hi = 0;
  bool d_beta_covered = false, d_b_covered = false;
  std::vector<double> p1_true, p1_hat; ///< network mean of mu per year
  std::vector<double> p2_true, p2_hat; ///< domain (grid) mean of trend + beta per year
  double p1_bias = 0, p2_bias = 0;     ///< mean absolute error over years
};

struct StudySummary {
  int replicates = 0, failures = 0;
  bool failed = false; ///< failure rate above 20%
  double d_beta_mean = 0, d_beta_bias = 0, d_beta_mse = 0, d_beta_coverage = 0, d_beta_coverage_se = 0;
  double d_b_mean = 0, d_b_bias = 0, d_b_mse = 0, d_b_coverage = 0, d_b_coverage_se = 0;
  double p1_bias = 0, p2_bias = 0;
  double mean_lifetime = 0;
};

struct StudyReport {
  SimConfig config;
  int implementation = 2;
  std::vector<StudyRow> rows;
  StudySummary summary;
};

/// Simulates and refits replicates with seeds derived from config.seed.
/// Replicate k only depends on (config, k), so studies with different
/// implementations pair up row by row.
StudyReport run_study(const SimConfig &config, int n_replicates, int implementation, const StudyOptions &opt = {});

/// One replicate of run_study.
StudyRow run_replicate(const SimConfig &config, int replicate, int implementation, const StudyOptions &opt,
                       const Mesh &mesh);

StudySummary summarize(const std::vector<StudyRow> &rows, const SimConfig &config, int implementation);

/// Logistic fits of an inhomogeneous Poisson pattern against pseudo sites
/// at decreasing spacings. Intensity exp(b0 + b1 z(s)) over [0, extent]^2
/// with z(s) = (cos(2 pi x / extent) + sin(2 pi y / extent)) / 2.
struct ConvergenceConfig {
  double extent = 10.0;
  double b0 = 1.5;
  double b1 = 1.0;
  int replicates = 10;
  std::uint64_t seed = 1;
  bool operator==(const ConvergenceConfig &) const = default;
};

double convergence_covariate(const ConvergenceConfig &c, const Point &p);

/// Poisson pattern of one replicate (thinning of a homogeneous process).
PointList simulate_ipp(const ConvergenceConfig &c, int replicate);

struct ConvergenceRow {
  double spacing = 0;
  Index n_pseudo = 0;
  std::vector<double> coef, se; ///< covariate coefficient per replicate
  double mean_coef = 0, mean_se = 0, mean_abs_error = 0;
};

struct ConvergenceTable {
  ConvergenceConfig config;
  std::vector<ConvergenceRow> rows; ///< in the order of the spacings
  /// Largest |coef_a - coef_b| / sqrt(se_a^2 + se_b^2) over replicates for
  /// the two finest spacings.
  double max_finest_z = 0;
};

ConvergenceTable convergence_check(const ConvergenceConfig &config, const std::vector<double> &spacings);

/// Mean length of maximal runs of consecutive ones per row.
double mean_run_length(const Eigen::MatrixXi &panel);

} // namespace prefsamp
