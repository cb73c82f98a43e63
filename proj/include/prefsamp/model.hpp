#pragma once

#include "prefsamp/mesh.hpp"
#include "prefsamp/priors.hpp"
#include "prefsamp/spde.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace prefsamp {

enum class SiteKind { observed, pseudo };

/// Candidate locations with their selection panel and responses.
/// Sites are rows, years are columns (year index j is 0-based here).
struct SiteTable {
  std::vector<long> site_id;
  PointList location;
  std::vector<SiteKind> kind;
  Vector t_star;     ///< scaled time of each year, length N
  Eigen::MatrixXi r; ///< n x N selection indicators
  Matrix y;          ///< n x N responses, NaN where missing
  /// Optional site-level covariates entering the selection predictor (n x k).
  Matrix covariates;

  Index num_sites() const { return static_cast<Index>(location.size()); }
  int num_years() const { return static_cast<int>(t_star.size()); }
  bool has_y(Index i, int j) const { return !std::isnan(y(i, j)); }
  std::vector<Index> observed_sites() const;

  /// Throws DataError on inconsistent shapes, pseudo sites with data, or
  /// observed sites never selected; returns warnings (re-installation after
  /// removal, observed site-years without a response).
  std::vector<std::string> validate() const;

  /// Appends pseudo sites (all r = 0, no response).
  void add_pseudo_sites(const PointList &points, long first_id);
};

/// Evenly spaced t* on [0, 1].
Vector unit_times(int years);

enum class Lag { reactive, concurrent };

/// Year index of the source field for selection at year j.
inline int lag_year(Lag lag, int j) { return lag == Lag::reactive && j > 0 ? j - 1 : j; }

enum class EffectKind { fixed_coeff, matern_field, iid_bivariate, ar1 };

/// Latent effect declaration.
struct EffectSpec {
  std::string name;
  EffectKind kind;
  std::vector<std::string> hyper; ///< theta entries parameterizing the block
  bool sum_to_zero = false;
  std::string support; ///< "vertices", "vertices x years", "sites", "years", "fixed"
};

enum class TimeWeight { one, t, t2 };

/// Scaled copy of shared effects into the selection predictor.
struct CopySpec {
  std::vector<std::string> sources;
  std::vector<TimeWeight> weights; ///< evaluated at the lagged year
  Lag lag = Lag::reactive;
  std::string scale_param; ///< "d_b" or "d_beta"
  bool operator==(const CopySpec &) const = default;
};

/// Which terms of the observation and selection predictors are present.
struct JointModelSpec {
  int implementation = 2; ///< 1, 2 or 3

  bool observation = true;
  bool gamma1 = true, gamma2 = true;
  bool beta0 = true, beta1 = true, beta2 = true;
  /// Independent beta0 field per year (shared hyperparameters).
  bool beta0_per_year = false;
  bool b_intercept = true, b_slope = true;

  bool selection = true;
  /// First year (1-based) contributing selection rows.
  int first_selection_year = 1;
  bool alpha1 = true, alpha2 = true;
  bool retention = true, repulsion = true;
  double repulsion_distance = 1.0;
  bool beta_star0 = true, beta_star1 = true;
  bool share_b = true, share_beta = true;
  Lag lag = Lag::reactive;
  /// Number of site covariate columns used in the selection predictor.
  int selection_covariates = 0;
  /// Overrides the copy terms derived from the toggles when non-empty.
  std::vector<CopySpec> copies;

  void validate() const;
  /// d_b and d_beta are free (Implementations 2 and 3).
  bool shares() const { return implementation != 1 && selection; }

  bool operator==(const JointModelSpec &) const = default;
};

/// Natural-scale hyperparameters. Entries unused by a spec are ignored.
struct Hyperparameters {
  double sigma2_eps = 0.1;
  std::array<MaternParams, 3> zeta{MaternParams{1.0, 1.0}, MaternParams{1.0, 0.5}, MaternParams{1.0, 0.5}};
  double sd_b1 = 0.3, sd_b2 = 0.3, rho_b = 0.0;
  MaternParams zeta_R{1.0, 0.5};
  double rho_a = 0.5, sigma2_a = 0.25;
  double d_b = 0.0, d_beta = 0.0;
};

enum class ThetaTransform { log, corr_z, identity };

/// Unconstrained hyperparameter vector for a given spec.
class ThetaCodec {
public:
  struct Entry {
    std::string name;
    ThetaTransform transform;
  };

  ThetaCodec() = default;
  explicit ThetaCodec(const JointModelSpec &spec);

  Index size() const { return static_cast<Index>(entries_.size()); }
  const std::vector<Entry> &entries() const { return entries_; }
  std::vector<std::string> names() const;
  /// -1 when absent.
  Index find(const std::string &name) const;

  Vector encode(const Hyperparameters &h) const;
  /// Entries absent from the codec keep their values from `base`.
  Hyperparameters decode(const Vector &theta, const Hyperparameters &base = {}) const;

  /// Log prior density of theta in the internal coordinates.
  double log_prior(const Vector &theta, const PriorSettings &s) const;

private:
  std::vector<Entry> entries_;
  JointModelSpec spec_;
};

/// Contiguous range of the latent vector.
struct Block {
  std::string name;
  EffectKind kind;
  Index offset = 0;
  Index size = 0;
};

struct Layout {
  std::vector<Block> blocks;
  std::vector<std::string> fixed_names; ///< order within the "fixed" block
  Index size = 0;
  Index n_vertices = 0;

  const Block *find(const std::string &name) const;
  const Block &at(const std::string &name) const;
  /// Latent index of a fixed effect, -1 when absent.
  Index fixed(const std::string &name) const;
  std::string to_text() const;
};

/// One Bernoulli contribution of the selection likelihood.
struct LedgerEntry {
  Index site;
  int year; ///< 0-based
  int outcome;
  bool operator==(const LedgerEntry &) const = default;
};

/// I[i][j]: another site within distance c (strict) was selected at year
/// j - 1. Year indices are 0-based and year 0 gives all zeros.
std::vector<int> repulsion_covariate(const SiteTable &sites, int year, double c);

/// Bernoulli contributions for Implementation 1/2 (all observed site-years)
/// or 3 (ones, placement zeros at pseudo sites, retention zeros), starting
/// at `first_year` (0-based).
std::vector<LedgerEntry> zero_ledger(const SiteTable &sites, int implementation, int first_year = 0);

/// Assembled latent Gaussian model.
struct AssembledModel {
  JointModelSpec spec;
  PriorSettings priors;
  Layout layout;
  ThetaCodec codec;
  std::vector<EffectSpec> effects;
  std::vector<CopySpec> copies;

  Mesh mesh;
  FemMatrices fem;
  SpMat GCG; ///< G C^{-1} G

  SiteTable sites;
  std::vector<Index> b_site; ///< site -> b pair index, -1 when none

  SpMat A_obs;
  SpMat AtA_obs; ///< A_obs^T A_obs
  Vector y;
  std::vector<std::pair<Index, int>> obs_index;

  std::vector<LedgerEntry> ledger;
  Vector r_sel;
  SpMat A_sel_fixed, A_sel_b, A_sel_beta;

  SpMat constraints;
  std::vector<std::string> constraint_names;
  Matrix CCt; ///< constraints * constraints^T

  Index n_latent() const { return layout.size; }
  Index n_obs() const { return A_obs.rows(); }
  Index n_sel() const { return A_sel_fixed.rows(); }

  SpMat Q_prior(const Hyperparameters &h) const;
  SpMat A_sel(const Hyperparameters &h) const;

  /// Rows evaluate mu at `points` in year j (0-based), without b effects.
  SpMat prediction_matrix(const PointList &points, int year) const;
  /// mu at table sites in year j, b effects included where they exist.
  SpMat site_prediction_matrix(const std::vector<Index> &site_rows, int year) const;
};

AssembledModel assemble(const JointModelSpec &spec, const SiteTable &sites, const Mesh &mesh,
                        const PriorSettings &priors = {});

struct LinearPredictors {
  Vector eta; ///< per observation
  Vector nu;  ///< per ledger entry
};

LinearPredictors linear_predictors(const AssembledModel &m, const Hyperparameters &h, const Vector &x);

/// A model symbol and the single component representing it.
struct SymbolBinding {
  std::string symbol;
  std::string component; ///< "fixed:<name>", "block:<name>", "theta:<names>", ...
};

/// Symbols of the joint observation/selection model and their components.
std::vector<SymbolBinding> symbol_registry(const AssembledModel &m);

/// Every component of the assembled model (fixed effects, blocks, theta
/// entries, covariates, data inputs) for orphan checks.
std::vector<std::string> model_components(const AssembledModel &m);

/// AR1 precision with stationary marginal variance sigma2 and lag-one
/// correlation rho.
SpMat ar1_precision(int n, double rho, double sigma2);

} // namespace prefsamp
