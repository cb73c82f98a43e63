#pragma once

#include "prefsamp/model.hpp"

#include <Eigen/SparseCholesky>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>

namespace prefsamp {

struct InnerOptions {
  int max_iter = 50;
  double grad_tol = 1e-8; ///< relative to 1 + |gradient at x0|
  int max_halvings = 30;
  bool operator==(const InnerOptions &) const = default;
};

struct OuterOptions {
  double spread_tol = 1e-6;
  int max_evaluations = 2000;
  double initial_step = 0.5;
  int restarts = 1;
  /// Step of the finite-difference Hessian used for theta standard errors.
  double hessian_step = 1e-2;
  bool compute_covariance = true;
  bool operator==(const OuterOptions &) const = default;
};

/// Inner mode of the latent field for fixed hyperparameters.
struct InnerResult {
  Vector x;
  SpMat H; ///< posterior precision at the mode
  int iterations = 0;
  double objective = 0.0; ///< x-dependent part of the negative log joint
  double gradient_norm = 0.0;
  bool converged = false;
  std::vector<double> trace; ///< objective after each Newton step
};

/// Sparse LDL^T with AMD ordering; reuses its symbolic analysis while the
/// sparsity pattern stays the same.
class SparseFactor {
public:
  /// Throws FactorizationError (with `context`) unless the matrix is SPD.
  void factorize(const SpMat &A, const std::string &context);
  Vector solve(const Vector &b) const { return ldlt_.solve(b); }
  Matrix solve(const Matrix &b) const { return ldlt_.solve(b); }
  double log_det() const;
  /// w = P^T L^{-T} D^{-1/2} z, distributed N(0, A^{-1}) for z ~ N(0, I).
  Vector sample_transform(const Vector &z) const;

private:
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
  std::vector<int> outer_, inner_;
  bool analyzed_ = false;
};

/// Scratch state for repeated Laplace evaluations (one per thread).
struct LaplaceWorkspace {
  SparseFactor h;
  std::optional<Vector> warm; ///< previous inner mode
};

/// Negative log joint density -log p(x, y, r, theta) in internal theta
/// coordinates, up to the constant ((n - k) + n_obs) / 2 log(2 pi)
/// - 1/2 log|C C^T| (n latent dims, k constraints); includes the prior
/// normalizers -1/2 log|Q| - 1/2 log|C Q^{-1} C^T| and the theta prior.
double neg_log_joint(const AssembledModel &m, const Vector &theta, const Vector &x);

/// Constrained Newton mode (constraint correction after every solve).
InnerResult inner_mode(const AssembledModel &m, const Hyperparameters &h, const Vector &x0,
                       const InnerOptions &opt = {}, LaplaceWorkspace *ws = nullptr);

struct LaplaceResult {
  double log_ml = 0.0;
  InnerResult inner;
};

LaplaceResult laplace(const AssembledModel &m, const Hyperparameters &h, const InnerOptions &opt = {},
                      LaplaceWorkspace *ws = nullptr);

/// Laplace approximation of log p(y, r | theta), conditioning on Cx = 0.
double laplace_log_marginal(const AssembledModel &m, const Hyperparameters &h);

struct TraceEntry {
  int evaluation;
  Vector theta;  ///< point evaluated
  double value;  ///< objective at `theta`
  double best;   ///< best objective so far
};

struct FitResult {
  std::vector<std::string> theta_names;
  Vector theta;          ///< internal coordinates at the optimum
  Hyperparameters theta_hat;
  Vector x_mode;
  SpMat Q_post;
  double log_ml = 0.0;
  double objective = 0.0; ///< log_ml + log prior of theta
  bool converged = false;
  int evaluations = 0;
  std::vector<TraceEntry> trace; ///< best objective after each evaluation
  /// Covariance of internal theta from the curvature at the optimum (empty
  /// when not computed or not positive definite).
  Matrix theta_cov;

  /// Gaussian credible interval of a theta entry in internal coordinates.
  std::pair<double, double> interval(const std::string &name, double z = 1.959963984540054) const;
};

/// Minimizes f by Nelder-Mead. Vertices are ordered by value with
/// lexicographic tie-breaking on coordinates.
struct NelderMeadResult {
  Vector x;
  double f = 0.0;
  int evaluations = 0;
  bool converged = false;
  std::vector<double> best_trace;
};
NelderMeadResult nelder_mead(const std::function<double(const Vector &)> &f, const Vector &x0,
                             const OuterOptions &opt,
                             const std::function<void(int, const Vector &, double)> &on_eval = {});

/// Empirical-Bayes fit maximizing the Laplace marginal plus theta prior.
FitResult optimize_hyperparameters(const AssembledModel &m, const Hyperparameters &theta0,
                                   const OuterOptions &outer = {}, const InnerOptions &inner = {});

/// Dense constrained posterior covariance of selected latent entries.
Matrix latent_covariance(const AssembledModel &m, const FitResult &fit, const std::vector<Index> &idx);

struct PosteriorEnsemble {
  Matrix draws; ///< n_latent x M
  Hyperparameters theta;
  Layout layout;
  std::uint64_t seed = 0;
  Index size() const { return draws.cols(); }
};

/// Draws from the Gaussian approximation at the mode, corrected onto
/// Cx = 0 by conditioning by kriging. Chunks of draws use seeds derived
/// from `seed`, so the result does not depend on `threads`.
PosteriorEnsemble sample_posterior(const AssembledModel &m, const FitResult &fit, int M, std::uint64_t seed,
                                   int threads = 1);

/// Seed of stream `k` derived from a master seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t k);

} // namespace prefsamp
