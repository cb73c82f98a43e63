#pragma once

#include "prefsamp/spde.hpp"

namespace prefsamp {

/// Prior settings shared by all model blocks.
struct PriorSettings {
  // Gamma(shape, rate) on precisions (noise and AR1 marginal).
  double gamma_shape = 1.0;
  double gamma_rate = 5e-5;
  // Wishart on the inverse covariance of the site effects, identity scale.
  double wishart_dof = 4.0;
  // PC prior on Matérn fields: P(range < range0) = alpha_range,
  // P(sd > sd0) = alpha_sd.
  double pc_range0 = 3.4;
  double pc_alpha_range = 0.05;
  double pc_sd0 = 1.0;
  double pc_alpha_sd = 0.01;
  /// Variance of the Gaussian prior on log((1 + rho_a) / (1 - rho_a)).
  double ar1_z_variance = 0.15;
  /// Variance of the Gaussian prior on the sharing scalars.
  double d_variance = 10.0;
  /// Precision of the vague Gaussian prior on fixed effects.
  double fixed_precision = 1e-4;

  bool operator==(const PriorSettings &) const = default;
};

namespace priors {

double gaussian_logpdf(double x, double mean, double variance);

/// Gamma(shape, rate) prior on a precision 1/v, written as a density of
/// log v (Jacobian included).
double gamma_precision_log_variance(double log_variance, double shape, double rate);

/// Wishart(dof, I) prior on the inverse of the 2x2 covariance
///   [[s1^2, rho s1 s2], [rho s1 s2, s2^2]],
/// as a density over (log s1, log s2, z) with rho = tanh(z / 2).
double wishart2_internal(double log_s1, double log_s2, double z, double dof);

/// One-dimensional Wishart(dof, 1) on 1/s^2, as a density of log s.
double wishart1_internal(double log_s, double dof);

/// PC prior on (range, sd) as a density over (log range, log sd).
double pc_matern_internal(double log_range, double log_sd, const PriorSettings &s);

} // namespace priors

/// rho = tanh(z / 2), the inverse of z = log((1 + rho) / (1 - rho)).
template <typename Scalar> Scalar corr_from_z(Scalar z) { return std::tanh(z / Scalar(2)); }
template <typename Scalar> Scalar z_from_corr(Scalar rho) {
  return std::log((Scalar(1) + rho) / (Scalar(1) - rho));
}

} // namespace prefsamp
