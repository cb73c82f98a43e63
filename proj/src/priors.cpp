#include "prefsamp/priors.hpp"

#include "prefsamp/error.hpp"

#include <cmath>
#include <numbers>

namespace prefsamp::priors {

double gaussian_logpdf(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * variance) - 0.5 * d * d / variance;
}

double gamma_precision_log_variance(double log_variance, double shape, double rate) {
  // tau = exp(-log v); |d tau / d log v| = tau.
  const double tau = std::exp(-log_variance);
  return shape * std::log(rate) - std::lgamma(shape) + shape * std::log(tau) - rate * tau;
}

double wishart2_internal(double log_s1, double log_s2, double z, double dof) {
  const double s1 = std::exp(log_s1), s2 = std::exp(log_s2), rho = corr_from_z(z);
  const double one_m = 1.0 - rho * rho;
  if (!(one_m > 0.0))
    return -std::numeric_limits<double>::infinity();
  // W = Sigma^{-1}; |Sigma| = s1^2 s2^2 (1 - rho^2).
  const double det_sigma = s1 * s1 * s2 * s2 * one_m;
  const double trace_w = (1.0 / (s1 * s1) + 1.0 / (s2 * s2)) / one_m;
  const double p = 2.0;
  // log multivariate gamma Gamma_2(a) = (1/2) log pi + lgamma(a) + lgamma(a - 1/2).
  const double a = dof / 2.0;
  const double lmg = 0.5 * std::log(std::numbers::pi) + std::lgamma(a) + std::lgamma(a - 0.5);
  const double log_w = -0.5 * (dof - p - 1.0) * std::log(det_sigma) - 0.5 * trace_w -
                       0.5 * dof * p * std::log(2.0) - lmg;
  // dW/dSigma contributes |Sigma|^{-(p+1)}; dSigma/d(log s1, log s2, z)
  // contributes 2 s1^3 s2^3 (1 - rho^2).
  return log_w - (p + 1.0) * std::log(det_sigma) +
         std::log(2.0) + 3.0 * (log_s1 + log_s2) + std::log(one_m);
}

double wishart1_internal(double log_s, double dof) {
  // Wishart(dof, 1) in one dimension is Gamma(dof / 2, rate 1 / 2) on 1/s^2;
  // log s = -(1/2) log tau gives Jacobian 2 tau.
  const double tau = std::exp(-2.0 * log_s);
  const double a = dof / 2.0;
  return a * std::log(0.5) - std::lgamma(a) + (a - 1.0) * std::log(tau) - 0.5 * tau +
         std::log(2.0 * tau);
}

double pc_matern_internal(double log_range, double log_sd, const PriorSettings &s) {
  const MaternParams p{std::exp(log_range), std::exp(log_sd)};
  return pc_prior_logdensity(p, s.pc_range0, s.pc_alpha_range, s.pc_sd0, s.pc_alpha_sd) +
         log_range + log_sd;
}

} // namespace prefsamp::priors
