#pragma once

#include "prefsamp/mesh.hpp"
#include "prefsamp/types.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace prefsamp {

/// Mass-lumped FEM matrices of a triangulation.
template <typename Scalar> struct FemMatricesT {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> c; ///< lumped mass (vertex areas)
  Eigen::SparseMatrix<Scalar> G;              ///< stiffness

  Index size() const { return c.size(); }
  Eigen::SparseMatrix<Scalar> C() const {
    Eigen::SparseMatrix<Scalar> m(size(), size());
    m.reserve(Eigen::VectorXi::Ones(size()));
    for (Index i = 0; i < size(); ++i)
      m.insert(i, i) = c(i);
    m.makeCompressed();
    return m;
  }
};
using FemMatrices = FemMatricesT<double>;

/// Matérn field parameters with smoothness fixed at one in two dimensions.
/// `range` is the distance where the correlation drops to about 0.13.
template <typename Scalar> struct MaternParamsT {
  Scalar range;
  Scalar sd;

  Scalar kappa() const { return std::sqrt(Scalar(8)) / range; }
  /// Precision scale such that the stationary marginal sd equals `sd`.
  Scalar tau() const {
    return Scalar(1) / (sd * kappa() * std::sqrt(Scalar(4) * std::numbers::pi_v<Scalar>));
  }
  bool valid() const { return range > 0 && sd > 0 && std::isfinite(range) && std::isfinite(sd); }
  bool operator==(const MaternParamsT &) const = default;
};
using MaternParams = MaternParamsT<double>;

FemMatrices fem_matrices(const Mesh &mesh);

/// Q = tau^2 (kappa^4 C + 2 kappa^2 G + G C^{-1} G).
template <typename Scalar>
Eigen::SparseMatrix<Scalar> matern_precision(const FemMatricesT<Scalar> &fem,
                                             Scalar kappa, Scalar tau);

template <typename Scalar>
Eigen::SparseMatrix<Scalar> matern_precision(const FemMatricesT<Scalar> &fem,
                                             const MaternParamsT<Scalar> &params) {
  return matern_precision(fem, params.kappa(), params.tau());
}

/// Closed-form Matérn correlation for smoothness one: (kappa h) K_1(kappa h).
template <typename Scalar> Scalar matern_correlation(Scalar distance, Scalar range) {
  if (distance <= Scalar(0))
    return Scalar(1);
  const Scalar x = std::sqrt(Scalar(8)) * distance / range;
  return x * std::cyl_bessel_k(Scalar(1), x);
}

/// Log joint PC prior density of (range, sd) with
/// P(range < range0) = alpha_range and P(sd > sd0) = alpha_sd.
double pc_prior_logdensity(const MaternParams &params, double range0,
                           double alpha_range, double sd0, double alpha_sd);

/// Coordinate dump "row col value", one entry per line, 0-based.
std::string sparse_to_text(const SpMat &m);

extern template Eigen::SparseMatrix<double> matern_precision<double>(const FemMatricesT<double> &, double, double);

} // namespace prefsamp
