#include "prefsamp/spde.hpp"

#include "prefsamp/error.hpp"
#include "prefsamp/geometry.hpp"

#include <sstream>

namespace prefsamp {

FemMatrices fem_matrices(const Mesh &mesh) {
  const Index n = mesh.num_vertices();
  FemMatrices fem;
  fem.c = Vector::Zero(n);
  std::vector<Triplet> trips;
  trips.reserve(mesh.triangles.size() * 9);
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto &v = mesh.triangles[t];
    const Point &p0 = mesh.vertices[v[0]], &p1 = mesh.vertices[v[1]], &p2 = mesh.vertices[v[2]];
    const double area = geometry::triangle_area(p0, p1, p2);
    if (!(area > 0.0))
      throw AssemblyError("degenerate triangle " + std::to_string(t) + " in FEM assembly");
    // Edge opposite each vertex, oriented counter-clockwise.
    const std::array<Point, 3> e{p2 - p1, p0 - p2, p1 - p0};
    for (int i = 0; i < 3; ++i) {
      fem.c(v[i]) += area / 3.0;
      for (int j = 0; j < 3; ++j)
        trips.emplace_back(v[i], v[j], e[i].dot(e[j]) / (4.0 * area));
    }
  }
  fem.G.resize(n, n);
  fem.G.setFromTriplets(trips.begin(), trips.end());
  return fem;
}

template <typename Scalar>
Eigen::SparseMatrix<Scalar> matern_precision(const FemMatricesT<Scalar> &fem,
                                             Scalar kappa, Scalar tau) {
  if (!(kappa > 0) || !(tau > 0) || !std::isfinite(kappa) || !std::isfinite(tau))
    throw ParameterError("Matern precision needs positive finite kappa and tau");
  using Sp = Eigen::SparseMatrix<Scalar>;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> cinv = fem.c.cwiseInverse();
  const Sp GCG = fem.G * cinv.asDiagonal() * fem.G;
  const Scalar k2 = kappa * kappa;
  Sp Q = GCG + Scalar(2) * k2 * fem.G;
  Q += fem.C() * (k2 * k2);
  Q *= tau * tau;
  Q.makeCompressed();
  return Q;
}

template Eigen::SparseMatrix<double> matern_precision<double>(const FemMatricesT<double> &, double, double);

double pc_prior_logdensity(const MaternParams &params, double range0,
                           double alpha_range, double sd0, double alpha_sd) {
  if (!(alpha_range > 0 && alpha_range < 1 && alpha_sd > 0 && alpha_sd < 1 && range0 > 0 && sd0 > 0))
    throw ParameterError("PC prior needs 0 < alpha < 1 and positive reference values");
  if (!params.valid())
    throw ParameterError("PC prior evaluated at non-positive range or sd");
  const double lambda_r = -std::log(alpha_range) * range0;
  const double lambda_s = -std::log(alpha_sd) / sd0;
  return std::log(lambda_r) + std::log(lambda_s) - 2.0 * std::log(params.range) -
         lambda_r / params.range - lambda_s * params.sd;
}

std::string sparse_to_text(const SpMat &m) {
  std::ostringstream os;
  os.precision(17);
  for (Index k = 0; k < m.outerSize(); ++k)
    for (SpMat::InnerIterator it(m, k); it; ++it)
      os << it.row() << " " << it.col() << " " << it.value() << "\n";
  return os.str();
}

} // namespace prefsamp
