#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <vector>

namespace prefsamp {

template <typename Scalar> using Point2 = Eigen::Matrix<Scalar, 2, 1>;
using Point = Point2<double>;
using PointList = std::vector<Point>;

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

} // namespace prefsamp
