#pragma once

#include <Eigen/Dense>

namespace gmar {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Row-major 2-D grid of doubles: saliency maps, difference maps, rollout matrices.
using Grid = RowMatrix<double>;

}  // namespace gmar
