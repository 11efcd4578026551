#pragma once

#include <Eigen/Dense>

namespace autoret {

// Shorthands for the dense types used throughout. Everything numeric that
// participates in gradients is templated on the scalar so the same code runs
// in float for training and in double for finite-difference checks.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXf = Matrix<float>;
using VectorXf = Vector<float>;
using VectorXd = Vector<double>;

// A d-dimensional question or passage embedding.
template <typename Scalar>
using Embedding = Vector<Scalar>;

} // namespace autoret
