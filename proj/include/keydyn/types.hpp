// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

namespace keydyn {

using Index = Eigen::Index;

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

// Model output f(x); scored in double precision regardless of the precision
// the network ran in.
using Embedding = Eigen::VectorXd;

constexpr double kMsToSeconds = 1e-3;
constexpr int kKeycodeMax = 255;

}  // namespace keydyn
