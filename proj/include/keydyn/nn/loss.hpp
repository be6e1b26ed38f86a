// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>

#include "keydyn/errors.hpp"
#include "keydyn/types.hpp"

namespace keydyn {

template <class Scalar>
Scalar euclidean_distance(const Vector<Scalar>& a, const Vector<Scalar>& b) {
  if (a.size() != b.size()) {
    throw ConfigError("euclidean_distance: dimension mismatch (" +
                      std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + ")");
  }
  return (a - b).norm();
}

// Pulls genuine pairs (label 0) toward distance 0 and pushes impostor pairs
// (label 1) beyond the margin:
//   (1 - L) * d^2 / 2 + L * max(0, margin - d)^2 / 2
template <class Scalar>
Scalar contrastive_loss(Scalar distance, int label, Scalar margin) {
  if (distance < Scalar(0)) throw ConfigError("contrastive_loss: d must be >= 0");
  if (margin < Scalar(0)) throw ConfigError("contrastive_loss: margin must be >= 0");
  if (label != 0 && label != 1) {
    throw ConfigError("contrastive_loss: label must be 0 (genuine) or 1 (impostor)");
  }
  if (label == 0) return distance * distance / Scalar(2);
  const Scalar hinge = std::max(Scalar(0), margin - distance);
  return hinge * hinge / Scalar(2);
}

}  // namespace keydyn
