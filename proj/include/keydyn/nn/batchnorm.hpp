// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "keydyn/nn/params.hpp"

namespace keydyn {

// Per-feature batch normalization over a masked sequence batch. In train
// mode the statistics pool every valid (sequence, timestep) position of the
// batch; masked positions are excluded from the statistics but still mapped
// through the affine transform (their outputs are discarded downstream by
// the recurrent masking). Inference normalizes with the frozen running
// statistics, so a sample's output does not depend on batch composition.

template <class Scalar>
struct BatchNormCache {
  std::vector<Matrix<Scalar>> x_hat;  // M of B x H
  Matrix<Scalar> inv_std;             // 1 x H
  Scalar n_valid = 0;
};

template <class Scalar>
std::vector<Matrix<Scalar>> batchnorm_forward_train(
    const BatchNormParams<Scalar>& p, const std::vector<Matrix<Scalar>>& xs,
    const Matrix<Scalar>& mask, double epsilon, BatchNormCache<Scalar>* cache,
    Matrix<Scalar>* batch_mean_out, Matrix<Scalar>* batch_var_out) {
  const auto steps = static_cast<Index>(xs.size());
  const Index features = p.gamma.cols();

  Scalar n = mask.sum();
  if (!(n > Scalar(0))) {
    throw ConfigError("batch normalization needs at least one valid position");
  }

  Matrix<Scalar> sum = Matrix<Scalar>::Zero(1, features);
  for (Index t = 0; t < steps; ++t) {
    sum.row(0) += (xs[t].array().colwise() * mask.col(t).array())
                      .matrix()
                      .colwise()
                      .sum();
  }
  const Matrix<Scalar> mean = sum / n;

  Matrix<Scalar> sq = Matrix<Scalar>::Zero(1, features);
  for (Index t = 0; t < steps; ++t) {
    sq.row(0) += ((xs[t].rowwise() - mean.row(0)).array().square().colwise() *
                  mask.col(t).array())
                     .matrix()
                     .colwise()
                     .sum();
  }
  const Matrix<Scalar> var = sq / n;  // biased, matching the running update
  const Matrix<Scalar> inv_std =
      (var.array() + Scalar(epsilon)).rsqrt().matrix();

  if (cache) {
    cache->x_hat.assign(steps, Matrix<Scalar>());
    cache->inv_std = inv_std;
    cache->n_valid = n;
  }
  if (batch_mean_out) *batch_mean_out = mean;
  if (batch_var_out) *batch_var_out = var;

  std::vector<Matrix<Scalar>> ys;
  ys.reserve(steps);
  for (Index t = 0; t < steps; ++t) {
    Matrix<Scalar> x_hat =
        ((xs[t].rowwise() - mean.row(0)).array().rowwise() *
         inv_std.row(0).array())
            .matrix();
    Matrix<Scalar> y = (x_hat.array().rowwise() * p.gamma.row(0).array())
                           .matrix()
                           .rowwise() +
                       p.beta.row(0);
    if (cache) cache->x_hat[t] = std::move(x_hat);
    ys.push_back(std::move(y));
  }
  return ys;
}

template <class Scalar>
std::vector<Matrix<Scalar>> batchnorm_forward_inference(
    const BatchNormParams<Scalar>& p, const BatchNormState<Scalar>& state,
    const std::vector<Matrix<Scalar>>& xs, double epsilon) {
  const Matrix<Scalar> inv_std =
      (state.running_var.array() + Scalar(epsilon)).rsqrt().matrix();
  std::vector<Matrix<Scalar>> ys;
  ys.reserve(xs.size());
  for (const auto& x : xs) {
    ys.push_back(((x.rowwise() - state.running_mean.row(0)).array().rowwise() *
                  (inv_std.row(0).array() * p.gamma.row(0).array()))
                     .matrix()
                     .rowwise() +
                 p.beta.row(0));
  }
  return ys;
}

// dys must be zero at masked positions (which holds for gradients arriving
// from a masked recurrent layer). Returns dx, also zero at masked positions.
template <class Scalar>
std::vector<Matrix<Scalar>> batchnorm_backward(
    const BatchNormParams<Scalar>& p, const BatchNormCache<Scalar>& cache,
    const Matrix<Scalar>& mask, const std::vector<Matrix<Scalar>>& dys,
    BatchNormParams<Scalar>& grads) {
  const auto steps = static_cast<Index>(dys.size());
  const Index features = p.gamma.cols();
  const Scalar n = cache.n_valid;

  Matrix<Scalar> sum_dy = Matrix<Scalar>::Zero(1, features);
  Matrix<Scalar> sum_dy_xhat = Matrix<Scalar>::Zero(1, features);
  for (Index t = 0; t < steps; ++t) {
    sum_dy.row(0) += dys[t].colwise().sum();
    sum_dy_xhat.row(0) +=
        (dys[t].array() * cache.x_hat[t].array()).matrix().colwise().sum();
  }
  grads.beta += sum_dy;
  grads.gamma += sum_dy_xhat;

  const Eigen::Array<Scalar, 1, Eigen::Dynamic> mean_dy =
      p.gamma.row(0).array() * sum_dy.row(0).array() / n;
  const Eigen::Array<Scalar, 1, Eigen::Dynamic> mean_dy_xhat =
      p.gamma.row(0).array() * sum_dy_xhat.row(0).array() / n;

  std::vector<Matrix<Scalar>> dxs;
  dxs.reserve(steps);
  for (Index t = 0; t < steps; ++t) {
    Matrix<Scalar> dx =
        (((dys[t].array().rowwise() * p.gamma.row(0).array()).rowwise() -
          mean_dy)
             .matrix() -
         (cache.x_hat[t].array().rowwise() * mean_dy_xhat).matrix());
    dx = (dx.array().rowwise() * cache.inv_std.row(0).array()).matrix();
    dx = (dx.array().colwise() * mask.col(t).array()).matrix();
    dxs.push_back(std::move(dx));
  }
  return dxs;
}

}  // namespace keydyn
