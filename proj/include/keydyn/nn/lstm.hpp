// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "keydyn/nn/params.hpp"

namespace keydyn {

// Batched masked LSTM layer. Sequences are presented as M step matrices of
// shape batch x dim; mask is batch x M with 1 for valid positions. At masked
// positions the recurrent state is carried through unchanged, so with
// tail-only padding the state at step M-1 equals the state at the last valid
// step, and no gradient flows through padded positions.

template <class Scalar>
struct LstmCache {
  std::vector<Matrix<Scalar>> h;       // M+1 of B x H, h[0] = 0, post-blend
  std::vector<Matrix<Scalar>> c;       // M+1 of B x H, post-blend
  std::vector<Matrix<Scalar>> gates;   // M of B x 4H, [i f g o] post-activation
  std::vector<Matrix<Scalar>> tanh_c;  // M of B x H, tanh of candidate cell
};

namespace detail {

template <class Scalar>
Matrix<Scalar> sigmoid(const Matrix<Scalar>& x) {
  return (Scalar(1) / (Scalar(1) + (-x.array()).exp())).matrix();
}

}  // namespace detail

// Returns the hidden-state sequence (M entries of B x H). `cache` may be
// null for inference.
template <class Scalar>
std::vector<Matrix<Scalar>> lstm_forward(const LstmParams<Scalar>& p,
                                         const std::vector<Matrix<Scalar>>& xs,
                                         const Matrix<Scalar>& mask,
                                         LstmCache<Scalar>* cache) {
  const auto steps = static_cast<Index>(xs.size());
  const Index batch = mask.rows();
  const Index units = p.units();

  Matrix<Scalar> h = Matrix<Scalar>::Zero(batch, units);
  Matrix<Scalar> c = Matrix<Scalar>::Zero(batch, units);
  if (cache) {
    cache->h.assign(1, h);
    cache->c.assign(1, c);
    cache->gates.clear();
    cache->gates.reserve(steps);
    cache->tanh_c.clear();
    cache->tanh_c.reserve(steps);
  }

  std::vector<Matrix<Scalar>> h_seq;
  h_seq.reserve(steps);
  Matrix<Scalar> z(batch, 4 * units);
  for (Index t = 0; t < steps; ++t) {
    z.noalias() = xs[t] * p.w_in;
    z.noalias() += h * p.w_rec;
    z.rowwise() += p.bias.row(0);

    Matrix<Scalar> gates(batch, 4 * units);
    gates.leftCols(units) = detail::sigmoid<Scalar>(z.leftCols(units));
    gates.middleCols(units, units) =
        detail::sigmoid<Scalar>(z.middleCols(units, units));
    gates.middleCols(2 * units, units) =
        z.middleCols(2 * units, units).array().tanh().matrix();
    gates.rightCols(units) = detail::sigmoid<Scalar>(z.rightCols(units));

    const auto gi = gates.leftCols(units).array();
    const auto gf = gates.middleCols(units, units).array();
    const auto gg = gates.middleCols(2 * units, units).array();
    const auto go = gates.rightCols(units).array();

    Matrix<Scalar> c_cand = (gf * c.array() + gi * gg).matrix();
    Matrix<Scalar> tc = c_cand.array().tanh().matrix();
    Matrix<Scalar> h_cand = (go * tc.array()).matrix();

    const auto m = mask.col(t).array();
    const auto keep = (Scalar(1) - m);
    h = (h_cand.array().colwise() * m + h.array().colwise() * keep).matrix();
    c = (c_cand.array().colwise() * m + c.array().colwise() * keep).matrix();

    if (cache) {
      cache->h.push_back(h);
      cache->c.push_back(c);
      cache->gates.push_back(std::move(gates));
      cache->tanh_c.push_back(std::move(tc));
    }
    h_seq.push_back(h);
  }
  return h_seq;
}

// Accumulates parameter gradients into `grads` and returns the gradients
// w.r.t. the layer inputs (empty when want_dx is false). dh_out holds the
// external gradient arriving at each step's hidden output.
template <class Scalar>
std::vector<Matrix<Scalar>> lstm_backward(
    const LstmParams<Scalar>& p, const std::vector<Matrix<Scalar>>& xs,
    const Matrix<Scalar>& mask, const LstmCache<Scalar>& cache,
    const std::vector<Matrix<Scalar>>& dh_out, LstmParams<Scalar>& grads,
    bool want_dx = true) {
  const auto steps = static_cast<Index>(xs.size());
  const Index batch = mask.rows();
  const Index units = p.units();

  std::vector<Matrix<Scalar>> dxs;
  if (want_dx) dxs.assign(steps, Matrix<Scalar>());

  Matrix<Scalar> dh = Matrix<Scalar>::Zero(batch, units);
  Matrix<Scalar> dc = Matrix<Scalar>::Zero(batch, units);
  Matrix<Scalar> dz(batch, 4 * units);
  for (Index t = steps - 1; t >= 0; --t) {
    dh += dh_out[t];

    const auto m = mask.col(t).array();
    const auto keep = (Scalar(1) - m);
    const auto& gates = cache.gates[t];
    const auto gi = gates.leftCols(units).array();
    const auto gf = gates.middleCols(units, units).array();
    const auto gg = gates.middleCols(2 * units, units).array();
    const auto go = gates.rightCols(units).array();
    const auto tc = cache.tanh_c[t].array();
    const auto c_prev = cache.c[t].array();

    // Split the incoming gradient between the gate path (valid rows) and the
    // carry path (masked rows).
    Matrix<Scalar> dh_cand = (dh.array().colwise() * m).matrix();
    Matrix<Scalar> dh_carry = (dh.array().colwise() * keep).matrix();
    Matrix<Scalar> dc_cand = (dc.array().colwise() * m).matrix();
    Matrix<Scalar> dc_carry = (dc.array().colwise() * keep).matrix();

    const auto d_o = dh_cand.array() * tc;
    dc_cand.array() += dh_cand.array() * go * (Scalar(1) - tc.square());

    const auto d_i = dc_cand.array() * gg;
    const auto d_f = dc_cand.array() * c_prev;
    const auto d_g = dc_cand.array() * gi;

    dz.leftCols(units) = (d_i * gi * (Scalar(1) - gi)).matrix();
    dz.middleCols(units, units) = (d_f * gf * (Scalar(1) - gf)).matrix();
    dz.middleCols(2 * units, units) = (d_g * (Scalar(1) - gg.square())).matrix();
    dz.rightCols(units) = (d_o * go * (Scalar(1) - go)).matrix();

    grads.w_in.noalias() += xs[t].transpose() * dz;
    grads.w_rec.noalias() += cache.h[t].transpose() * dz;
    grads.bias.row(0) += dz.colwise().sum();

    if (want_dx) dxs[t].noalias() = dz * p.w_in.transpose();

    dh.noalias() = dz * p.w_rec.transpose();
    dh += dh_carry;
    dc = (dc_cand.array() * gf).matrix() + dc_carry;
  }
  return dxs;
}

}  // namespace keydyn
