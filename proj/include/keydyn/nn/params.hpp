// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>

#include <Eigen/Dense>

#include "keydyn/errors.hpp"
#include "keydyn/rng.hpp"
#include "keydyn/types.hpp"

namespace keydyn {

// Architecture of the recurrent embedding network: two stacked LSTM layers
// with batch normalization and dropout between them; the embedding is the
// second layer's hidden state at the last valid timestep.
struct ModelConfig {
  Index input_length = 50;  // M, keystrokes per padded input
  Index feature_dim = 5;
  Index lstm_units = 128;
  double inter_layer_dropout = 0.5;  // on the normalized layer-1 output
  double input_dropout = 0.2;        // on each LSTM layer's input connections
  double bn_epsilon = 1e-3;
  double bn_momentum = 0.99;  // running-statistics update

  Index embedding_dim() const { return lstm_units; }

  void validate() const {
    if (input_length < 1) throw ConfigError("input_length must be >= 1");
    if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
    if (lstm_units < 1) throw ConfigError("lstm_units must be >= 1");
    if (inter_layer_dropout < 0.0 || inter_layer_dropout >= 1.0 ||
        input_dropout < 0.0 || input_dropout >= 1.0) {
      throw ConfigError("dropout rates must lie in [0, 1)");
    }
    if (bn_epsilon <= 0.0) throw ConfigError("bn_epsilon must be > 0");
    if (bn_momentum < 0.0 || bn_momentum >= 1.0) {
      throw ConfigError("bn_momentum must lie in [0, 1)");
    }
  }
};

// Gate blocks are ordered [input, forget, candidate, output] along the
// 4*units axis.
template <class Scalar>
struct LstmParams {
  Matrix<Scalar> w_in;   // input_dim x 4*units
  Matrix<Scalar> w_rec;  // units x 4*units
  Matrix<Scalar> bias;   // 1 x 4*units

  Index units() const { return w_rec.rows(); }
  Index input_dim() const { return w_in.rows(); }
};

template <class Scalar>
struct BatchNormParams {
  Matrix<Scalar> gamma;  // 1 x units
  Matrix<Scalar> beta;   // 1 x units
};

// Running statistics are state, not learnable parameters; they are updated
// during training forwards and frozen for inference.
template <class Scalar>
struct BatchNormState {
  Matrix<Scalar> running_mean;  // 1 x units
  Matrix<Scalar> running_var;   // 1 x units
};

template <class Scalar>
struct ModelParams {
  LstmParams<Scalar> layer1;
  LstmParams<Scalar> layer2;
  BatchNormParams<Scalar> norm;
};

constexpr std::size_t kParamArrayCount = 8;

inline const std::array<std::string, kParamArrayCount>& param_array_names() {
  static const std::array<std::string, kParamArrayCount> names = {
      "layer1.w_in", "layer1.w_rec", "layer1.bias", "layer2.w_in",
      "layer2.w_rec", "layer2.bias", "norm.gamma", "norm.beta"};
  return names;
}

template <class Scalar>
std::array<Matrix<Scalar>*, kParamArrayCount> param_arrays(
    ModelParams<Scalar>& p) {
  return {&p.layer1.w_in, &p.layer1.w_rec, &p.layer1.bias,
          &p.layer2.w_in, &p.layer2.w_rec, &p.layer2.bias,
          &p.norm.gamma,  &p.norm.beta};
}

template <class Scalar>
std::array<const Matrix<Scalar>*, kParamArrayCount> param_arrays(
    const ModelParams<Scalar>& p) {
  return {&p.layer1.w_in, &p.layer1.w_rec, &p.layer1.bias,
          &p.layer2.w_in, &p.layer2.w_rec, &p.layer2.bias,
          &p.norm.gamma,  &p.norm.beta};
}

template <class Scalar>
ModelParams<Scalar> zeros_like(const ModelParams<Scalar>& p) {
  ModelParams<Scalar> z;
  auto src = param_arrays(p);
  auto dst = param_arrays(z);
  for (std::size_t k = 0; k < kParamArrayCount; ++k) {
    dst[k]->setZero(src[k]->rows(), src[k]->cols());
  }
  return z;
}

template <class Scalar>
Index param_count(const ModelParams<Scalar>& p) {
  Index n = 0;
  for (const auto* a : param_arrays(p)) n += a->size();
  return n;
}

template <class Scalar>
Vector<Scalar> flatten_params(const ModelParams<Scalar>& p) {
  Vector<Scalar> flat(param_count(p));
  Index at = 0;
  for (const auto* a : param_arrays(p)) {
    flat.segment(at, a->size()) =
        Eigen::Map<const Vector<Scalar>>(a->data(), a->size());
    at += a->size();
  }
  return flat;
}

template <class Scalar>
void unflatten_params(const Vector<Scalar>& flat, ModelParams<Scalar>& p) {
  Index at = 0;
  for (auto* a : param_arrays(p)) {
    Eigen::Map<Vector<Scalar>>(a->data(), a->size()) =
        flat.segment(at, a->size());
    at += a->size();
  }
}

template <class Scalar>
bool all_finite(const ModelParams<Scalar>& p) {
  for (const auto* a : param_arrays(p)) {
    if (!a->allFinite()) return false;
  }
  return true;
}

template <class From, class To>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out;
  auto src = param_arrays(p);
  auto dst = param_arrays(out);
  for (std::size_t k = 0; k < kParamArrayCount; ++k) {
    *dst[k] = src[k]->template cast<To>();
  }
  return out;
}

template <class From, class To>
BatchNormState<To> cast_norm_state(const BatchNormState<From>& s) {
  return {s.running_mean.template cast<To>(),
          s.running_var.template cast<To>()};
}

// Orthogonal square matrix from the QR decomposition of a Gaussian draw,
// sign-fixed by the diagonal of R so the result is unique.
template <class Scalar>
Matrix<Scalar> random_orthogonal(Index n, Rng& rng) {
  Matrix<double> g(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) g(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Matrix<double>> qr(g);
  Matrix<double> q = qr.householderQ() * Matrix<double>::Identity(n, n);
  const Matrix<double> r = qr.matrixQR().template triangularView<Eigen::Upper>();
  for (Index j = 0; j < n; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q.cast<Scalar>();
}

inline constexpr char kInitDescriptor[] =
    "w_in: uniform +-sqrt(6/(fan_in+fan_out)); w_rec: per-gate orthogonal; "
    "bias: zero with forget gate 1; gamma: 1; beta: 0";

template <class Scalar>
LstmParams<Scalar> init_lstm(Index input_dim, Index units, Rng& rng) {
  LstmParams<Scalar> p;
  const double limit =
      std::sqrt(6.0 / static_cast<double>(input_dim + 4 * units));
  Matrix<double> w(input_dim, 4 * units);
  for (Index i = 0; i < w.rows(); ++i) {
    for (Index j = 0; j < w.cols(); ++j) {
      w(i, j) = limit * (2.0 * rng.uniform() - 1.0);
    }
  }
  p.w_in = w.cast<Scalar>();

  p.w_rec.resize(units, 4 * units);
  for (int gate = 0; gate < 4; ++gate) {
    p.w_rec.middleCols(gate * units, units) = random_orthogonal<Scalar>(units, rng);
  }

  p.bias = Matrix<Scalar>::Zero(1, 4 * units);
  p.bias.middleCols(units, units).setOnes();  // forget gate
  return p;
}

template <class Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelParams<Scalar> p;
  p.layer1 = init_lstm<Scalar>(config.feature_dim, config.lstm_units, rng);
  p.layer2 = init_lstm<Scalar>(config.lstm_units, config.lstm_units, rng);
  p.norm.gamma = Matrix<Scalar>::Ones(1, config.lstm_units);
  p.norm.beta = Matrix<Scalar>::Zero(1, config.lstm_units);
  return p;
}

template <class Scalar>
BatchNormState<Scalar> init_norm_state(const ModelConfig& config) {
  return {Matrix<Scalar>::Zero(1, config.lstm_units),
          Matrix<Scalar>::Ones(1, config.lstm_units)};
}

}  // namespace keydyn
