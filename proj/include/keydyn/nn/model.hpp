// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "keydyn/features.hpp"
#include "keydyn/nn/adam.hpp"
#include "keydyn/nn/batchnorm.hpp"
#include "keydyn/nn/loss.hpp"
#include "keydyn/nn/lstm.hpp"
#include "keydyn/nn/params.hpp"

namespace keydyn {

enum class RunMode { train, inference };

template <class Scalar>
struct ForwardCache {
  Matrix<Scalar> mask;                 // B x M
  std::vector<Matrix<Scalar>> x1;      // layer-1 inputs (post input dropout)
  std::vector<Matrix<Scalar>> x2;      // layer-2 inputs (post BN + dropout)
  Matrix<Scalar> drop_mid;             // B x H multiplier, empty if unused
  LstmCache<Scalar> lstm1, lstm2;
  BatchNormCache<Scalar> bn;
};

template <class Scalar>
struct ForwardResult {
  Matrix<Scalar> embeddings;  // B x embedding_dim
  // Batch statistics of this forward (train mode only); the caller folds
  // them into the running state.
  Matrix<Scalar> batch_mean, batch_var;
};

namespace detail {

// Inverted-dropout multiplier: entries are 1/keep with probability keep and
// 0 otherwise, drawn row by row so one sequence's mask is contiguous in the
// draw order and reused across all timesteps.
template <class Scalar>
Matrix<Scalar> dropout_multiplier(Index rows, Index cols, double rate,
                                  Rng& rng) {
  const double keep = 1.0 - rate;
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      m(i, j) = rng.uniform() < keep ? static_cast<Scalar>(1.0 / keep)
                                     : Scalar(0);
    }
  }
  return m;
}

template <class Scalar>
void validate_shapes(const ModelConfig& config,
                     const ModelParams<Scalar>& params,
                     std::span<const PaddedInput> inputs) {
  config.validate();
  if (params.layer1.input_dim() != config.feature_dim ||
      params.layer1.units() != config.lstm_units ||
      params.layer2.input_dim() != config.lstm_units ||
      params.layer2.units() != config.lstm_units ||
      params.norm.gamma.cols() != config.lstm_units) {
    throw ConfigError("model parameters do not match the configuration");
  }
  for (const auto& in : inputs) {
    if (in.matrix.rows() != config.input_length ||
        in.matrix.cols() != config.feature_dim ||
        in.mask.size() != config.input_length) {
      throw ConfigError("padded input shape does not match the configuration");
    }
  }
}

}  // namespace detail

// Runs the two-layer stack over a batch of padded inputs. Train mode applies
// dropout (when rates are nonzero, requiring an rng) and normalizes with
// batch statistics over valid positions; inference uses the frozen running
// statistics and is deterministic. The embedding is the second layer's
// hidden state after the final step, which by state carry-through equals the
// state at each sequence's last valid step.
template <class Scalar>
ForwardResult<Scalar> model_forward_batch(const ModelConfig& config,
                                          const ModelParams<Scalar>& params,
                                          const BatchNormState<Scalar>& norm_state,
                                          std::span<const PaddedInput> inputs,
                                          RunMode mode, Rng* dropout_rng,
                                          ForwardCache<Scalar>* cache) {
  detail::validate_shapes(config, params, inputs);
  const auto batch = static_cast<Index>(inputs.size());
  if (batch == 0) throw ConfigError("forward pass over an empty batch");
  const Index steps = config.input_length;
  const Index dim = config.feature_dim;
  const Index units = config.lstm_units;

  Matrix<Scalar> mask(batch, steps);
  for (Index b = 0; b < batch; ++b) {
    mask.row(b) = inputs[b].mask.cast<Scalar>().transpose();
  }

  std::vector<Matrix<Scalar>> x1(steps, Matrix<Scalar>(batch, dim));
  for (Index t = 0; t < steps; ++t) {
    for (Index b = 0; b < batch; ++b) {
      x1[t].row(b) = inputs[b].matrix.row(t).template cast<Scalar>();
    }
  }

  const bool train = mode == RunMode::train;
  const bool use_input_dropout = train && config.input_dropout > 0.0;
  const bool use_mid_dropout =
      train && (config.inter_layer_dropout > 0.0 || config.input_dropout > 0.0);
  if ((use_input_dropout || use_mid_dropout) && dropout_rng == nullptr) {
    throw ConfigError("train-mode forward with dropout requires an rng");
  }

  // Draw order: layer-1 input mask, inter-layer mask, layer-2 input mask.
  Matrix<Scalar> drop_in1, drop_mid;
  if (use_input_dropout) {
    drop_in1 = detail::dropout_multiplier<Scalar>(batch, dim,
                                                  config.input_dropout,
                                                  *dropout_rng);
  }
  if (train && config.inter_layer_dropout > 0.0) {
    drop_mid = detail::dropout_multiplier<Scalar>(
        batch, units, config.inter_layer_dropout, *dropout_rng);
  }
  if (use_input_dropout) {
    const Matrix<Scalar> drop_in2 = detail::dropout_multiplier<Scalar>(
        batch, units, config.input_dropout, *dropout_rng);
    drop_mid = drop_mid.size() == 0
                   ? drop_in2
                   : Matrix<Scalar>(drop_mid.cwiseProduct(drop_in2));
  }
  if (drop_in1.size() != 0) {
    for (auto& x : x1) x = x.cwiseProduct(drop_in1);
  }

  LstmCache<Scalar>* c1 = cache ? &cache->lstm1 : nullptr;
  std::vector<Matrix<Scalar>> h1 = lstm_forward(params.layer1, x1, mask, c1);

  ForwardResult<Scalar> result;
  std::vector<Matrix<Scalar>> x2;
  if (train) {
    x2 = batchnorm_forward_train(params.norm, h1, mask, config.bn_epsilon,
                                 cache ? &cache->bn : nullptr,
                                 &result.batch_mean, &result.batch_var);
  } else {
    x2 = batchnorm_forward_inference(params.norm, norm_state, h1,
                                     config.bn_epsilon);
  }
  if (drop_mid.size() != 0) {
    for (auto& x : x2) x = x.cwiseProduct(drop_mid);
  }

  LstmCache<Scalar>* c2 = cache ? &cache->lstm2 : nullptr;
  std::vector<Matrix<Scalar>> h2 = lstm_forward(params.layer2, x2, mask, c2);

  result.embeddings = h2.back();
  if (!result.embeddings.allFinite()) {
    throw NumericalError("non-finite embedding in forward pass");
  }
  if (cache) {
    cache->mask = std::move(mask);
    cache->x1 = std::move(x1);
    cache->x2 = std::move(x2);
    cache->drop_mid = std::move(drop_mid);
  }
  return result;
}

template <class Scalar>
Vector<Scalar> model_forward(const ModelConfig& config,
                             const ModelParams<Scalar>& params,
                             const BatchNormState<Scalar>& norm_state,
                             const PaddedInput& input, RunMode mode,
                             Rng* dropout_rng = nullptr) {
  const auto out = model_forward_batch<Scalar>(
      config, params, norm_state, std::span<const PaddedInput>(&input, 1),
      mode, dropout_rng, nullptr);
  return out.embeddings.row(0).transpose();
}

template <class Scalar>
struct GradResult {
  Scalar loss = 0;
  ModelParams<Scalar> grads;
  Matrix<Scalar> batch_mean, batch_var;  // for the running-statistics update
  Scalar mean_genuine_distance = 0;
  Scalar mean_impostor_distance = 0;
};

// Mean contrastive loss over a pair batch and its gradient w.r.t. every
// learnable parameter, by backpropagation through time. Both Siamese
// branches run as one concatenated forward (left inputs then right inputs),
// so the shared-weight gradients of the two branches accumulate naturally
// and batch-normalization statistics pool over both sides.
template <class Scalar>
GradResult<Scalar> compute_gradients(const ModelConfig& config,
                                     const ModelParams<Scalar>& params,
                                     const BatchNormState<Scalar>& norm_state,
                                     const PairBatch& batch,
                                     const TrainHyper& hyper,
                                     Rng* dropout_rng) {
  hyper.validate();
  const auto pairs = static_cast<Index>(batch.size());
  if (pairs == 0) throw ConfigError("gradient computation over an empty batch");
  if (batch.left.size() != batch.labels.size() ||
      batch.right.size() != batch.labels.size()) {
    throw ConfigError("pair batch sides and labels differ in length");
  }

  std::vector<PaddedInput> stacked;
  stacked.reserve(2 * pairs);
  stacked.insert(stacked.end(), batch.left.begin(), batch.left.end());
  stacked.insert(stacked.end(), batch.right.begin(), batch.right.end());

  ForwardCache<Scalar> cache;
  const ForwardResult<Scalar> fwd = model_forward_batch<Scalar>(
      config, params, norm_state, stacked, RunMode::train, dropout_rng,
      &cache);
  const Matrix<Scalar>& emb = fwd.embeddings;
  const Index units = config.lstm_units;
  const auto margin = static_cast<Scalar>(hyper.margin);

  GradResult<Scalar> result;
  result.grads = zeros_like(params);
  result.batch_mean = fwd.batch_mean;
  result.batch_var = fwd.batch_var;

  Matrix<Scalar> d_emb = Matrix<Scalar>::Zero(2 * pairs, units);
  Scalar loss_sum = 0, genuine_sum = 0, impostor_sum = 0;
  Index genuine_count = 0, impostor_count = 0;
  for (Index k = 0; k < pairs; ++k) {
    const auto diff = (emb.row(k) - emb.row(pairs + k)).eval();
    const Scalar d = diff.norm();
    const int label = batch.labels[k];
    loss_sum += contrastive_loss(d, label, margin);
    if (label == 0) {
      genuine_sum += d;
      ++genuine_count;
      d_emb.row(k) += diff / Scalar(pairs);
      d_emb.row(pairs + k) -= diff / Scalar(pairs);
    } else {
      impostor_sum += d;
      ++impostor_count;
      if (d < margin && d > Scalar(0)) {
        const Scalar coeff = -(margin - d) / d / Scalar(pairs);
        d_emb.row(k) += coeff * diff;
        d_emb.row(pairs + k) -= coeff * diff;
      }
    }
  }
  result.loss = loss_sum / Scalar(pairs);
  result.mean_genuine_distance =
      genuine_count > 0 ? genuine_sum / Scalar(genuine_count) : Scalar(0);
  result.mean_impostor_distance =
      impostor_count > 0 ? impostor_sum / Scalar(impostor_count) : Scalar(0);
  if (!std::isfinite(static_cast<double>(result.loss))) {
    throw NumericalError("non-finite contrastive loss");
  }

  // The embedding gradient enters at the final step; the masked carry path
  // routes it back to each sequence's last valid step.
  const Index steps = config.input_length;
  const Index batch_rows = 2 * pairs;
  std::vector<Matrix<Scalar>> dh2(
      steps, Matrix<Scalar>::Zero(batch_rows, units));
  dh2.back() = std::move(d_emb);

  std::vector<Matrix<Scalar>> dx2 =
      lstm_backward(params.layer2, cache.x2, cache.mask, cache.lstm2, dh2,
                    result.grads.layer2, /*want_dx=*/true);

  if (cache.drop_mid.size() != 0) {
    for (auto& dx : dx2) dx = dx.cwiseProduct(cache.drop_mid);
  }

  std::vector<Matrix<Scalar>> dh1 = batchnorm_backward(
      params.norm, cache.bn, cache.mask, dx2, result.grads.norm);

  lstm_backward(params.layer1, cache.x1, cache.mask, cache.lstm1, dh1,
                result.grads.layer1, /*want_dx=*/false);

  if (!all_finite(result.grads)) {
    throw NumericalError("non-finite gradient in backward pass");
  }
  return result;
}

// Folds one train-mode forward's batch statistics into the running state.
template <class Scalar>
void update_running_statistics(BatchNormState<Scalar>& state,
                               const Matrix<Scalar>& batch_mean,
                               const Matrix<Scalar>& batch_var,
                               double momentum) {
  const auto m = static_cast<Scalar>(momentum);
  state.running_mean = m * state.running_mean + (Scalar(1) - m) * batch_mean;
  state.running_var = m * state.running_var + (Scalar(1) - m) * batch_var;
}

}  // namespace keydyn
