// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "keydyn/checkpoint.hpp"
#include "keydyn/data.hpp"
#include "keydyn/features.hpp"
#include "keydyn/nn/adam.hpp"
#include "keydyn/nn/model.hpp"

namespace keydyn {

// Whether batch_size counts pairs or sequences (two sequences per pair).
enum class BatchSizeUnit { pairs, sequences };

struct TrainConfig {
  int epochs = 200;
  int batches_per_epoch = 150;
  int batch_size = 512;
  BatchSizeUnit batch_unit = BatchSizeUnit::pairs;
  TrainHyper hyper;
  std::uint64_t seed = 1;
  Precision precision = Precision::float64;

  int pairs_per_batch() const {
    return batch_unit == BatchSizeUnit::pairs ? batch_size : batch_size / 2;
  }

  void validate() const {
    if (epochs < 1 || batches_per_epoch < 1 || batch_size < 1) {
      throw ConfigError("train config: counts must be >= 1");
    }
    if (pairs_per_batch() < 1) {
      throw ConfigError("train config: batch holds no pairs");
    }
    hyper.validate();
  }
};

struct TrainLogRecord {
  int epoch = 0;
  double mean_loss = 0;
  double mean_genuine_distance = 0;
  double mean_impostor_distance = 0;
  double seconds = 0;  // wall clock; diagnostic only, not reproducible
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogRecord> log;
  long total_steps = 0;
  bool diverged = false;
  std::string diagnostic;
};

// Runs epochs x batches_per_epoch optimizer steps on freshly sampled
// balanced pair batches. Deterministic end to end for a fixed (config, data,
// seed). On numerical divergence the result carries the checkpoint of the
// last completed epoch and a diagnostic instead of throwing.
TrainResult train(const UserCollection& train_users, const ModelConfig& model,
                  const TrainConfig& config);

void write_train_log(const std::vector<TrainLogRecord>& log,
                     const std::filesystem::path& path);

namespace detail {

template <class Scalar>
TrainResult train_impl(const UserCollection& train_users,
                       const ModelConfig& model, const TrainConfig& config) {
  model.validate();
  config.validate();
  const PreparedDataset data =
      PreparedDataset::build(train_users, model.input_length);
  const int pairs = config.pairs_per_batch();

  Rng init_rng(config.seed, "train/init");
  ModelParams<Scalar> params = init_params<Scalar>(model, init_rng);
  BatchNormState<Scalar> norm = init_norm_state<Scalar>(model);
  AdamState<Scalar> adam = AdamState<Scalar>::zero(params);
  const Rng batch_root(config.seed, "train/batch");
  const Rng dropout_root(config.seed, "train/dropout");

  const Precision precision = config.precision;
  auto snapshot = [&](const ModelParams<Scalar>& p,
                      const BatchNormState<Scalar>& n) {
    Checkpoint ckpt;
    ckpt.config = model;
    ckpt.precision = precision;
    ckpt.init_descriptor = kInitDescriptor;
    ckpt.seed = config.seed;
    ckpt.params = cast_params<Scalar, double>(p);
    ckpt.norm = cast_norm_state<Scalar, double>(n);
    return ckpt;
  };

  TrainResult result;
  Checkpoint last_good = snapshot(params, norm);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    double loss_sum = 0, genuine_sum = 0, impostor_sum = 0;
    for (int b = 0; b < config.batches_per_epoch; ++b) {
      Rng batch_rng = batch_root.fork(epoch, b);
      Rng dropout_rng = dropout_root.fork(epoch, b);
      const PairBatch batch = sample_pair_batch(data, pairs, batch_rng);
      GradResult<Scalar> step;
      try {
        step = compute_gradients<Scalar>(model, params, norm, batch,
                                         config.hyper, &dropout_rng);
      } catch (const NumericalError& e) {
        result.checkpoint = std::move(last_good);
        result.diverged = true;
        result.diagnostic = "diverged at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(b) + ": " + e.what();
        return result;
      }
      update_running_statistics(norm, step.batch_mean, step.batch_var,
                                model.bn_momentum);
      adam_step(params, step.grads, adam, config.hyper);
      result.total_steps += 1;
      loss_sum += static_cast<double>(step.loss);
      genuine_sum += static_cast<double>(step.mean_genuine_distance);
      impostor_sum += static_cast<double>(step.mean_impostor_distance);
    }
    const std::chrono::duration<double> elapsed =
        std::chrono::steady_clock::now() - epoch_start;
    const double nb = config.batches_per_epoch;
    result.log.push_back(TrainLogRecord{epoch, loss_sum / nb, genuine_sum / nb,
                                        impostor_sum / nb, elapsed.count()});
    last_good = snapshot(params, norm);
  }

  result.checkpoint = std::move(last_good);
  return result;
}

}  // namespace detail

}  // namespace keydyn
