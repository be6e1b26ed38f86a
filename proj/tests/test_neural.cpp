// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "keydyn/nn/model.hpp"
#include "oracles.hpp"

using namespace keydyn;

namespace {

ModelConfig small_config(Index m, Index units, bool dropout = false) {
  ModelConfig cfg;
  cfg.input_length = m;
  cfg.lstm_units = units;
  if (!dropout) {
    cfg.inter_layer_dropout = 0.0;
    cfg.input_dropout = 0.0;
  }
  return cfg;
}

PaddedInput random_input(Rng& rng, Index m, Index n_valid) {
  FeatureSequence fs;
  fs.rows.setZero(n_valid, kFeatureDim);
  for (Index i = 0; i < n_valid; ++i) {
    for (Index j = 0; j < kFeatureDim; ++j) fs.rows(i, j) = 0.4 * rng.normal();
  }
  return pad_truncate(fs, m);
}

PairBatch random_pair_batch(Rng& rng, Index m, int pairs) {
  PairBatch batch;
  for (int k = 0; k < pairs; ++k) {
    batch.left.push_back(random_input(rng, m, 2 + rng.below(m)));
    batch.right.push_back(random_input(rng, m, 2 + rng.below(m)));
    batch.labels.push_back(static_cast<int>(rng.below(2)));
  }
  return batch;
}

}  // namespace

TEST_CASE("euclidean distance basics and oracle agreement") {
  Vector<double> a = Vector<double>::Zero(128), b = Vector<double>::Zero(128);
  CHECK(euclidean_distance(a, a) == 0.0);
  a(0) = 1.0;
  b(1) = 1.0;
  CHECK(euclidean_distance(a, b) ==
        doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));

  Vector<double> short_vec = Vector<double>::Zero(5);
  CHECK_THROWS_AS(euclidean_distance(a, short_vec), ConfigError);

  Rng rng(2, "neural/distance");
  for (int trial = 0; trial < 1000; ++trial) {
    const auto x = oracle::random_embedding(rng, 128);
    const auto y = oracle::random_embedding(rng, 128);
    CHECK(std::abs(euclidean_distance<double>(x, y) - oracle::distance(x, y)) <
          1e-12);
  }
}

TEST_CASE("distance is non-negative and satisfies the triangle inequality") {
  Rng rng(3, "neural/triangle");
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = oracle::random_embedding(rng, 16);
    const auto b = oracle::random_embedding(rng, 16);
    const auto c = oracle::random_embedding(rng, 16);
    const double ab = euclidean_distance<double>(a, b);
    const double bc = euclidean_distance<double>(b, c);
    const double ac = euclidean_distance<double>(a, c);
    CHECK(ab >= 0.0);
    CHECK(ac <= ab + bc + 1e-12);
  }
}

TEST_CASE("contrastive loss fixed points") {
  CHECK(contrastive_loss(0.0, 0, 1.5) == 0.0);
  CHECK(contrastive_loss(1.5, 1, 1.5) == 0.0);  // at the margin
  CHECK(contrastive_loss(1.0, 0, 1.5) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(contrastive_loss(2.0, 1, 1.5) == 0.0);  // beyond the margin
  CHECK(contrastive_loss(0.5, 1, 1.5) ==
        doctest::Approx(0.5).epsilon(1e-15));  // (1.5-0.5)^2/2
  CHECK_THROWS_AS(contrastive_loss(-0.1, 0, 1.5), ConfigError);
  CHECK_THROWS_AS(contrastive_loss(0.1, 2, 1.5), ConfigError);
}

TEST_CASE("contrastive loss bounds") {
  Rng rng(5, "neural/lossbounds");
  const double margin = 1.5;
  for (int trial = 0; trial < 1000; ++trial) {
    const double d = 3.0 * rng.uniform();
    const int label = static_cast<int>(rng.below(2));
    const double loss = contrastive_loss(d, label, margin);
    CHECK(loss >= 0.0);
    CHECK(std::abs(loss - oracle::contrastive(d, label, margin)) < 1e-15);
    if (label == 1) CHECK(loss <= margin * margin / 2.0 + 1e-15);
  }
}

namespace {

double scalar_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One LSTM step from zero state, scalar arithmetic only.
std::vector<double> scalar_lstm_step(const std::vector<double>& x,
                                     const Matrix<double>& w_in,
                                     const Matrix<double>& bias, Index units) {
  std::vector<double> h(units);
  for (Index j = 0; j < units; ++j) {
    double zi = bias(0, j), zf = bias(0, units + j),
           zg = bias(0, 2 * units + j), zo = bias(0, 3 * units + j);
    for (std::size_t d = 0; d < x.size(); ++d) {
      zi += x[d] * w_in(d, j);
      zf += x[d] * w_in(d, units + j);
      zg += x[d] * w_in(d, 2 * units + j);
      zo += x[d] * w_in(d, 3 * units + j);
    }
    const double c = scalar_sigmoid(zi) * std::tanh(zg);
    h[j] = scalar_sigmoid(zo) * std::tanh(c);
  }
  return h;
}

}  // namespace

TEST_CASE("single-step forward matches a hand-computed LSTM update") {
  const Index units = 2;
  ModelConfig cfg = small_config(1, units);

  ModelParams<double> params;
  params.layer1.w_in.resize(kFeatureDim, 4 * units);
  for (Index d = 0; d < kFeatureDim; ++d) {
    for (Index c = 0; c < 4 * units; ++c) {
      params.layer1.w_in(d, c) = 0.03 * (d + 1) - 0.02 * c;
    }
  }
  params.layer1.w_rec = Matrix<double>::Zero(units, 4 * units);  // unused: h0 = 0
  params.layer1.bias.resize(1, 4 * units);
  for (Index c = 0; c < 4 * units; ++c) params.layer1.bias(0, c) = 0.01 * c;

  params.layer2.w_in.resize(units, 4 * units);
  for (Index d = 0; d < units; ++d) {
    for (Index c = 0; c < 4 * units; ++c) {
      params.layer2.w_in(d, c) = 0.05 - 0.01 * d + 0.004 * c;
    }
  }
  params.layer2.w_rec = Matrix<double>::Zero(units, 4 * units);
  params.layer2.bias = Matrix<double>::Zero(1, 4 * units);
  params.norm.gamma = Matrix<double>::Ones(1, units);
  params.norm.beta = Matrix<double>::Zero(1, units);

  FeatureSequence fs;
  fs.rows.resize(1, kFeatureDim);
  fs.rows << 0.11, -0.04, 0.07, 0.18, 65.0 / 255.0;
  const PaddedInput input = pad_truncate(fs, 1);

  // scalar reference: lstm1 -> inference batchnorm (running 0/1) -> lstm2
  const std::vector<double> x = {0.11, -0.04, 0.07, 0.18, 65.0 / 255.0};
  std::vector<double> h1 =
      scalar_lstm_step(x, params.layer1.w_in, params.layer1.bias, units);
  for (auto& v : h1) v = v / std::sqrt(1.0 + cfg.bn_epsilon);
  const std::vector<double> h2 =
      scalar_lstm_step(h1, params.layer2.w_in, params.layer2.bias, units);

  const BatchNormState<double> norm = init_norm_state<double>(cfg);
  const Vector<double> emb =
      model_forward<double>(cfg, params, norm, input, RunMode::inference);
  REQUIRE(emb.size() == units);
  for (Index j = 0; j < units; ++j) {
    CHECK(emb(j) == doctest::Approx(h2[j]).epsilon(1e-14));
  }
}

TEST_CASE("embeddings depend only on rows with mask 1") {
  Rng rng(11, "neural/masking");
  for (int trial = 0; trial < 10; ++trial) {
    Rng trial_rng = rng.fork(trial);
    ModelConfig cfg = small_config(8, 6, /*dropout=*/trial % 2 == 1);
    ModelParams<double> params = init_params<double>(cfg, trial_rng);
    BatchNormState<double> norm = init_norm_state<double>(cfg);

    PaddedInput a = random_input(trial_rng, 8, 4);
    PaddedInput b = a;
    for (Index i = 4; i < 8; ++i) {
      for (Index j = 0; j < kFeatureDim; ++j) {
        b.matrix(i, j) = 10.0 * trial_rng.normal();  // garbage under the mask
      }
    }

    for (const RunMode mode : {RunMode::inference, RunMode::train}) {
      Rng da = trial_rng.fork(100), db = trial_rng.fork(100);
      const Vector<double> ea =
          model_forward<double>(cfg, params, norm, a, mode, &da);
      const Vector<double> eb =
          model_forward<double>(cfg, params, norm, b, mode, &db);
      CHECK(ea == eb);  // bitwise: masked content never reaches the state
    }
  }
}

TEST_CASE("inference is deterministic") {
  Rng rng(13, "neural/det");
  ModelConfig cfg = small_config(6, 5, /*dropout=*/true);
  ModelParams<double> params = init_params<double>(cfg, rng);
  BatchNormState<double> norm = init_norm_state<double>(cfg);
  const PaddedInput input = random_input(rng, 6, 6);
  const Vector<double> a =
      model_forward<double>(cfg, params, norm, input, RunMode::inference);
  const Vector<double> b =
      model_forward<double>(cfg, params, norm, input, RunMode::inference);
  CHECK(a == b);
}

TEST_CASE("frozen statistics make inference independent of batch makeup") {
  Rng rng(17, "neural/bnconsistency");
  ModelConfig cfg = small_config(7, 8);
  ModelParams<double> params = init_params<double>(cfg, rng);
  BatchNormState<double> norm = init_norm_state<double>(cfg);
  norm.running_mean.setRandom();
  norm.running_var = norm.running_var.array() + 0.5;

  std::vector<PaddedInput> inputs;
  for (int i = 0; i < 8; ++i) inputs.push_back(random_input(rng, 7, 3 + i % 5));

  const auto batched = model_forward_batch<double>(
      cfg, params, norm, inputs, RunMode::inference, nullptr, nullptr);
  for (int i = 0; i < 8; ++i) {
    const Vector<double> alone =
        model_forward<double>(cfg, params, norm, inputs[i], RunMode::inference);
    CHECK((batched.embeddings.row(i).transpose() - alone)
              .cwiseAbs()
              .maxCoeff() < 1e-10);
  }
}

TEST_CASE("analytic gradients match finite differences") {
  Rng rng(19, "neural/grad");
  TrainHyper hyper;
  hyper.margin = 1.0;
  for (int trial = 0; trial < 3; ++trial) {
    Rng trial_rng = rng.fork(trial);
    ModelConfig cfg = small_config(2 + trial_rng.below(4), 2 + trial_rng.below(5));
    ModelParams<double> params = init_params<double>(cfg, trial_rng);
    BatchNormState<double> norm = init_norm_state<double>(cfg);
    const PairBatch batch =
        random_pair_batch(trial_rng, cfg.input_length,
                          1 + static_cast<int>(trial_rng.below(3)));

    const auto result =
        compute_gradients<double>(cfg, params, norm, batch, hyper, nullptr);
    const Vector<double> analytic = flatten_params(result.grads);
    Vector<double> flat = flatten_params(params);
    const double h = 1e-5;

    double worst = 0;
    for (Index i = 0; i < flat.size(); ++i) {
      ModelParams<double> probe = params;
      Vector<double> moved = flat;
      moved(i) += h;
      unflatten_params(moved, probe);
      const double up =
          compute_gradients<double>(cfg, probe, norm, batch, hyper, nullptr).loss;
      moved(i) = flat(i) - h;
      unflatten_params(moved, probe);
      const double down =
          compute_gradients<double>(cfg, probe, norm, batch, hyper, nullptr).loss;
      const double numeric = (up - down) / (2 * h);
      const double rel = std::abs(numeric - analytic(i)) /
                         std::max({std::abs(numeric), std::abs(analytic(i)), 1e-3});
      worst = std::max(worst, rel);
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("genuine pairs of identical inputs give zero loss and gradients") {
  Rng rng(23, "neural/zeroloss");
  ModelConfig cfg = small_config(5, 4);
  ModelParams<double> params = init_params<double>(cfg, rng);
  BatchNormState<double> norm = init_norm_state<double>(cfg);

  PairBatch batch;
  for (int k = 0; k < 3; ++k) {
    const PaddedInput in = random_input(rng, 5, 3 + k);
    batch.left.push_back(in);
    batch.right.push_back(in);
    batch.labels.push_back(0);
  }
  const auto result =
      compute_gradients<double>(cfg, params, norm, batch, TrainHyper{}, nullptr);
  CHECK(result.loss == 0.0);
  CHECK(flatten_params(result.grads).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("impostor pairs beyond the margin give zero gradients") {
  Rng rng(29, "neural/hinge");
  ModelConfig cfg = small_config(5, 4);
  ModelParams<double> params = init_params<double>(cfg, rng);
  BatchNormState<double> norm = init_norm_state<double>(cfg);

  PairBatch batch = random_pair_batch(rng, 5, 4);
  for (auto& label : batch.labels) label = 1;

  // find the smallest pair distance, then set the margin below it
  TrainHyper probe;
  probe.margin = 0.0;
  const auto base =
      compute_gradients<double>(cfg, params, norm, batch, probe, nullptr);
  CHECK(base.loss == 0.0);
  CHECK(flatten_params(base.grads).cwiseAbs().maxCoeff() == 0.0);

  TrainHyper hyper;
  hyper.margin = 0.9 * static_cast<double>(base.mean_impostor_distance);
  const auto result =
      compute_gradients<double>(cfg, params, norm, batch, hyper, nullptr);
  CHECK(result.loss >= 0.0);  // some pairs may still sit inside the margin
}

TEST_CASE("genuine-pair loss is symmetric under swapping the two inputs") {
  Rng rng(31, "neural/symmetry");
  ModelConfig cfg = small_config(6, 5);
  ModelParams<double> params = init_params<double>(cfg, rng);
  BatchNormState<double> norm = init_norm_state<double>(cfg);

  PairBatch batch = random_pair_batch(rng, 6, 4);
  batch.labels.assign(4, 0);
  PairBatch swapped = batch;
  std::swap(swapped.left[1], swapped.right[1]);

  const double a =
      compute_gradients<double>(cfg, params, norm, batch, TrainHyper{}, nullptr)
          .loss;
  const double b = compute_gradients<double>(cfg, params, norm, swapped,
                                             TrainHyper{}, nullptr)
                       .loss;
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("non-finite parameters are reported as numerical errors") {
  Rng rng(37, "neural/nonfinite");
  ModelConfig cfg = small_config(4, 3);
  ModelParams<double> params = init_params<double>(cfg, rng);
  BatchNormState<double> norm = init_norm_state<double>(cfg);
  params.layer2.w_in(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const PaddedInput input = random_input(rng, 4, 4);
  CHECK_THROWS_AS(
      model_forward<double>(cfg, params, norm, input, RunMode::inference),
      NumericalError);
}

TEST_CASE("shape mismatches are configuration errors") {
  Rng rng(41, "neural/shapes");
  ModelConfig cfg = small_config(4, 3);
  ModelParams<double> params = init_params<double>(cfg, rng);
  BatchNormState<double> norm = init_norm_state<double>(cfg);
  const PaddedInput wrong = random_input(rng, 6, 4);  // M = 6, config expects 4
  CHECK_THROWS_AS(
      model_forward<double>(cfg, params, norm, wrong, RunMode::inference),
      ConfigError);
}

TEST_CASE("adam with zero gradients is a fixed point") {
  Rng rng(43, "neural/adamzero");
  ModelConfig cfg = small_config(3, 3);
  ModelParams<double> params = init_params<double>(cfg, rng);
  const ModelParams<double> before = params;
  ModelParams<double> grads = zeros_like(params);
  AdamState<double> state = AdamState<double>::zero(params);
  adam_step(params, grads, state, TrainHyper{});
  adam_step(params, grads, state, TrainHyper{});
  CHECK(flatten_params(params) == flatten_params(before));
  CHECK(state.step == 2);
}

TEST_CASE("one adam step matches the hand-computed bias-corrected update") {
  TrainHyper hyper;
  hyper.learning_rate = 0.05;
  Matrix<double> theta(1, 3), grad(1, 3);
  theta << 1.0, -2.0, 0.5;
  grad << 0.3, -0.7, 0.0;
  Matrix<double> m = Matrix<double>::Zero(1, 3), v = Matrix<double>::Zero(1, 3);
  Matrix<double> expected = theta;
  adam_update_array(theta, grad, m, v, 1, hyper);

  for (Index j = 0; j < 3; ++j) {
    const double g = grad(0, j);
    const double m1 = (1 - hyper.beta1) * g;       // first moment
    const double v1 = (1 - hyper.beta2) * g * g;   // second moment
    const double m_hat = m1 / (1 - hyper.beta1);   // = g
    const double v_hat = v1 / (1 - hyper.beta2);   // = g^2
    expected(0, j) -=
        hyper.learning_rate * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
    CHECK(theta(0, j) == doctest::Approx(expected(0, j)).epsilon(1e-15));
  }
  // first-step direction is -lr * sign(g) up to the epsilon regularizer
  CHECK(theta(0, 0) ==
        doctest::Approx(1.0 - hyper.learning_rate).epsilon(1e-6));
  CHECK(theta(0, 1) ==
        doctest::Approx(-2.0 + hyper.learning_rate).epsilon(1e-6));
  CHECK(theta(0, 2) == 0.5);  // zero gradient -> unchanged
}

TEST_CASE("adam descends a scalar quadratic") {
  TrainHyper hyper;
  hyper.learning_rate = 0.1;
  Matrix<double> theta(1, 1), m = Matrix<double>::Zero(1, 1),
                              v = Matrix<double>::Zero(1, 1);
  theta(0, 0) = 5.0;
  auto objective = [](double x) { return (x - 3.0) * (x - 3.0); };
  const double initial = objective(theta(0, 0));
  for (long t = 1; t <= 2; ++t) {
    Matrix<double> grad(1, 1);
    grad(0, 0) = 2.0 * (theta(0, 0) - 3.0);
    adam_update_array(theta, grad, m, v, t, hyper);
  }
  CHECK(objective(theta(0, 0)) < initial);
}

TEST_CASE("train-mode batch statistics exclude padding") {
  // One long and one short sequence: the batch mean over valid positions of
  // the layer-1 output must not count the short sequence's padded tail.
  Rng rng(47, "neural/bnmask");
  ModelConfig cfg = small_config(6, 4);
  ModelParams<double> params = init_params<double>(cfg, rng);
  BatchNormState<double> norm = init_norm_state<double>(cfg);

  std::vector<PaddedInput> inputs = {random_input(rng, 6, 6),
                                     random_input(rng, 6, 2)};
  ForwardCache<double> cache;
  const auto out = model_forward_batch<double>(cfg, params, norm, inputs,
                                               RunMode::train, nullptr, &cache);

  std::vector<Matrix<double>> h1 = lstm_forward<double>(
      params.layer1, cache.x1, cache.mask, nullptr);
  double sum = 0;
  int count = 0;
  for (Index t = 0; t < 6; ++t) {
    for (Index b = 0; b < 2; ++b) {
      if (cache.mask(b, t) == 1.0) {
        sum += h1[t](b, 0);
        count += 1;
      }
    }
  }
  CHECK(count == 8);  // 6 + 2 valid positions
  CHECK(out.batch_mean(0, 0) == doctest::Approx(sum / count).epsilon(1e-12));
}
