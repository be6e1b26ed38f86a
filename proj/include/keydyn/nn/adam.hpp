// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include "keydyn/nn/params.hpp"

namespace keydyn {

struct TrainHyper {
  double learning_rate = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double margin = 1.5;

  void validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (epsilon <= 0.0) throw ConfigError("Adam epsilon must be > 0");
    if (margin < 0.0) throw ConfigError("margin must be >= 0");
  }
};

template <class Scalar>
struct AdamState {
  ModelParams<Scalar> first_moment;
  ModelParams<Scalar> second_moment;
  long step = 0;

  static AdamState zero(const ModelParams<Scalar>& shape) {
    return {zeros_like(shape), zeros_like(shape), 0};
  }
};

// One biased-corrected Adam update of a single array; `step` counts this
// update (1 on the first call).
template <class Scalar>
void adam_update_array(Matrix<Scalar>& theta, const Matrix<Scalar>& grad,
                       Matrix<Scalar>& m, Matrix<Scalar>& v, long step,
                       const TrainHyper& hyper) {
  const auto b1 = static_cast<Scalar>(hyper.beta1);
  const auto b2 = static_cast<Scalar>(hyper.beta2);
  const auto lr = static_cast<Scalar>(hyper.learning_rate);
  const auto eps = static_cast<Scalar>(hyper.epsilon);
  const auto bc1 = Scalar(1) - static_cast<Scalar>(
                                   std::pow(hyper.beta1, static_cast<double>(step)));
  const auto bc2 = Scalar(1) - static_cast<Scalar>(
                                   std::pow(hyper.beta2, static_cast<double>(step)));

  m = b1 * m + (Scalar(1) - b1) * grad;
  v = (b2 * v.array() + (Scalar(1) - b2) * grad.array().square()).matrix();
  theta.array() -=
      lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

template <class Scalar>
void adam_step(ModelParams<Scalar>& params, const ModelParams<Scalar>& grads,
               AdamState<Scalar>& state, const TrainHyper& hyper) {
  hyper.validate();
  if (state.step < 0) throw ConfigError("Adam step counter must be >= 0");
  state.step += 1;
  auto p = param_arrays(params);
  auto g = param_arrays(grads);
  auto m = param_arrays(state.first_moment);
  auto v = param_arrays(state.second_moment);
  for (std::size_t k = 0; k < kParamArrayCount; ++k) {
    adam_update_array(*p[k], *g[k], *m[k], *v[k], state.step, hyper);
  }
}

}  // namespace keydyn
