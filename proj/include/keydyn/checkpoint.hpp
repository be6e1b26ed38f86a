// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "keydyn/nn/params.hpp"

namespace keydyn {

// Arithmetic precision the model runs in. Parameter values are stored in the
// checkpoint as doubles either way (float values are exactly representable),
// so a save/load round trip is lossless for both precisions.
enum class Precision { float32, float64 };

std::string precision_name(Precision p);
Precision precision_from_name(const std::string& name);

struct Checkpoint {
  ModelConfig config;
  Precision precision = Precision::float64;
  std::string init_descriptor;
  std::uint64_t seed = 0;
  ModelParams<double> params;
  BatchNormState<double> norm;

  template <class Scalar>
  ModelParams<Scalar> params_as() const {
    return cast_params<double, Scalar>(params);
  }
  template <class Scalar>
  BatchNormState<Scalar> norm_as() const {
    return cast_norm_state<double, Scalar>(norm);
  }
};

// Binary container: magic, format version, a JSON header (config, precision,
// init descriptor, seed, shape-tagged array directory), the arrays as
// little-endian float64 in column-major order, and a checksum of the payload.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Field-wise equality of everything a checkpoint persists.
bool checkpoints_equal(const Checkpoint& a, const Checkpoint& b);

}  // namespace keydyn
