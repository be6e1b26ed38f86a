// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "keydyn/data.hpp"
#include "keydyn/rng.hpp"
#include "keydyn/types.hpp"

namespace keydyn {

// Column layout of a feature matrix row: the four timing features in seconds
// plus the normalized keycode.
enum FeatureColumn : Index {
  kHoldLatency = 0,     // release_i - press_i
  kInterKeyLatency = 1, // press_{i+1} - release_i (negative under rollover)
  kPressLatency = 2,    // press_{i+1} - press_i
  kReleaseLatency = 3,  // release_{i+1} - release_i
  kKeycode = 4,         // keycode / 255
};
constexpr Index kFeatureDim = 5;

// N x 5 feature matrix of one sequence. Row i carries the hold latency of
// key i and the (i -> i+1) transition latencies; the last row's transition
// features are zero.
struct FeatureSequence {
  std::string user_id;
  Eigen::MatrixXd rows;

  Index length() const { return rows.rows(); }
};

// Fixed-length M x 5 input: the first min(N, M) rows copy the features, the
// tail is zero with mask 0.
struct PaddedInput {
  Eigen::MatrixXd matrix;
  Eigen::ArrayXi mask;
  Index original_length = 0;

  Index fixed_length() const { return matrix.rows(); }
  Index valid_length() const { return std::min(original_length, fixed_length()); }
};

// Balanced Siamese batch; labels: 0 = genuine (same user), 1 = impostor.
struct PairBatch {
  std::vector<PaddedInput> left;
  std::vector<PaddedInput> right;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

double normalize_keycode(int code);
FeatureSequence extract_features(const KeystrokeSequence& seq);
PaddedInput pad_truncate(const FeatureSequence& features, Index fixed_length);

// Featurized, padded view of a collection for repeated sampling.
struct PreparedDataset {
  std::vector<std::string> user_ids;
  std::vector<std::vector<PaddedInput>> inputs;  // per user, session order

  static PreparedDataset build(const UserCollection& collection,
                               Index fixed_length);
  std::size_t user_count() const { return user_ids.size(); }
};

// Uniform genuine pairs (two distinct sequences of one user) and impostor
// pairs (one sequence from each of two distinct users); counts differ by at
// most one, genuine first.
PairBatch sample_pair_batch(const PreparedDataset& data, int batch_size,
                            Rng& rng);
PairBatch sample_pair_batch(const UserCollection& collection, int batch_size,
                            Index fixed_length, Rng& rng);

// Debug export of one feature matrix in the delimiter conventions of the
// dataset format.
void write_feature_sequence(const FeatureSequence& features,
                            const std::filesystem::path& path,
                            char delimiter = '\t');

}  // namespace keydyn
