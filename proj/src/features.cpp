// SPDX-License-Identifier: Apache-2.0
#include "keydyn/features.hpp"

#include <charconv>
#include <fstream>

namespace keydyn {

double normalize_keycode(int code) {
  if (code < 0 || code > kKeycodeMax) {
    throw ConfigError("keycode out of range 0..255: " + std::to_string(code));
  }
  return static_cast<double>(code) / static_cast<double>(kKeycodeMax);
}

FeatureSequence extract_features(const KeystrokeSequence& seq) {
  const auto n = static_cast<Index>(seq.events.size());
  if (n < 2) {
    throw DataError("sequence too short for feature extraction (" +
                    std::to_string(n) + " events): user " + seq.user_id +
                    ", session " + seq.session_id);
  }

  FeatureSequence out;
  out.user_id = seq.user_id;
  out.rows.setZero(n, kFeatureDim);
  for (Index i = 0; i < n; ++i) {
    const auto& e = seq.events[i];
    out.rows(i, kHoldLatency) = (e.release_ms - e.press_ms) * kMsToSeconds;
    out.rows(i, kKeycode) = normalize_keycode(e.keycode);
    if (i + 1 < n) {
      const auto& next = seq.events[i + 1];
      out.rows(i, kInterKeyLatency) =
          (next.press_ms - e.release_ms) * kMsToSeconds;
      out.rows(i, kPressLatency) = (next.press_ms - e.press_ms) * kMsToSeconds;
      out.rows(i, kReleaseLatency) =
          (next.release_ms - e.release_ms) * kMsToSeconds;
    }
  }
  return out;
}

PaddedInput pad_truncate(const FeatureSequence& features, Index fixed_length) {
  if (fixed_length < 1) throw ConfigError("fixed_length must be >= 1");

  PaddedInput out;
  out.original_length = features.length();
  out.matrix.setZero(fixed_length, kFeatureDim);
  out.mask = Eigen::ArrayXi::Zero(fixed_length);
  const Index keep = std::min(features.length(), fixed_length);
  out.matrix.topRows(keep) = features.rows.topRows(keep);
  out.mask.head(keep).setOnes();
  return out;
}

PreparedDataset PreparedDataset::build(const UserCollection& collection,
                                       Index fixed_length) {
  PreparedDataset data;
  data.user_ids.reserve(collection.user_count());
  data.inputs.reserve(collection.user_count());
  for (const auto& [user, seqs] : collection.users) {
    std::vector<PaddedInput> padded;
    padded.reserve(seqs.size());
    for (const auto& seq : seqs) {
      padded.push_back(pad_truncate(extract_features(seq), fixed_length));
    }
    data.user_ids.push_back(user);
    data.inputs.push_back(std::move(padded));
  }
  return data;
}

PairBatch sample_pair_batch(const PreparedDataset& data, int batch_size,
                            Rng& rng) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  const std::size_t n_users = data.user_count();
  if (n_users < 2) {
    throw ProtocolError("pair sampling needs at least 2 users, have " +
                        std::to_string(n_users));
  }
  for (std::size_t u = 0; u < n_users; ++u) {
    if (data.inputs[u].size() < 2) {
      throw ProtocolError("pair sampling needs >= 2 sequences per user; user " +
                          data.user_ids[u] + " has " +
                          std::to_string(data.inputs[u].size()));
    }
  }

  const int n_genuine = batch_size - batch_size / 2;
  const int n_impostor = batch_size / 2;

  PairBatch batch;
  batch.left.reserve(batch_size);
  batch.right.reserve(batch_size);
  batch.labels.reserve(batch_size);

  for (int k = 0; k < n_genuine; ++k) {
    const std::size_t u = rng.below(n_users);
    const std::size_t count = data.inputs[u].size();
    const std::size_t i = rng.below(count);
    std::size_t j = rng.below(count - 1);
    if (j >= i) ++j;
    batch.left.push_back(data.inputs[u][i]);
    batch.right.push_back(data.inputs[u][j]);
    batch.labels.push_back(0);
  }
  for (int k = 0; k < n_impostor; ++k) {
    const std::size_t u = rng.below(n_users);
    std::size_t v = rng.below(n_users - 1);
    if (v >= u) ++v;
    batch.left.push_back(data.inputs[u][rng.below(data.inputs[u].size())]);
    batch.right.push_back(data.inputs[v][rng.below(data.inputs[v].size())]);
    batch.labels.push_back(1);
  }
  return batch;
}

PairBatch sample_pair_batch(const UserCollection& collection, int batch_size,
                            Index fixed_length, Rng& rng) {
  const PreparedDataset data = PreparedDataset::build(collection, fixed_length);
  return sample_pair_batch(data, batch_size, rng);
}

void write_feature_sequence(const FeatureSequence& features,
                            const std::filesystem::path& path,
                            char delimiter) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file: " + path.string());

  const char d = delimiter;
  out << "hl" << d << "il" << d << "pl" << d << "rl" << d << "key" << '\n';
  char buf[32];
  for (Index i = 0; i < features.rows.rows(); ++i) {
    for (Index j = 0; j < features.rows.cols(); ++j) {
      auto [ptr, ec] =
          std::to_chars(buf, buf + sizeof(buf), features.rows(i, j));
      out.write(buf, ptr - buf);
      out.put(j + 1 < features.rows.cols() ? d : '\n');
    }
  }
}

}  // namespace keydyn
