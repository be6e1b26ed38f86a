// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "keydyn/errors.hpp"

namespace keydyn {

// One key press/release with millisecond timestamps (integer or fractional).
struct KeystrokeEvent {
  int keycode = 0;  // 0..255
  double press_ms = 0.0;
  double release_ms = 0.0;

  friend bool operator==(const KeystrokeEvent&, const KeystrokeEvent&) = default;
};

// One typing session; events ordered by press time, length >= 2.
struct KeystrokeSequence {
  std::string user_id;
  std::string session_id;
  std::vector<KeystrokeEvent> events;

  friend bool operator==(const KeystrokeSequence&, const KeystrokeSequence&) = default;
};

// Sequences grouped per user. Per-user order is session order (file
// appearance order when parsed, chronological order when generated); users
// iterate in sorted id order.
struct UserCollection {
  std::map<std::string, std::vector<KeystrokeSequence>> users;

  bool empty() const { return users.empty(); }
  std::size_t user_count() const { return users.size(); }
  std::size_t sequence_count() const;
  std::vector<std::string> user_ids() const;

  friend bool operator==(const UserCollection&, const UserCollection&) = default;
};

// Column names of the delimited keystroke log format (one row per keystroke,
// header row required).
struct ColumnMap {
  std::string user_id = "user_id";
  std::string session_id = "session_id";
  std::string keycode = "keycode";
  std::string press_time = "press_time";
  std::string release_time = "release_time";
  char delimiter = '\t';
};

// Per-file accounting of rejected rows. Rows are rejected individually; the
// file is only fatal when no valid sequence survives.
struct ParseReport {
  std::size_t rows_total = 0;
  std::size_t rows_kept = 0;
  std::size_t bad_field_count = 0;
  std::size_t bad_number = 0;
  std::size_t keycode_out_of_range = 0;
  std::size_t negative_hold = 0;
  std::size_t short_sequences_dropped = 0;

  std::size_t rows_rejected() const {
    return bad_field_count + bad_number + keycode_out_of_range + negative_hold;
  }
  std::string summary() const;
};

struct LoadResult {
  UserCollection users;
  ParseReport report;
};

LoadResult parse_dataset(const std::filesystem::path& path,
                         const ColumnMap& columns = {});

// Writes the collection in the same delimited format; a written collection
// re-parses field-for-field identical.
void write_dataset(const UserCollection& collection,
                   const std::filesystem::path& path,
                   const ColumnMap& columns = {});

// Synthetic typist population. Each user draws a persistent latency profile
// (per-key hold mean, per-digraph-bucket inter-key mean, lognormal around the
// global means with spread user_jitter); each event adds Gaussian noise of
// noise_scale times the global mean, clamped at >= 1 ms.
struct SyntheticSpec {
  int num_users = 100;
  int sequences_per_user = 15;
  int min_keys = 50;
  int max_keys = 80;
  double mean_hold_ms = 95.0;
  double mean_interkey_ms = 110.0;
  double user_jitter = 0.35;
  double noise_scale = 0.15;
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError on degenerate values
};

UserCollection generate_synthetic(const SyntheticSpec& spec);

// Splits by user, never by sequence: the two sides are disjoint and cover
// every user. Deterministic per seed.
std::pair<UserCollection, UserCollection> split_users(
    const UserCollection& collection, double train_fraction,
    std::uint64_t seed);

}  // namespace keydyn
