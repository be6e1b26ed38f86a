// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "keydyn/checkpoint.hpp"
#include "keydyn/data.hpp"
#include "keydyn/features.hpp"

namespace keydyn {

// Verification protocol: per enrolled user, a gallery of G enrollment
// embeddings is scored against 5 retained genuine queries and one query from
// each of the other K-1 enrolled users. Scores are gallery-averaged
// distances; lower means more likely genuine.
struct ProtocolConfig {
  Index input_length = 50;          // M, keys per padded sequence
  int gallery_size = 5;             // G
  int enrolled_users = 100;         // K
  int test_sequences_per_user = 5;  // retained as genuine queries
  std::uint64_t seed = 1;

  void validate() const {
    if (input_length < 1) throw ConfigError("protocol: M must be >= 1");
    if (gallery_size < 1 || gallery_size > 10) {
      throw ConfigError("protocol: G must lie in 1..10");
    }
    if (enrolled_users < 2) throw ConfigError("protocol: K must be >= 2");
    if (test_sequences_per_user < 1) {
      throw ConfigError("protocol: test sequences per user must be >= 1");
    }
  }
};

struct UserScoreSet {
  std::string user_id;
  std::vector<double> genuine;   // exactly test_sequences_per_user entries
  std::vector<double> impostor;  // exactly K-1 entries
};

struct RocPoint {
  double threshold = 0;
  double far = 0;  // fraction of impostor scores accepted (score <= threshold)
  double frr = 0;  // fraction of genuine scores rejected (score > threshold)
};

struct EvalReport {
  ProtocolConfig config;
  std::vector<std::string> user_ids;  // sorted
  std::vector<double> user_eers;      // aligned with user_ids
  double mean_eer = 0;
  double std_eer = 0;  // sample standard deviation over users
  std::vector<RocPoint> roc;  // pooled over users; filled on request
};

// Sequence indices are positions in the user's session-ordered list; the
// test set is the last test_sequences_per_user sessions, fixed across runs.
struct UserAssignment {
  std::string user_id;
  std::vector<int> gallery;  // drawn from the non-test sequences
  std::vector<int> genuine;  // the retained test sequences
  // One pick per other enrolled user, in report order with self skipped;
  // the value indexes that user's genuine list.
  std::vector<int> impostor_pick;
};

struct ProtocolAssignment {
  std::vector<UserAssignment> users;
};

ProtocolAssignment build_protocol(const UserCollection& test_users,
                                  const ProtocolConfig& config);

double verification_score(std::span<const Embedding> gallery,
                          const Embedding& query);

// Threshold sweep with accept-on-ties (accept when score <= threshold) and
// linear interpolation between the two operating points bracketing the
// FAR/FRR crossing.
double eer_from_scores(std::span<const double> genuine,
                       std::span<const double> impostor);
double compute_user_eer(const UserScoreSet& scores);
std::vector<RocPoint> roc_points(std::span<const double> genuine,
                                 std::span<const double> impostor);

struct EmbedOutcome {
  std::vector<Embedding> embeddings;   // valid items, input order
  std::vector<std::size_t> kept_indices;
  std::size_t skipped = 0;
};

// Inference-mode embeddings, one forward per sequence so each embedding is a
// function of the checkpoint and that sequence alone. Sequences too short to
// featurize are excluded and counted.
EmbedOutcome embed_sequences(const Checkpoint& ckpt,
                             const std::vector<KeystrokeSequence>& sequences,
                             Index input_length, int threads = 1);

EvalReport evaluate(const Checkpoint& ckpt, const UserCollection& test_users,
                    const ProtocolConfig& config, bool want_roc = false,
                    int threads = 1);

struct SweepRow {
  Index input_length = 0;
  int gallery_size = 0;
  int enrolled_users = 0;
  double mean_eer = 0;
  double std_eer = 0;
  std::uint64_t seed = 0;
};

// One evaluate run per (M, G, K) grid cell, all with the same seed.
std::vector<SweepRow> sweep(const Checkpoint& ckpt,
                            const UserCollection& test_users,
                            std::span<const Index> input_lengths,
                            std::span<const int> gallery_sizes,
                            std::span<const int> enrolled_users,
                            std::uint64_t seed, int threads = 1);

void write_user_eers(const EvalReport& report,
                     const std::filesystem::path& path);
void write_eval_summary(const EvalReport& report,
                        const std::filesystem::path& path);
void write_roc(const std::vector<RocPoint>& roc,
               const std::filesystem::path& path);
void write_sweep_table(const std::vector<SweepRow>& rows,
                       const std::filesystem::path& path);

}  // namespace keydyn
