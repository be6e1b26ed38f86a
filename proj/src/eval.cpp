// SPDX-License-Identifier: Apache-2.0
#include "keydyn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "keydyn/io_util.hpp"
#include "keydyn/nn/model.hpp"

namespace keydyn {

namespace {

// Deterministic striped parallel-for: task i runs on thread i % threads and
// writes only its own output slot, so results are independent of the thread
// count.
template <class Fn>
void parallel_tasks(std::size_t count, int threads, Fn&& fn) {
  const int workers =
      std::max(1, std::min<int>(threads, static_cast<int>(count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

template <class Scalar>
Embedding embed_padded(const ModelConfig& config,
                       const ModelParams<Scalar>& params,
                       const BatchNormState<Scalar>& norm,
                       const PaddedInput& input) {
  const Vector<Scalar> e = model_forward<Scalar>(config, params, norm, input,
                                                 RunMode::inference);
  return e.template cast<double>();
}

// Runs the checkpoint at its declared precision over pre-padded inputs.
std::vector<Embedding> embed_inputs(const Checkpoint& ckpt, Index input_length,
                                    const std::vector<PaddedInput>& inputs,
                                    int threads) {
  ModelConfig config = ckpt.config;
  config.input_length = input_length;

  std::vector<Embedding> out(inputs.size());
  if (ckpt.precision == Precision::float32) {
    const auto params = ckpt.params_as<float>();
    const auto norm = ckpt.norm_as<float>();
    parallel_tasks(inputs.size(), threads, [&](std::size_t i) {
      out[i] = embed_padded<float>(config, params, norm, inputs[i]);
    });
  } else {
    const auto params = ckpt.params_as<double>();
    const auto norm = ckpt.norm_as<double>();
    parallel_tasks(inputs.size(), threads, [&](std::size_t i) {
      out[i] = embed_padded<double>(config, params, norm, inputs[i]);
    });
  }
  return out;
}

double sample_std(const std::vector<double>& values, double mean) {
  if (values.size() < 2) return 0.0;
  double sq = 0;
  for (const double v : values) sq += (v - mean) * (v - mean);
  return std::sqrt(sq / static_cast<double>(values.size() - 1));
}

}  // namespace

ProtocolAssignment build_protocol(const UserCollection& test_users,
                                  const ProtocolConfig& config) {
  config.validate();
  const int needed = config.gallery_size + config.test_sequences_per_user;

  std::vector<std::string> eligible;
  for (const auto& [id, seqs] : test_users.users) {
    if (static_cast<int>(seqs.size()) >= needed) eligible.push_back(id);
  }
  if (static_cast<int>(eligible.size()) < config.enrolled_users) {
    throw ProtocolError(
        "protocol needs " + std::to_string(config.enrolled_users) +
        " users with >= " + std::to_string(needed) + " sequences, found " +
        std::to_string(eligible.size()));
  }

  Rng select_rng(config.seed, "protocol/select");
  for (std::size_t i = eligible.size() - 1; i > 0; --i) {
    const std::size_t j = select_rng.below(i + 1);
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(config.enrolled_users);
  std::sort(eligible.begin(), eligible.end());

  const Rng gallery_root(config.seed, "protocol/gallery");
  const Rng impostor_root(config.seed, "protocol/impostor");

  ProtocolAssignment assignment;
  assignment.users.reserve(eligible.size());
  for (std::size_t u = 0; u < eligible.size(); ++u) {
    const auto& seqs = test_users.users.at(eligible[u]);
    const int n = static_cast<int>(seqs.size());
    const int n_test = config.test_sequences_per_user;
    const int n_enroll = n - n_test;

    UserAssignment a;
    a.user_id = eligible[u];
    a.genuine.resize(n_test);
    for (int i = 0; i < n_test; ++i) a.genuine[i] = n_enroll + i;

    std::vector<int> pool(n_enroll);
    for (int i = 0; i < n_enroll; ++i) pool[i] = i;
    if (config.gallery_size < n_enroll) {
      Rng g = gallery_root.fork(u);
      for (int i = 0; i < config.gallery_size; ++i) {
        const auto j =
            i + static_cast<int>(g.below(static_cast<std::uint64_t>(n_enroll - i)));
        std::swap(pool[i], pool[j]);
      }
      pool.resize(config.gallery_size);
      std::sort(pool.begin(), pool.end());
    }
    a.gallery = std::move(pool);

    a.impostor_pick.reserve(eligible.size() - 1);
    for (std::size_t v = 0; v < eligible.size(); ++v) {
      if (v == u) continue;
      Rng imp = impostor_root.fork(u, v);
      a.impostor_pick.push_back(
          static_cast<int>(imp.below(static_cast<std::uint64_t>(n_test))));
    }
    assignment.users.push_back(std::move(a));
  }
  return assignment;
}

double verification_score(std::span<const Embedding> gallery,
                          const Embedding& query) {
  if (gallery.empty()) throw ProtocolError("verification with empty gallery");
  double sum = 0;
  for (const auto& g : gallery) {
    if (g.size() != query.size()) {
      throw ConfigError("verification_score: embedding dimension mismatch");
    }
    sum += (g - query).norm();
  }
  return sum / static_cast<double>(gallery.size());
}

namespace {

struct OperatingPoint {
  double far, frr;
};

// Operating points at threshold -inf and at every distinct pooled score,
// under the accept-on-ties rule.
std::vector<OperatingPoint> operating_points(std::span<const double> genuine,
                                             std::span<const double> impostor) {
  std::vector<double> gen(genuine.begin(), genuine.end());
  std::vector<double> imp(impostor.begin(), impostor.end());
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());

  std::vector<double> pooled;
  pooled.reserve(gen.size() + imp.size());
  pooled.insert(pooled.end(), gen.begin(), gen.end());
  pooled.insert(pooled.end(), imp.begin(), imp.end());
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

  std::vector<OperatingPoint> points;
  points.reserve(pooled.size() + 1);
  points.push_back({0.0, 1.0});
  std::size_t gi = 0, ii = 0;
  for (const double tau : pooled) {
    while (ii < imp.size() && imp[ii] <= tau) ++ii;
    while (gi < gen.size() && gen[gi] <= tau) ++gi;
    points.push_back({static_cast<double>(ii) / static_cast<double>(imp.size()),
                      static_cast<double>(gen.size() - gi) /
                          static_cast<double>(gen.size())});
  }
  return points;
}

}  // namespace

double eer_from_scores(std::span<const double> genuine,
                       std::span<const double> impostor) {
  if (genuine.empty() || impostor.empty()) {
    throw ProtocolError("EER needs at least one genuine and one impostor score");
  }
  const auto points = operating_points(genuine, impostor);
  for (std::size_t k = 1; k < points.size(); ++k) {
    const auto& p = points[k];
    if (p.far >= p.frr) {
      if (p.far == p.frr) return p.far;
      const auto& q = points[k - 1];  // q.far < q.frr here
      const double t = (q.frr - q.far) / ((p.far - q.far) + (q.frr - p.frr));
      return q.far + t * (p.far - q.far);
    }
  }
  return 1.0;  // unreachable: the last point has far = 1, frr = 0
}

double compute_user_eer(const UserScoreSet& scores) {
  return eer_from_scores(scores.genuine, scores.impostor);
}

std::vector<RocPoint> roc_points(std::span<const double> genuine,
                                 std::span<const double> impostor) {
  if (genuine.empty() || impostor.empty()) {
    throw ProtocolError("ROC needs at least one genuine and one impostor score");
  }
  std::vector<double> pooled(genuine.begin(), genuine.end());
  pooled.insert(pooled.end(), impostor.begin(), impostor.end());
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

  const auto points = operating_points(genuine, impostor);
  std::vector<RocPoint> roc(pooled.size());
  for (std::size_t k = 0; k < pooled.size(); ++k) {
    roc[k] = {pooled[k], points[k + 1].far, points[k + 1].frr};
  }
  return roc;
}

EmbedOutcome embed_sequences(const Checkpoint& ckpt,
                             const std::vector<KeystrokeSequence>& sequences,
                             Index input_length, int threads) {
  EmbedOutcome outcome;
  std::vector<PaddedInput> inputs;
  inputs.reserve(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    try {
      inputs.push_back(
          pad_truncate(extract_features(sequences[i]), input_length));
      outcome.kept_indices.push_back(i);
    } catch (const DataError&) {
      outcome.skipped += 1;
    }
  }
  outcome.embeddings = embed_inputs(ckpt, input_length, inputs, threads);
  return outcome;
}

EvalReport evaluate(const Checkpoint& ckpt, const UserCollection& test_users,
                    const ProtocolConfig& config, bool want_roc, int threads) {
  const ProtocolAssignment assignment = build_protocol(test_users, config);
  const std::size_t n_users = assignment.users.size();

  // Embed each user's gallery and genuine-query sequences.
  struct UserEmbeddings {
    std::vector<Embedding> gallery;
    std::vector<Embedding> genuine;
  };
  std::vector<UserEmbeddings> embedded(n_users);

  std::vector<PaddedInput> flat_inputs;
  std::vector<std::pair<std::size_t, int>> slots;  // (user, slot); slot < G is gallery
  const int g_size = config.gallery_size;
  for (std::size_t u = 0; u < n_users; ++u) {
    const auto& a = assignment.users[u];
    const auto& seqs = test_users.users.at(a.user_id);
    auto add = [&](int seq_index, int slot) {
      try {
        flat_inputs.push_back(pad_truncate(extract_features(seqs[seq_index]),
                                           config.input_length));
      } catch (const DataError& e) {
        throw ProtocolError("cannot embed sequence for user " + a.user_id +
                            ": " + e.what());
      }
      slots.emplace_back(u, slot);
    };
    for (std::size_t i = 0; i < a.gallery.size(); ++i) {
      add(a.gallery[i], static_cast<int>(i));
    }
    for (std::size_t i = 0; i < a.genuine.size(); ++i) {
      add(a.genuine[i], g_size + static_cast<int>(i));
    }
    embedded[u].gallery.resize(a.gallery.size());
    embedded[u].genuine.resize(a.genuine.size());
  }

  const std::vector<Embedding> flat =
      embed_inputs(ckpt, config.input_length, flat_inputs, threads);
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const auto [u, slot] = slots[i];
    if (slot < g_size) {
      embedded[u].gallery[slot] = flat[i];
    } else {
      embedded[u].genuine[slot - g_size] = flat[i];
    }
  }

  EvalReport report;
  report.config = config;
  report.user_ids.resize(n_users);
  report.user_eers.resize(n_users);

  std::vector<UserScoreSet> scores(n_users);
  parallel_tasks(n_users, threads, [&](std::size_t u) {
    const auto& a = assignment.users[u];
    UserScoreSet s;
    s.user_id = a.user_id;
    s.genuine.reserve(embedded[u].genuine.size());
    for (const auto& query : embedded[u].genuine) {
      s.genuine.push_back(verification_score(embedded[u].gallery, query));
    }
    s.impostor.reserve(n_users - 1);
    std::size_t pick = 0;
    for (std::size_t v = 0; v < n_users; ++v) {
      if (v == u) continue;
      const auto& query = embedded[v].genuine[a.impostor_pick[pick++]];
      s.impostor.push_back(verification_score(embedded[u].gallery, query));
    }
    report.user_ids[u] = a.user_id;
    report.user_eers[u] = compute_user_eer(s);
    scores[u] = std::move(s);
  });

  double sum = 0;
  for (const double e : report.user_eers) sum += e;
  report.mean_eer = sum / static_cast<double>(n_users);
  report.std_eer = sample_std(report.user_eers, report.mean_eer);

  if (want_roc) {
    std::vector<double> pooled_genuine, pooled_impostor;
    for (const auto& s : scores) {
      pooled_genuine.insert(pooled_genuine.end(), s.genuine.begin(),
                            s.genuine.end());
      pooled_impostor.insert(pooled_impostor.end(), s.impostor.begin(),
                             s.impostor.end());
    }
    report.roc = roc_points(pooled_genuine, pooled_impostor);
  }
  return report;
}

std::vector<SweepRow> sweep(const Checkpoint& ckpt,
                            const UserCollection& test_users,
                            std::span<const Index> input_lengths,
                            std::span<const int> gallery_sizes,
                            std::span<const int> enrolled_users,
                            std::uint64_t seed, int threads) {
  if (input_lengths.empty() || gallery_sizes.empty() || enrolled_users.empty()) {
    throw ConfigError("sweep needs at least one value per axis");
  }
  std::vector<SweepRow> rows;
  rows.reserve(input_lengths.size() * gallery_sizes.size() *
               enrolled_users.size());
  for (const Index m : input_lengths) {
    for (const int g : gallery_sizes) {
      for (const int k : enrolled_users) {
        ProtocolConfig cell;
        cell.input_length = m;
        cell.gallery_size = g;
        cell.enrolled_users = k;
        cell.seed = seed;
        const EvalReport r = evaluate(ckpt, test_users, cell, false, threads);
        rows.push_back({m, g, k, r.mean_eer, r.std_eer, seed});
      }
    }
  }
  return rows;
}

void write_user_eers(const EvalReport& report,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write report: " + path.string());
  out << "user_id\teer\n";
  for (std::size_t u = 0; u < report.user_ids.size(); ++u) {
    out << report.user_ids[u] << '\t' << shortest(report.user_eers[u]) << '\n';
  }
}

void write_eval_summary(const EvalReport& report,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write summary: " + path.string());
  out << "M\tG\tK\tmean_EER\tstd_EER\tseed\n";
  out << report.config.input_length << '\t' << report.config.gallery_size
      << '\t' << report.config.enrolled_users << '\t'
      << shortest(report.mean_eer) << '\t' << shortest(report.std_eer) << '\t'
      << report.config.seed << '\n';
}

void write_roc(const std::vector<RocPoint>& roc,
               const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write ROC: " + path.string());
  out << "threshold\tFAR\tFRR\n";
  for (const auto& p : roc) {
    out << shortest(p.threshold) << '\t' << shortest(p.far) << '\t'
        << shortest(p.frr) << '\n';
  }
}

void write_sweep_table(const std::vector<SweepRow>& rows,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write sweep table: " + path.string());
  out << "M\tG\tK\tmean_EER\tstd_EER\tseed\n";
  for (const auto& r : rows) {
    out << r.input_length << '\t' << r.gallery_size << '\t' << r.enrolled_users
        << '\t' << shortest(r.mean_eer) << '\t' << shortest(r.std_eer) << '\t'
        << r.seed << '\n';
  }
}

}  // namespace keydyn
