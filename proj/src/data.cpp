// SPDX-License-Identifier: Apache-2.0
#include "keydyn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "keydyn/rng.hpp"
#include "keydyn/types.hpp"

namespace keydyn {

namespace {

std::vector<std::string_view> split_line(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double* out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, *out);
  return ec == std::errc() && ptr == end && std::isfinite(*out);
}

bool parse_keycode(std::string_view s, int* out) {
  long v = 0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return false;
  *out = static_cast<int>(v);
  return v == *out;
}

// Integral timestamps print as integers, anything else as the shortest
// representation that round-trips exactly through from_chars.
std::string format_ms(double v) {
  char buf[32];
  if (v == std::floor(v) && std::abs(v) < 9.0e15) {
    auto [ptr, ec] =
        std::to_chars(buf, buf + sizeof(buf), static_cast<long long>(v));
    return std::string(buf, ptr);
  }
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::size_t UserCollection::sequence_count() const {
  std::size_t n = 0;
  for (const auto& [id, seqs] : users) n += seqs.size();
  return n;
}

std::vector<std::string> UserCollection::user_ids() const {
  std::vector<std::string> ids;
  ids.reserve(users.size());
  for (const auto& [id, seqs] : users) ids.push_back(id);
  return ids;
}

std::string ParseReport::summary() const {
  std::ostringstream os;
  os << "rows: " << rows_total << " total, " << rows_kept << " kept, "
     << rows_rejected() << " rejected";
  if (rows_rejected() > 0) {
    os << " (field count " << bad_field_count << ", number " << bad_number
       << ", keycode range " << keycode_out_of_range << ", negative hold "
       << negative_hold << ")";
  }
  if (short_sequences_dropped > 0) {
    os << "; sequences shorter than 2 events dropped: "
       << short_sequences_dropped;
  }
  return os.str();
}

LoadResult parse_dataset(const std::filesystem::path& path,
                         const ColumnMap& columns) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path.string());

  std::string header;
  if (!std::getline(in, header)) {
    throw DataError("empty dataset file: " + path.string());
  }
  if (!header.empty() && header.back() == '\r') header.pop_back();

  const auto names = split_line(header, columns.delimiter);
  auto column_index = [&](const std::string& name) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) {
      throw DataError("dataset is missing column '" + name + "': " +
                      path.string());
    }
    return static_cast<std::size_t>(it - names.begin());
  };
  const std::size_t c_user = column_index(columns.user_id);
  const std::size_t c_session = column_index(columns.session_id);
  const std::size_t c_key = column_index(columns.keycode);
  const std::size_t c_press = column_index(columns.press_time);
  const std::size_t c_release = column_index(columns.release_time);
  const std::size_t needed =
      1 + std::max({c_user, c_session, c_key, c_press, c_release});

  LoadResult result;
  // session order = first appearance order within each user
  std::map<std::string, std::map<std::string, std::size_t>> session_index;

  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    result.report.rows_total++;

    const auto fields = split_line(line, columns.delimiter);
    if (fields.size() < needed) {
      result.report.bad_field_count++;
      continue;
    }
    int keycode = 0;
    double press = 0.0, release = 0.0;
    if (!parse_keycode(fields[c_key], &keycode)) {
      result.report.bad_number++;
      continue;
    }
    if (!parse_double(fields[c_press], &press) ||
        !parse_double(fields[c_release], &release)) {
      result.report.bad_number++;
      continue;
    }
    if (keycode < 0 || keycode > kKeycodeMax) {
      result.report.keycode_out_of_range++;
      continue;
    }
    if (release < press) {
      result.report.negative_hold++;
      continue;
    }
    result.report.rows_kept++;

    const std::string user(fields[c_user]);
    const std::string session(fields[c_session]);
    auto& seqs = result.users.users[user];
    auto& index = session_index[user];
    const auto it = index.find(session);
    std::size_t si;
    if (it == index.end()) {
      si = seqs.size();
      index.emplace(session, si);
      seqs.push_back(KeystrokeSequence{user, session, {}});
    } else {
      si = it->second;
    }
    seqs[si].events.push_back(KeystrokeEvent{keycode, press, release});
  }

  // Establish ordering invariant and drop sequences with < 2 events.
  for (auto it = result.users.users.begin(); it != result.users.users.end();) {
    auto& seqs = it->second;
    for (auto& seq : seqs) {
      std::stable_sort(seq.events.begin(), seq.events.end(),
                       [](const KeystrokeEvent& a, const KeystrokeEvent& b) {
                         return a.press_ms < b.press_ms;
                       });
    }
    std::erase_if(seqs, [&](const KeystrokeSequence& s) {
      if (s.events.size() < 2) {
        result.report.short_sequences_dropped++;
        return true;
      }
      return false;
    });
    it = seqs.empty() ? result.users.users.erase(it) : std::next(it);
  }

  if (result.users.empty()) {
    throw DataError("no valid sequences in dataset (" +
                    result.report.summary() + "): " + path.string());
  }
  return result;
}

void write_dataset(const UserCollection& collection,
                   const std::filesystem::path& path,
                   const ColumnMap& columns) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset file: " + path.string());

  const char d = columns.delimiter;
  out << columns.user_id << d << columns.session_id << d << columns.keycode
      << d << columns.press_time << d << columns.release_time << '\n';
  for (const auto& [user, seqs] : collection.users) {
    for (const auto& seq : seqs) {
      for (const auto& e : seq.events) {
        out << user << d << seq.session_id << d << e.keycode << d
            << format_ms(e.press_ms) << d << format_ms(e.release_ms) << '\n';
      }
    }
  }
  if (!out) throw IoError("short write to dataset file: " + path.string());
}

void SyntheticSpec::validate() const {
  if (num_users < 1) throw ConfigError("synthetic spec: num_users must be >= 1");
  if (sequences_per_user < 1) {
    throw ConfigError("synthetic spec: sequences_per_user must be >= 1");
  }
  if (min_keys < 2 || max_keys < min_keys) {
    throw ConfigError("synthetic spec: need 2 <= min_keys <= max_keys");
  }
  if (mean_hold_ms <= 0.0 || mean_interkey_ms <= 0.0) {
    throw ConfigError("synthetic spec: latency means must be positive");
  }
  if (user_jitter < 0.0 || noise_scale < 0.0) {
    throw ConfigError("synthetic spec: jitter/noise scales must be >= 0");
  }
}

namespace {

// Keys drawn from a fixed alphabet: lowercase letters plus space.
constexpr int kAlphabet[] = {32,  97,  98,  99,  100, 101, 102, 103, 104,
                             105, 106, 107, 108, 109, 110, 111, 112, 113,
                             114, 115, 116, 117, 118, 119, 120, 121, 122};
constexpr int kAlphabetSize = static_cast<int>(std::size(kAlphabet));
constexpr int kDigraphBuckets = 4;
constexpr int kKeyGroups = 6;

int digraph_bucket(int prev, int next) {
  return static_cast<int>((static_cast<unsigned>(prev) * 31u +
                           static_cast<unsigned>(next)) %
                          kDigraphBuckets);
}

int key_group(int key) {
  return static_cast<int>((static_cast<unsigned>(key) * 7u) % kKeyGroups);
}

std::string padded_id(char prefix, int value, int width) {
  std::string digits = std::to_string(value);
  if (static_cast<int>(digits.size()) < width) {
    digits.insert(0, width - digits.size(), '0');
  }
  return prefix + digits;
}

}  // namespace

UserCollection generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  UserCollection out;

  const int user_width =
      std::max(3, static_cast<int>(std::to_string(spec.num_users - 1).size()));
  const int seq_width = std::max(
      2, static_cast<int>(std::to_string(spec.sequences_per_user - 1).size()));

  const Rng root(spec.seed, "synthetic");
  for (int u = 0; u < spec.num_users; ++u) {
    // Per-user latency profile: per-key hold means and per-digraph-bucket
    // gap means, generated from a low-dimensional factor model (global
    // tempo, hold/gap balance, key-group and bucket rhythm factors plus a
    // faint per-key refinement) so that users occupy a smooth manifold.
    Rng profile_rng = root.fork(u, 0);
    const double tempo = std::exp(0.3 * spec.user_jitter * profile_rng.normal());
    const double hold_share =
        std::exp(0.5 * spec.user_jitter * profile_rng.normal());
    std::array<double, kKeyGroups> group_factor;
    for (auto& f : group_factor) {
      f = std::exp(0.6 * spec.user_jitter * profile_rng.normal());
    }
    std::array<double, kDigraphBuckets> bucket_factor;
    for (auto& f : bucket_factor) {
      f = std::exp(0.5 * spec.user_jitter * profile_rng.normal());
    }
    std::array<double, kAlphabetSize> hold_mean;
    for (int k = 0; k < kAlphabetSize; ++k) {
      const double refine =
          std::exp(0.15 * spec.user_jitter * profile_rng.normal());
      hold_mean[k] =
          std::max(1.0, spec.mean_hold_ms * tempo * hold_share *
                            group_factor[key_group(kAlphabet[k])] * refine);
    }
    std::array<double, kDigraphBuckets> gap_mean;
    for (int b = 0; b < kDigraphBuckets; ++b) {
      gap_mean[b] = std::max(
          1.0, spec.mean_interkey_ms * tempo * bucket_factor[b]);
    }

    const std::string user_id = padded_id('u', u, user_width);
    auto& seqs = out.users[user_id];
    seqs.reserve(spec.sequences_per_user);
    for (int s = 0; s < spec.sequences_per_user; ++s) {
      Rng rng = root.fork(u, s + 1);
      const int n =
          spec.min_keys +
          static_cast<int>(rng.below(spec.max_keys - spec.min_keys + 1));
      // Session-to-session tempo drift, part of the within-user noise: a
      // session runs uniformly faster or slower, so absolute speed is an
      // unreliable cue while rhythm ratios stay stable.
      const double session_tempo =
          std::exp(1.2 * spec.noise_scale * rng.normal());

      KeystrokeSequence seq;
      seq.user_id = user_id;
      seq.session_id = padded_id('s', s, seq_width);
      seq.events.reserve(n);

      // Sessions spaced an hour apart so press times are globally increasing.
      double t = 1'000'000.0 + 3'600'000.0 * s;
      int prev_key = kAlphabet[rng.below(kAlphabetSize)];
      for (int i = 0; i < n; ++i) {
        const int ki = static_cast<int>(rng.below(kAlphabetSize));
        const int key = kAlphabet[ki];
        if (i > 0) {
          const double gap = std::max(
              1.0, session_tempo * gap_mean[digraph_bucket(prev_key, key)] +
                       spec.noise_scale * spec.mean_interkey_ms * rng.normal());
          t += std::round(gap);
        }
        const double hold =
            std::max(1.0, session_tempo * hold_mean[ki] +
                              spec.noise_scale * spec.mean_hold_ms *
                                  rng.normal());
        const double press = t;
        const double release = press + std::round(hold);
        seq.events.push_back(KeystrokeEvent{key, press, release});
        t = release;
        prev_key = key;
      }
      seqs.push_back(std::move(seq));
    }
  }
  return out;
}

std::pair<UserCollection, UserCollection> split_users(
    const UserCollection& collection, double train_fraction,
    std::uint64_t seed) {
  if (collection.empty()) throw DataError("cannot split an empty collection");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }

  std::vector<std::string> ids = collection.user_ids();
  Rng rng(seed, "split");
  for (std::size_t i = ids.size() - 1; i > 0; --i) {
    const std::size_t j = rng.below(i + 1);
    std::swap(ids[i], ids[j]);
  }

  const auto n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(ids.size())));

  UserCollection train, test;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto& side = (i < n_train) ? train : test;
    side.users[ids[i]] = collection.users.at(ids[i]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace keydyn
