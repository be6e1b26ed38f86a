// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace keydyn {

// Deterministic, implementation-independent random streams.
//
// Every stochastic operation in the toolkit draws from an Rng that is derived
// from (seed, stream name[, fork indices]) only, never from global state.
// The derivation is: key = splitmix64 chain over seed ^ fnv1a(stream), then
// fork(a, b) re-keys with the indices; the key expands into xoshiro256++
// state. Identical (seed, stream, forks) always reproduce identical draws.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key) {
    std::uint64_t x = key;
    for (auto& s : state_) s = splitmix64(x);
  }

  Rng(std::uint64_t seed, std::string_view stream)
      : Rng(mix(seed ^ fnv1a(stream))) {}

  // Derive an independent substream; depends on the construction key only,
  // not on how many values have been drawn.
  Rng fork(std::uint64_t a, std::uint64_t b = 0) const {
    std::uint64_t k = key_;
    k = mix(k ^ mix(a + 0x9e3779b97f4a7c15ull));
    k = mix(k ^ mix(b + 0x517cc1b727220a95ull));
    return Rng(k);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    return h;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  static std::uint64_t mix(std::uint64_t x) {
    std::uint64_t v = x;
    return splitmix64(v);
  }

  std::uint64_t key_;
  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace keydyn
