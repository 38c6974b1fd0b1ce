// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fedmd {

using Rng = std::mt19937_64;

/// Deterministic seed derivation. Every random stream in a run is keyed by
/// the master seed plus a path of integers and labels, so streams stay
/// independent of each other and of execution order.
class SeedPath {
 public:
  explicit SeedPath(std::uint64_t master) : state_(mix(master ^ 0x6a09e667f3bcc908ULL)) {}

  SeedPath& with(std::uint64_t value) {
    state_ = mix(state_ ^ mix(value + 0x9e3779b97f4a7c15ULL));
    return *this;
  }

  SeedPath& with(std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return with(h);
  }

  std::uint64_t seed() const { return state_; }
  Rng rng() const { return Rng(state_); }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

template <typename... Parts>
Rng derive_rng(std::uint64_t master, Parts&&... parts) {
  SeedPath path(master);
  (path.with(std::forward<Parts>(parts)), ...);
  return path.rng();
}

template <typename... Parts>
std::uint64_t derive_seed(std::uint64_t master, Parts&&... parts) {
  SeedPath path(master);
  (path.with(std::forward<Parts>(parts)), ...);
  return path.seed();
}

}  // namespace fedmd
