// Copyright (c) 2026 ARWM Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace arwm {

// Deterministic RNG threaded explicitly through every stochastic op.
// Uniform/normal are implemented by hand so draws are bit-reproducible
// independent of the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed), seed_mix_(splitmix(seed)) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // i in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(gen_() % span);
  }

  // Standard normal via Box-Muller; one value per call (cached pair).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Independent child stream; order-insensitive given the same labels.
  Rng derive(uint64_t a, uint64_t b = 0, uint64_t c = 0) const {
    uint64_t h = seed_mix_ ^ 0x9e3779b97f4a7c15ull;
    for (uint64_t v : {a, b, c}) {
      h ^= splitmix(v + 0x9e3779b97f4a7c15ull);
      h = splitmix(h);
    }
    return Rng(h, h);
  }

  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

 private:
  Rng(uint64_t seed, uint64_t mix) : gen_(seed), seed_mix_(mix) {}

  std::mt19937_64 gen_;
  uint64_t seed_mix_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace arwm
