#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace srtod {

/// Deterministic, platform-independent PRNG (xoshiro256++ seeded via
/// splitmix64). The standard <random> distributions are implementation
/// defined, so all sampling helpers are provided here to keep generated
/// datasets and parameter initialization bit-reproducible.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& si : s_) si = splitmix64(x);
  }

  static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Stable substream derivation from a seed and a label, so that e.g.
  /// per-parameter init draws do not depend on module construction order.
  static Rng derive(uint64_t seed, std::string_view tag) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : tag) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    uint64_t x = seed ^ h;
    uint64_t s0 = splitmix64(x);
    return Rng(s0);
  }

  static Rng derive(uint64_t seed, uint64_t index) {
    uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    return Rng(splitmix64(x));
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t range = uint64_t(hi - lo) + 1;
    return lo + int64_t(bounded(range));
  }

  /// Standard normal via Box-Muller (cached second draw).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t bounded(uint64_t range) {
    // Lemire's multiply-shift with rejection; deterministic and unbiased.
    uint64_t x = next_u64();
    __uint128_t m = __uint128_t(x) * range;
    uint64_t l = uint64_t(m);
    if (l < range) {
      uint64_t t = -range % range;
      while (l < t) {
        x = next_u64();
        m = __uint128_t(x) * range;
        l = uint64_t(m);
      }
    }
    return uint64_t(m >> 64);
  }

  uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace srtod
