#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace npv {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t hash_combine(uint64_t seed, uint64_t v) {
  uint64_t s = seed ^ (0x9e3779b97f4a7c15ull + (v << 6) + (v >> 2));
  return splitmix64(s);
}

inline uint64_t hash_str(uint64_t seed, std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  uint64_t st = h;
  return splitmix64(st);
}

// Deterministic RNG with fixed algorithms for every distribution, so streams
// are reproducible across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // warm up so that small seeds do not produce correlated first draws
    splitmix64(state_);
    splitmix64(state_);
  }

  static Rng keyed(uint64_t seed, std::string_view key) { return Rng(hash_str(seed, key)); }
  static Rng keyed(uint64_t seed, std::string_view key, uint64_t a) {
    return Rng(hash_combine(hash_str(seed, key), a));
  }
  static Rng keyed(uint64_t seed, uint64_t a, uint64_t b = 0) {
    return Rng(hash_combine(hash_combine(seed, a), b));
  }

  uint64_t next_u64() { return splitmix64(state_); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  uint64_t uniform_index(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // standard normal via Box-Muller; one cached spare
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace npv
