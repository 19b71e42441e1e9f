#pragma once

// Reproducible random streams. Every Monte Carlo path owns a stream keyed by
// (seed, path_index), so results never depend on how paths are scheduled.

#include <cstdint>
#include <limits>

namespace affine {

/// SplitMix64 (Steele, Lea, Flood). Used as a mixer and seeder.
class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  constexpr std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// xoshiro256** (Blackman, Vigna). Satisfies UniformRandomBitGenerator.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& w : s_) w = sm.next();
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t s_[4];
};

/// Key derivation: distinct (seed, index) pairs map to decorrelated streams.
inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t index) {
  SplitMix64 a(seed);
  const std::uint64_t hs = a.next();
  SplitMix64 b(hs ^ (index * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
  return b.next();
}

inline Stream stream_for(std::uint64_t seed, std::uint64_t index) {
  return Stream(stream_key(seed, index));
}

/// Child seed for an independent sub-experiment (e.g. one start point).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return stream_key(seed ^ 0xA0761D6478BD642FULL, tag);
}

}  // namespace affine
