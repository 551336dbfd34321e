#pragma once

// Pinned pseudo-random generators. Client and server regenerate the same
// perturbation vectors from a seed, so nothing here may depend on the
// standard library's implementation-defined distributions.
//
//   state expansion : splitmix64
//   uniform bits    : xoshiro256++ 1.0 (Blackman & Vigna)
//   normals         : Box-Muller on (0,1] x [0,1) uniform pairs

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace fedspzo {

using Seed = std::uint64_t;

// Upper bound (inclusive) of seeds sampled inside training loops.
inline constexpr Seed kMaxTrainingSeed = 100'000'000;

inline constexpr std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}
  constexpr std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return splitmix64_mix(state_);
  }

 private:
  std::uint64_t state_;
};

// Hashes a base seed together with integer tags (round id, client id, ...)
// into an independent child seed.
inline constexpr std::uint64_t derive_seed(std::uint64_t base,
                                           std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64_mix(base + 0x9e3779b97f4a7c15ULL);
  for (std::uint64_t t : tags) h = splitmix64_mix(h ^ splitmix64_mix(t + 0x632be59bd9b4e019ULL));
  return h;
}

class Xoshiro256pp {
 public:
  using result_type = std::uint64_t;

  explicit constexpr Xoshiro256pp(std::uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& w : s_) w = sm.next();
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  constexpr result_type operator()() { return next(); }

  constexpr std::uint64_t next() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform double in (0, 1]; safe to take the log of.
  double uniform_open_zero() { return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53; }

  // Unbiased integer in [0, bound) by rejection (Lemire). bound > 0.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const unsigned __int128 m = static_cast<unsigned __int128>(next()) * bound;
      if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
    }
  }

  // Unbiased integer in [0, hi].
  std::uint64_t inclusive(std::uint64_t hi) {
    return hi == max() ? next() : below(hi + 1);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4]{};
};

// Standard normal sequence for one perturbation pass. Values come in
// Box-Muller pairs; a pass that consumes an odd count simply drops the
// unused partner when the stream goes out of scope.
class GaussianStream {
 public:
  explicit GaussianStream(Seed seed) : rng_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = rng_.uniform_open_zero();
    const double u2 = rng_.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

 private:
  Xoshiro256pp rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fedspzo
