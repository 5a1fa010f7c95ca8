#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace selfbc {

// SplitMix64: used only to expand a 64-bit seed into xoshiro state.
inline std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// xoshiro256** (Blackman & Vigna). Each call to next() advances the
/// 256-bit state by exactly one xoshiro step. Seeding fills the four state
/// words with four consecutive SplitMix64 outputs of the seed.
///
/// All derived draws are defined here rather than via <random> distributions,
/// whose output is implementation-defined:
///   uniform()      = (next() >> 11) * 2^-53                 one step, [0,1)
///   uniform(lo,hi) = lo + (hi - lo) * uniform()             one step
///   normal()       = Box-Muller cosine branch               two steps
///   index(n)       = high 64 bits of next() * n             one step
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::uint64_t index(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  const std::array<std::uint64_t, 4>& state() const { return state_; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<std::uint64_t, 4> state_{};
};

// Fixed per-component offsets off a run's root seed.
enum class Stream : std::uint64_t {
  kData = 1,
  kInit = 2,
  kNoise = 3,
  kEval = 4,
  kSample = 5,
  kMdp = 6,
};

/// Stream `s` of root seed `root` (optionally sub-indexed, e.g. per ensemble
/// member) is seeded with root + 0x9E3779B97F4A7C15 * (s + 64 * sub).
inline Rng make_stream(std::uint64_t root, Stream s, std::uint64_t sub = 0) {
  const std::uint64_t offset = static_cast<std::uint64_t>(s) + 64 * sub;
  return Rng(root + 0x9E3779B97F4A7C15ULL * offset);
}

}  // namespace selfbc
