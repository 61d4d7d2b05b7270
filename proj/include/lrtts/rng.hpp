#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace lrtts {

/// SplitMix64 step. Used to expand a 64-bit seed into generator state and as
/// the finalizer of `stable_hash`.
constexpr std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// xoshiro256** 1.0 (Blackman & Vigna), state seeded by four SplitMix64
/// outputs of the user seed. Every stochastic component of the toolkit draws
/// from this generator so that datasets are bit-reproducible across platforms.
///
/// Gaussian variates use the Marsaglia polar method: pairs (u, v) uniform on
/// (-1, 1) are rejected unless 0 < s = u^2 + v^2 < 1, then both u*sqrt(-2 ln s / s)
/// and v*sqrt(-2 ln s / s) are returned, in that order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 bits: (next_u64() >> 11) * 2^-53.
  double uniform();

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, bound) by rejection on the top of the range.
  std::uint64_t below(std::uint64_t bound);

  double gaussian();

  /// Fisher-Yates from the back; identical permutations on every platform,
  /// unlike std::shuffle.
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Order-independent seed derivation: FNV-1a over (little-endian `seed`,
/// bytes of `key`, 0x00, little-endian `index`) followed by a SplitMix64
/// finalizer.
std::uint64_t stable_hash(std::uint64_t seed, std::string_view key, std::uint64_t index);

}  // namespace lrtts
