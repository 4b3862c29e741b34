#pragma once

#include <cstdint>

namespace muprop {

/// SplitMix64 finalizer. Bijective avalanche mix of a 64-bit word.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream key from a parent key and up to two tags.
constexpr std::uint64_t derive_key(std::uint64_t key, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(mix64(key) ^ (a * 0xD1B54A32D192ED03ULL)) ^ (b * 0xABC98388FB8FAC03ULL));
}

/// Counter-based generator ("SplitMix64-CTR"): draw i of stream k is mix64(k + i*golden).
/// Streams are addressed by key, so the value of any draw does not depend on how many
/// draws other streams made.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix64(key_ + 0x9E3779B97F4A7C15ULL * (++counter_)); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one value per call; the pair partner is dropped).
  double normal();

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace muprop
