#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace confroute {

/// 64-bit seed. The same seed reproduces the same draw sequence on every
/// platform: sampling below is defined directly on mt19937_64 output words,
/// not on the standard distribution classes (whose output is
/// implementation-specific).
struct RngSeed {
  std::uint64_t value{0};
};

class Rng {
 public:
  explicit Rng(RngSeed seed) : engine_(seed.value) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, bound), bound >= 1. Rejection sampling keeps the
  /// result exactly uniform.
  std::uint64_t next_below(std::uint64_t bound) {
    const std::uint64_t limit = (UINT64_MAX / bound) * bound;
    std::uint64_t v = engine_();
    while (v >= limit) {
      v = engine_();
    }
    return v % bound;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_unit() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Standard normal deviate (Box-Muller, pairs cached).
  double next_normal();

  /// In-place Fisher-Yates shuffle, descending index order.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(next_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_{false};
  double spare_{0.0};
};

}  // namespace confroute
