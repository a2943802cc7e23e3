#pragma once

#include <cstdint>

namespace svmamba {

/// xorshift64* stream. Every seeded fixture and weight generator in the
/// project draws from this so outputs are reproducible bit-for-bit.
class XorShift64Star {
 public:
  static constexpr std::uint64_t kZeroSeedState = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kMultiplier = 0x2545F4914F6CDD1DULL;

  explicit constexpr XorShift64Star(std::uint64_t seed) noexcept
      : state_(seed == 0 ? kZeroSeedState : seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * kMultiplier;
  }

  /// Uniform in [0, 1) from the top 24 bits of the next output.
  constexpr float next_float() noexcept {
    return static_cast<float>(next() >> 40) / 16777216.0f;
  }

  /// Uniform in [lo, hi) built on next_float.
  constexpr double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * static_cast<double>(next_float());
  }

  /// Uniform integer in [0, bound). Modulo bias is irrelevant at fixture sizes.
  constexpr std::uint64_t below(std::uint64_t bound) noexcept { return next() % bound; }

  constexpr std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace svmamba
