#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace stsc {

/// SplitMix64 finalizer. Used to derive well-mixed seeds from (seed, index) pairs.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// xorshift64* generator (Vigna 2014): shifts (12, 25, 27), multiplier
/// 0x2545F4914F6CDD1D. The algorithm is fixed so that every stream of random
/// numbers in the library is reproducible across platforms and compilers;
/// std:: distributions are deliberately avoided for the same reason.
class Xorshift64Star {
 public:
  using result_type = std::uint64_t;

  explicit Xorshift64Star(std::uint64_t seed) noexcept : state_(splitmix64(seed)) {
    if (state_ == 0) state_ = 0x9E3779B97F4A7C15ULL;
  }

  /// Stream keyed by a base seed and a sub-stream index (e.g. a step counter).
  static Xorshift64Star keyed(std::uint64_t seed, std::uint64_t index) noexcept {
    return Xorshift64Star(splitmix64(seed) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  result_type operator()() noexcept {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound) without modulo bias.
  std::uint64_t below(std::uint64_t bound) noexcept {
    const std::uint64_t limit = max() - max() % bound;
    std::uint64_t r;
    do {
      r = (*this)();
    } while (r >= limit);
    return r % bound;
  }

  /// Standard normal via Box-Muller (one of the pair is discarded).
  double gaussian() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

}  // namespace stsc
