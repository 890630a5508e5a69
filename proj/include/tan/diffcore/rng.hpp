#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace tanflow {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view text) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// Counter-based random stream. The n-th draw is a pure function of
/// (key, n), so streams can be split by name or index into independent
/// children without sharing state. Distributions are implemented here
/// rather than through <random> so that sequences are identical across
/// standard library implementations.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed = 0) noexcept : key_(detail::mix64(seed ^ kSeedSalt)) {}

  /// Independent child stream identified by a name.
  RandomStream split(std::string_view name) const noexcept {
    return RandomStream(Key{detail::mix64(key_ ^ detail::mix64(detail::fnv1a(name)))});
  }

  /// Independent child stream identified by an index.
  RandomStream split(std::uint64_t index) const noexcept {
    return RandomStream(Key{detail::mix64(key_ + detail::mix64(index + kIndexSalt))});
  }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGolden);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0, 1).
  double uniform_open() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal() noexcept {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  /// Uniform integer in [0, n), unbiased (Lemire's method). n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept {
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next_u64()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  struct Key {
    std::uint64_t value;
  };
  explicit RandomStream(Key key) noexcept : key_(key.value) {}

  static constexpr std::uint64_t kSeedSalt = 0x5DEECE66DULL;
  static constexpr std::uint64_t kIndexSalt = 0xA0761D6478BD642FULL;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace tanflow
