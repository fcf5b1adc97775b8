#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace lala {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based random stream: value k is a pure function of (key, k).
///
/// Every consumer (environment, exploration, dropout, sampling) owns its own
/// stream derived from the run seed, so draws in one never shift another.
/// Satisfies UniformRandomBitGenerator, but the helpers below are preferred
/// because their output does not depend on the standard library vendor.
class Stream {
public:
  using result_type = std::uint64_t;

  Stream() = default;
  explicit Stream(std::uint64_t key) noexcept : key_(splitmix64(key)) {}
  Stream(std::uint64_t key, std::uint64_t subkey) noexcept
      : key_(splitmix64(splitmix64(key) ^ (subkey * 0xd1b54a32d192ed03ULL))) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    return splitmix64(key_ ^ splitmix64(counter_++));
  }

  /// Uniform in [0, 1).
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) noexcept {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  /// Standard normal via Box-Muller (no cached second value, keeps the stream stateless).
  double normal() noexcept {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::uint64_t counter() const noexcept { return counter_; }
  std::uint64_t key() const noexcept { return key_; }

  /// Independent child stream.
  Stream fork(std::uint64_t tag) const noexcept { return Stream(key_, tag); }

private:
  std::uint64_t key_ = splitmix64(0);
  std::uint64_t counter_ = 0;
};

}  // namespace lala
