#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace fedopt {

/// Deterministic splittable random stream.
///
/// Every consumer of randomness in this project takes an explicit Rng.
/// Independent streams are created with derive(), which mixes the stream's
/// *identity* (not its consumed state) with up to three key words, so the
/// set of streams spawned from a master seed does not depend on the order
/// in which values were drawn. This is what makes runs reproducible when
/// workers are processed in any order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : identity_(seed), state_(seed) {}

  /// Child stream keyed by (a, b, c). Same keys => same stream, always.
  Rng derive(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const {
    std::uint64_t h = identity_;
    h = combine(h, a);
    h = combine(h, b);
    h = combine(h, c);
    return Rng(h);
  }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return finalize(state_);
  }

  /// Uniform double in [0, 1), 53 random bits.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, bound). bound must be nonzero.
  std::uint64_t next_below(std::uint64_t bound) {
    using u128 = unsigned __int128;
    return static_cast<std::uint64_t>((u128{next_u64()} * u128{bound}) >> 64);
  }

  /// Standard normal via Box-Muller; second value cached.
  double next_gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    // 1 - u in (0, 1], keeps the log argument away from zero.
    const double u1 = 1.0 - next_unit();
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

 private:
  static std::uint64_t finalize(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  static std::uint64_t combine(std::uint64_t h, std::uint64_t x) {
    return finalize(h + 0x9E3779B97F4A7C15ULL + x);
  }

  std::uint64_t identity_;
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace fedopt
