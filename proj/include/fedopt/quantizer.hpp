#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedopt/rng.hpp"

namespace fedopt::quant {

/// Parameters of the norm-scaled stochastic uniform quantizer.
///
/// `levels == kInfinite` denotes the identity map (no quantization,
/// zero variance). Finite specs carry the derived variance constant
/// q_s = min(D/s^2, sqrt(D)/s) and the fixed-length payload size in bits.
struct QuantSpec {
  static constexpr std::uint32_t kInfinite = 0;

  std::uint32_t levels = kInfinite;
  std::size_t dimension = 0;
  double variance_bound = 0.0;     // q_s
  std::uint64_t payload_bits = 0;  // M_s

  bool is_infinite() const { return levels == kInfinite; }

  static QuantSpec finite(std::uint32_t levels, std::size_t dimension);
  static QuantSpec infinite(std::size_t dimension);
};

/// q_s for the shipped quantizer: min(D/s^2, sqrt(D)/s).
double variance_bound(std::uint32_t levels, std::size_t dimension);

/// Fixed-length payload: 32-bit norm plus, per coordinate, one sign bit
/// and a ceil(log2(s+1))-bit level index.
std::uint64_t payload_bits(std::uint32_t levels, std::size_t dimension);

/// Unbiased stochastic quantization of y. Identity for infinite specs.
/// Output values are exactly the values decode(encode(y)) reproduces:
/// the reconstruction norm is the float32-rounded l2 norm.
std::vector<double> quantize(std::span<const double> y, const QuantSpec& spec,
                             Rng& rng);

/// Packed quantizer output, MSB-first:
/// [32-bit IEEE-754 big-endian norm][per coordinate: sign bit, level index].
struct BitString {
  std::vector<std::uint8_t> bytes;
  std::uint64_t bit_count = 0;
};

BitString encode(std::span<const double> y, const QuantSpec& spec, Rng& rng);
std::vector<double> decode(const BitString& bits, const QuantSpec& spec);

}  // namespace fedopt::quant
