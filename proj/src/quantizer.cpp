#include "fedopt/quantizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fedopt::quant {
namespace {

std::uint32_t level_index_bits(std::uint32_t levels) {
  // level indices take values 0..s
  return std::bit_width(levels);
}

void check_input(std::span<const double> y, const QuantSpec& spec) {
  if (y.size() != spec.dimension) {
    throw std::invalid_argument("quantize: dimension mismatch (vector " +
                                std::to_string(y.size()) + ", spec " +
                                std::to_string(spec.dimension) + ")");
  }
  for (double v : y) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("quantize: non-finite input component");
    }
  }
}

struct Draw {
  float norm = 0.0f;                 // reconstruction norm, float32-rounded
  std::vector<bool> negative;        // sign per coordinate
  std::vector<std::uint32_t> level;  // grid index in {0..s}
};

// Shared randomized rounding used by quantize() and encode(); both must
// consume the rng identically so a shared seed gives identical results.
Draw draw_levels(std::span<const double> y, const QuantSpec& spec, Rng& rng) {
  check_input(y, spec);
  const auto s = static_cast<double>(spec.levels);
  double norm_sq = 0.0;
  for (double v : y) norm_sq += v * v;
  const double norm = std::sqrt(norm_sq);

  Draw draw;
  draw.norm = static_cast<float>(norm);
  draw.negative.resize(y.size());
  draw.level.assign(y.size(), 0);
  if (norm == 0.0) return draw;

  for (std::size_t i = 0; i < y.size(); ++i) {
    draw.negative[i] = std::signbit(y[i]);
    const double scaled = std::min(std::abs(y[i]) / norm, 1.0) * s;
    double lower = std::floor(scaled);
    double frac = scaled - lower;
    if (lower >= s) {
      lower = s;
      frac = 0.0;
    }
    std::uint32_t level = static_cast<std::uint32_t>(lower);
    if (frac > 0.0 && rng.next_unit() < frac) ++level;
    draw.level[i] = level;
  }
  return draw;
}

std::vector<double> reconstruct(const Draw& draw, const QuantSpec& spec) {
  const double norm = static_cast<double>(draw.norm);
  const double s = static_cast<double>(spec.levels);
  std::vector<double> out(draw.level.size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double value = norm * (static_cast<double>(draw.level[i]) / s);
    out[i] = draw.negative[i] ? -value : value;
  }
  return out;
}

class BitWriter {
 public:
  void put(std::uint64_t value, unsigned width) {
    for (unsigned b = width; b-- > 0;) push_bit((value >> b) & 1u);
  }
  BitString finish() && { return BitString{std::move(bytes_), count_}; }

 private:
  void push_bit(std::uint64_t bit) {
    if (count_ % 8 == 0) bytes_.push_back(0);
    if (bit) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (count_ % 8));
    ++count_;
  }
  std::vector<std::uint8_t> bytes_;
  std::uint64_t count_ = 0;
};

class BitReader {
 public:
  explicit BitReader(const BitString& bits) : bits_(bits) {}
  std::uint64_t get(unsigned width) {
    std::uint64_t value = 0;
    for (unsigned b = 0; b < width; ++b) {
      if (pos_ >= bits_.bit_count) {
        throw std::runtime_error("decode: truncated bit string at bit " +
                                 std::to_string(pos_));
      }
      const std::uint8_t byte = bits_.bytes[pos_ / 8];
      value = (value << 1) | ((byte >> (7 - pos_ % 8)) & 1u);
      ++pos_;
    }
    return value;
  }

 private:
  const BitString& bits_;
  std::uint64_t pos_ = 0;
};

}  // namespace

QuantSpec QuantSpec::finite(std::uint32_t levels, std::size_t dimension) {
  if (levels == kInfinite) {
    throw std::invalid_argument("QuantSpec::finite: levels must be >= 1");
  }
  QuantSpec spec;
  spec.levels = levels;
  spec.dimension = dimension;
  spec.variance_bound = quant::variance_bound(levels, dimension);
  spec.payload_bits = quant::payload_bits(levels, dimension);
  return spec;
}

QuantSpec QuantSpec::infinite(std::size_t dimension) {
  QuantSpec spec;
  spec.levels = kInfinite;
  spec.dimension = dimension;
  spec.variance_bound = 0.0;
  spec.payload_bits = 0;
  return spec;
}

double variance_bound(std::uint32_t levels, std::size_t dimension) {
  if (levels < 1 || dimension < 1) {
    throw std::invalid_argument("variance_bound: levels and dimension must be >= 1");
  }
  const double s = static_cast<double>(levels);
  const double d = static_cast<double>(dimension);
  return std::min(d / (s * s), std::sqrt(d) / s);
}

std::uint64_t payload_bits(std::uint32_t levels, std::size_t dimension) {
  if (levels < 1 || dimension < 1) {
    throw std::invalid_argument("payload_bits: levels and dimension must be >= 1");
  }
  return 32 + static_cast<std::uint64_t>(dimension) * (1 + level_index_bits(levels));
}

std::vector<double> quantize(std::span<const double> y, const QuantSpec& spec,
                             Rng& rng) {
  if (spec.is_infinite()) {
    check_input(y, spec);
    return std::vector<double>(y.begin(), y.end());
  }
  return reconstruct(draw_levels(y, spec, rng), spec);
}

BitString encode(std::span<const double> y, const QuantSpec& spec, Rng& rng) {
  if (spec.is_infinite()) {
    throw std::invalid_argument("encode: requires a finite quantizer spec");
  }
  const Draw draw = draw_levels(y, spec, rng);
  const unsigned width = level_index_bits(spec.levels);
  BitWriter writer;
  writer.put(std::bit_cast<std::uint32_t>(draw.norm), 32);
  for (std::size_t i = 0; i < draw.level.size(); ++i) {
    writer.put(draw.negative[i] ? 1 : 0, 1);
    writer.put(draw.level[i], width);
  }
  return std::move(writer).finish();
}

std::vector<double> decode(const BitString& bits, const QuantSpec& spec) {
  if (spec.is_infinite()) {
    throw std::invalid_argument("decode: requires a finite quantizer spec");
  }
  if (bits.bit_count != spec.payload_bits) {
    throw std::runtime_error("decode: expected " +
                             std::to_string(spec.payload_bits) + " bits, got " +
                             std::to_string(bits.bit_count));
  }
  BitReader reader(bits);
  Draw draw;
  draw.norm = std::bit_cast<float>(
      static_cast<std::uint32_t>(reader.get(32)));
  const unsigned width = level_index_bits(spec.levels);
  draw.negative.resize(spec.dimension);
  draw.level.resize(spec.dimension);
  for (std::size_t i = 0; i < spec.dimension; ++i) {
    draw.negative[i] = reader.get(1) != 0;
    draw.level[i] = static_cast<std::uint32_t>(reader.get(width));
  }
  return reconstruct(draw, spec);
}

}  // namespace fedopt::quant
