#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "fedopt/quantizer.hpp"
#include "fedopt/rng.hpp"

using fedopt::Rng;
using namespace fedopt::quant;

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t dim, double scale) {
  std::vector<double> v(dim);
  for (double& x : v) x = scale * rng.next_gaussian();
  return v;
}

}  // namespace

TEST_CASE("variance bound closed form") {
  CHECK(variance_bound(1, 2) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(variance_bound(1, 1) == 1.0);
  CHECK(variance_bound(4, 16) == 1.0);
  CHECK_THROWS_AS(variance_bound(0, 4), std::invalid_argument);
}

TEST_CASE("payload bits closed form") {
  CHECK(payload_bits(1, 3) == 38);
  CHECK(payload_bits(3, 1) == 35);
  CHECK(payload_bits(1, 101632) == 203296);
}

TEST_CASE("spec factories enforce the derived constants") {
  const QuantSpec finite = QuantSpec::finite(5, 8);
  CHECK(finite.variance_bound == variance_bound(5, 8));
  CHECK(finite.payload_bits == payload_bits(5, 8));
  const QuantSpec infinite = QuantSpec::infinite(8);
  CHECK(infinite.is_infinite());
  CHECK(infinite.variance_bound == 0.0);
}

TEST_CASE("zero vector maps to zero") {
  const QuantSpec spec = QuantSpec::finite(4, 6);
  Rng rng(7);
  const std::vector<double> zero(6, 0.0);
  CHECK(quantize(zero, spec, rng) == zero);
}

TEST_CASE("single coordinate sits exactly on the grid") {
  // |y_1| / |y| = 1, so every draw lands on the top level; only the
  // float32 norm rounding remains.
  const QuantSpec spec = QuantSpec::finite(3, 1);
  const std::vector<double> y{0.7};
  Rng a(1), b(99);
  const auto qa = quantize(y, spec, a);
  const auto qb = quantize(y, spec, b);
  CHECK(qa == qb);
  CHECK(qa[0] == doctest::Approx(0.7).epsilon(1e-6));
  CHECK(qa[0] == static_cast<double>(static_cast<float>(0.7)));
}

TEST_CASE("infinite levels are the identity") {
  const QuantSpec spec = QuantSpec::infinite(5);
  Rng rng(3);
  const auto y = random_vector(rng, 5, 2.0);
  Rng q(4);
  CHECK(quantize(y, spec, q) == y);
}

TEST_CASE("monte carlo mean of (3,4) at one level") {
  const QuantSpec spec = QuantSpec::finite(1, 2);
  const std::vector<double> y{3.0, 4.0};
  constexpr int kSamples = 100000;
  Rng rng(42);
  std::vector<double> sum(2, 0.0), sum_sq(2, 0.0);
  for (int i = 0; i < kSamples; ++i) {
    const auto q = quantize(y, spec, rng);
    for (int d = 0; d < 2; ++d) {
      sum[d] += q[d];
      sum_sq[d] += q[d] * q[d];
    }
  }
  for (int d = 0; d < 2; ++d) {
    const double mean = sum[d] / kSamples;
    const double var = sum_sq[d] / kSamples - mean * mean;
    const double std_err = std::sqrt(var / kSamples);
    CHECK(std::abs(mean - y[d]) <= 4.0 * std_err);
  }
}

TEST_CASE("unbiased within four standard errors across specs") {
  Rng meta(2024);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t dim = 1 + meta.next_below(12);
    const auto levels = static_cast<std::uint32_t>(1 + meta.next_below(8));
    const QuantSpec spec = QuantSpec::finite(levels, dim);
    const auto y = random_vector(meta, dim, 1.5);
    constexpr int kSamples = 20000;
    Rng rng = meta.derive(77, trial);
    std::vector<double> sum(dim, 0.0), sum_sq(dim, 0.0);
    for (int i = 0; i < kSamples; ++i) {
      const auto q = quantize(y, spec, rng);
      for (std::size_t d = 0; d < dim; ++d) {
        sum[d] += q[d];
        sum_sq[d] += q[d] * q[d];
      }
    }
    for (std::size_t d = 0; d < dim; ++d) {
      const double mean = sum[d] / kSamples;
      const double var = std::max(sum_sq[d] / kSamples - mean * mean, 0.0);
      const double std_err = std::sqrt(var / kSamples) + 1e-12;
      CHECK(std::abs(mean - y[d]) <= 4.0 * std_err);
    }
  }
}

TEST_CASE("empirical variance stays under the bound") {
  Rng meta(5);
  for (int trial = 0; trial < 4; ++trial) {
    const std::size_t dim = 2 + meta.next_below(10);
    const auto levels = static_cast<std::uint32_t>(1 + meta.next_below(6));
    const QuantSpec spec = QuantSpec::finite(levels, dim);
    double worst = 0.0;
    Rng rng = meta.derive(13, trial);
    for (int v = 0; v < 250; ++v) {
      const auto y = random_vector(meta, dim, 1.0);
      double norm_sq = 0.0;
      for (double x : y) norm_sq += x * x;
      if (norm_sq == 0.0) continue;
      double err_sum = 0.0;
      constexpr int kSamples = 400;
      for (int i = 0; i < kSamples; ++i) {
        const auto q = quantize(y, spec, rng);
        double err = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
          err += (q[d] - y[d]) * (q[d] - y[d]);
        }
        err_sum += err;
      }
      worst = std::max(worst, err_sum / kSamples / norm_sq);
    }
    CHECK(worst <= spec.variance_bound * 1.05);
  }
}

TEST_CASE("identical seeds give bit-identical output") {
  const QuantSpec spec = QuantSpec::finite(5, 16);
  Rng data(11);
  const auto y = random_vector(data, 16, 3.0);
  Rng a(123), b(123);
  CHECK(quantize(y, spec, a) == quantize(y, spec, b));
  Rng c(123), d(456);
  CHECK(quantize(y, spec, c) != quantize(y, spec, d));
}

TEST_CASE("encode emits exactly payload_bits and round-trips") {
  const QuantSpec spec = QuantSpec::finite(1, 3);
  Rng rng(9);
  const std::vector<double> zero(3, 0.0);
  const auto bits = encode(zero, spec, rng);
  CHECK(bits.bit_count == 38);
  CHECK(bits.bit_count == spec.payload_bits);
  CHECK(decode(bits, spec) == zero);
}

TEST_CASE("decode(encode(y)) equals quantize(y) under a shared seed") {
  const QuantSpec spec = QuantSpec::finite(5, 8);
  Rng data(31);
  for (int trial = 0; trial < 100; ++trial) {
    const auto y = random_vector(data, 8, 2.0);
    Rng enc_rng = Rng(500).derive(trial);
    Rng q_rng = Rng(500).derive(trial);
    const auto bits = encode(y, spec, enc_rng);
    CHECK(bits.bit_count == spec.payload_bits);
    CHECK(decode(bits, spec) == quantize(y, spec, q_rng));
  }
}

TEST_CASE("error paths") {
  const QuantSpec spec = QuantSpec::finite(3, 4);
  Rng rng(1);
  std::vector<double> wrong(3, 1.0);
  CHECK_THROWS_AS(quantize(wrong, spec, rng), std::invalid_argument);
  std::vector<double> bad(4, 1.0);
  bad[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(quantize(bad, spec, rng), std::invalid_argument);

  std::vector<double> good(4, 1.0);
  auto bits = encode(good, spec, rng);
  bits.bit_count -= 3;  // truncated transmission
  CHECK_THROWS_AS(decode(bits, spec), std::runtime_error);
}
