#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "fedopt/cost_model.hpp"
#include "fedopt/rng.hpp"
#include "oracles/cost_oracle.hpp"

using namespace fedopt::cost;
using fedopt::Rng;

namespace {

// Profile with unit per-round coefficients: C/F = 1 everywhere, M/r = 1,
// alpha*C*F^2 = 1, p*M/r = 1.
SystemProfile unit_profile(int workers, double q = 0.0) {
  NodeProfile node;
  node.cpu_freq = 1.0;
  node.cycles_per_unit = 1.0;
  node.capacitance = 1.0;
  node.tx_power = 1.0;
  node.tx_rate = 1.0;
  node.quant_variance = q;
  node.quant_bits = 1.0;
  SystemProfile profile;
  profile.server = node;
  profile.workers.assign(static_cast<std::size_t>(workers), node);
  return profile;
}

ContinuousParams make_params(double k0, std::vector<double> k, double batch) {
  return ContinuousParams{k0, std::move(k), batch};
}

oracle::RawSystem raw_from(const SystemProfile& profile) {
  oracle::RawSystem raw;
  const auto push = [&raw](const NodeProfile& n) {
    raw.cpu_freq.push_back(n.cpu_freq);
    raw.cycles.push_back(n.cycles_per_unit);
    raw.capacitance.push_back(n.capacitance);
    raw.tx_power.push_back(n.tx_power);
    raw.tx_rate.push_back(n.tx_rate);
    raw.q.push_back(n.quant_variance);
    raw.bits.push_back(n.quant_bits);
  };
  push(profile.server);
  for (const auto& w : profile.workers) push(w);
  return raw;
}

SystemProfile random_profile(Rng& rng, int workers) {
  const auto node = [&rng](double q_hi) {
    NodeProfile n;
    n.cpu_freq = std::exp(rng.next_unit() * 6.0 + 6.0);
    n.cycles_per_unit = std::exp(rng.next_unit() * 5.0 + 3.0);
    n.capacitance = std::exp(rng.next_unit() * 3.0 - 30.0);
    n.tx_power = 0.2 + 3.0 * rng.next_unit();
    n.tx_rate = std::exp(rng.next_unit() * 4.0 + 10.0);
    n.quant_variance = q_hi * rng.next_unit();
    n.quant_bits = std::exp(rng.next_unit() * 4.0 + 8.0);
    return n;
  };
  SystemProfile profile;
  profile.server = node(5.0);
  for (int n = 0; n < workers; ++n) profile.workers.push_back(node(10.0));
  return profile;
}

}  // namespace

TEST_CASE("time cost hand value") {
  const auto profile = unit_profile(1);
  CHECK(time_cost(make_params(2, {3}, 1), profile) == 12.0);
}

TEST_CASE("time cost is linear in the number of rounds") {
  const auto profile = unit_profile(3);
  const auto params = make_params(5, {2, 7, 1}, 4);
  auto doubled = params;
  doubled.global_iters *= 2;
  CHECK(time_cost(doubled, profile) == 2.0 * time_cost(params, profile));
}

TEST_CASE("energy cost hand value") {
  const auto profile = unit_profile(1);
  CHECK(energy_cost(make_params(2, {3}, 1), profile) == 12.0);
}

TEST_CASE("energy: capacitance scales only the computation part") {
  Rng rng(21);
  auto profile = random_profile(rng, 3);
  const auto params = make_params(7, {2, 3, 4}, 5);
  const double base = energy_cost(params, profile);
  double comm = profile.server.tx_power * profile.server.quant_bits /
                profile.server.tx_rate;
  for (const auto& w : profile.workers) {
    comm += w.tx_power * w.quant_bits / w.tx_rate;
  }
  comm *= params.global_iters;
  const double lambda = 3.5;
  auto scaled = profile;
  scaled.server.capacitance *= lambda;
  for (auto& w : scaled.workers) w.capacitance *= lambda;
  const double scaled_energy = energy_cost(params, scaled);
  CHECK(scaled_energy - comm ==
        doctest::Approx(lambda * (base - comm)).epsilon(1e-12));
}

TEST_CASE("convergence error hand value") {
  // c1 = 4, c2 = 1, c3 = 2 via N=1, gamma=1, gap=2, G=1, L=1/2, sigma=2.
  LearnConstants constants{0.5, 2.0, 1.0, 1.0, 2.0, 1, 100};
  CHECK(constants.c1() == 4.0);
  CHECK(constants.c2() == 1.0);
  CHECK(constants.c3() == 2.0);
  const auto profile = unit_profile(1, 0.0);
  CHECK(conv_error(make_params(2, {2}, 2), profile, constants) == 6.0);
}

TEST_CASE("convergence error with q=0 and B=1 reduces term for term") {
  LearnConstants constants{0.05, 9.0, 0.8, 2.0, 1.5, 4, 64};
  const auto profile = unit_profile(4, 0.0);
  const auto params = make_params(6, {1, 2, 3, 2}, 1);
  const double sum_k = 8.0, max_k = 3.0;
  const double reduced = constants.c1() / (params.global_iters * sum_k) +
                         constants.c2() * max_k * max_k + constants.c3();
  CHECK(conv_error(params, profile, constants) ==
        doctest::Approx(reduced).epsilon(1e-15));
}

TEST_CASE("matches the reference evaluators on random draws") {
  Rng rng(777);
  for (int trial = 0; trial < 500; ++trial) {
    const int workers = 1 + static_cast<int>(rng.next_below(6));
    const auto profile = random_profile(rng, workers);
    const auto raw = raw_from(profile);
    ContinuousParams params;
    params.global_iters = std::exp(rng.next_unit() * 8.0);
    params.batch = std::exp(rng.next_unit() * 6.0);
    for (int n = 0; n < workers; ++n) {
      params.local_iters.push_back(std::exp(4.0 * rng.next_unit() - 1.0));
    }
    const double lipschitz = 0.01 + rng.next_unit();
    LearnConstants constants{lipschitz,
                             0.5 + 20.0 * rng.next_unit(),
                             0.1 + rng.next_unit(),
                             (0.1 + 0.85 * rng.next_unit()) / lipschitz,
                             0.1 + 3.0 * rng.next_unit(),
                             workers,
                             1000};
    const oracle::RawConstants raw_constants{
        constants.lipschitz, constants.grad_variance, constants.second_moment,
        constants.step_size, constants.initial_gap,
        static_cast<std::size_t>(workers)};

    const double t = time_cost(params, profile);
    const double e = energy_cost(params, profile);
    const double c = conv_error(params, profile, constants);
    const double to = oracle::time_cost(params.global_iters,
                                        params.local_iters, params.batch, raw);
    const double eo = oracle::energy_cost(params.global_iters,
                                          params.local_iters, params.batch, raw);
    const double co =
        oracle::conv_error(params.global_iters, params.local_iters,
                           params.batch, raw, raw_constants);
    CHECK(std::abs(t - to) <= 1e-12 * to);
    CHECK(std::abs(e - eo) <= 1e-12 * eo);
    CHECK(std::abs(c - co) <= 1e-12 * co);
  }
}

TEST_CASE("monotonicity in each parameter") {
  Rng rng(31337);
  const auto profile = random_profile(rng, 3);
  LearnConstants constants{0.05, 10.0, 0.7, 4.0, 1.0, 3, 500};
  const auto params = make_params(20, {3, 5, 2}, 8);
  const double t = time_cost(params, profile);
  const double e = energy_cost(params, profile);
  const double c = conv_error(params, profile, constants);

  auto bump = params;
  bump.global_iters *= 1.01;
  CHECK(time_cost(bump, profile) > t);
  CHECK(energy_cost(bump, profile) > e);
  CHECK(conv_error(bump, profile, constants) < c);  // first term shrinks

  for (std::size_t n = 0; n < 3; ++n) {
    auto local = params;
    local.local_iters[n] *= 1.01;
    CHECK(time_cost(local, profile) >= t);
    CHECK(energy_cost(local, profile) > e);
  }
  auto batch = params;
  batch.batch *= 1.01;
  CHECK(time_cost(batch, profile) > t);
  CHECK(energy_cost(batch, profile) > e);
  CHECK(conv_error(batch, profile, constants) < c);  // third term shrinks
}

TEST_CASE("quantization noise term vanishes at q = 0 and grows with q") {
  LearnConstants constants{0.1, 5.0, 0.9, 3.0, 1.0, 2, 100};
  auto clean = unit_profile(2, 0.0);
  const auto params = make_params(10, {2, 4}, 4);
  const double base = conv_error(params, clean, constants);
  const double no_noise = constants.c1() / (10.0 * 6.0) +
                          constants.c2() * 16.0 + constants.c3() / 4.0;
  CHECK(base == doctest::Approx(no_noise).epsilon(1e-15));
  double previous = base;
  for (double q : {0.5, 1.0, 2.0, 4.0}) {
    auto noisy = unit_profile(2, q);
    const double value = conv_error(params, noisy, constants);
    CHECK(value > previous);
    previous = value;
  }
}

TEST_CASE("first error term scales inversely with the round count") {
  LearnConstants constants{0.05, 10.0, 0.7, 4.0, 1.0, 3, 500};
  const auto profile = unit_profile(3, 2.0);
  const auto params = make_params(12, {2, 4, 3}, 5);
  auto doubled = params;
  doubled.global_iters *= 2.0;
  const double difference = conv_error(params, profile, constants) -
                            conv_error(doubled, profile, constants);
  const double sum_k = 9.0;
  CHECK(difference ==
        doctest::Approx(constants.c1() / (2.0 * 12.0 * sum_k)).epsilon(1e-12));
}

TEST_CASE("theorem bound definitional cases") {
  const auto profile = unit_profile(2, 0.0);
  // G = 0 wipes the second and fourth terms; f_init = f_star wipes the
  // first, leaving L*gamma*sigma^2/(N*B).
  LearnConstants constants{0.5, 3.0, 0.0, 1.0, 0.0, 2, 10};
  const auto params = make_params(4, {1, 1}, 5);
  const double rhs = theorem1_rhs(params, profile, constants, 2.0, 2.0);
  CHECK(rhs ==
        doctest::Approx(0.5 * 1.0 * 9.0 / (2.0 * 5.0)).epsilon(1e-15));

  LearnConstants full{0.1, 4.0, 0.6, 2.0, 0.0, 2, 10};
  const auto noisy = unit_profile(2, 1.5);
  const auto p2 = make_params(6, {2, 3}, 2);
  full.initial_gap = 1.25;
  const double direct = conv_error(p2, noisy, full);
  CHECK(theorem1_rhs(p2, noisy, full, 3.25, 2.0) ==
        doctest::Approx(direct).epsilon(1e-15));
  CHECK_THROWS_AS(theorem1_rhs(p2, noisy, full, 1.0, 2.0),
                  std::invalid_argument);
}

TEST_CASE("prose communication-energy variant") {
  const auto profile = unit_profile(2, 0.0);
  const auto params = make_params(3, {1, 1}, 1);
  // Eq-form: 3 * (2 + 1 + 3) = 18 (two compute units, server unit, three
  // unit transmit terms).
  CHECK(energy_cost(params, profile) == 18.0);
  // log-levels form replaces worker transmit energy 1 by D*p*log2(s)/r = 8.
  const std::vector<double> levels{4.0, 4.0};
  CHECK(energy_cost_log_levels(params, profile, levels, 4.0) ==
        doctest::Approx(3.0 * (2.0 + 1.0 + 1.0 + 2.0 * 8.0)).epsilon(1e-12));
  const std::vector<double> bad_levels{1.0, 4.0};
  CHECK_THROWS_AS(energy_cost_log_levels(params, profile, bad_levels, 4.0),
                  std::invalid_argument);
}
