#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fedopt::cost {

/// Per-node system parameters. `cycles_per_unit` is the per-sample gradient
/// cost for workers and the per-aggregation cost for the server.
struct NodeProfile {
  double cpu_freq = 0.0;        // F, cycles/s
  double cycles_per_unit = 0.0; // C, cycles
  double capacitance = 0.0;     // alpha, J*s^2/cycle^3
  double tx_power = 0.0;        // p, W
  double tx_rate = 0.0;         // r, b/s
  double quant_variance = 0.0;  // q_s
  double quant_bits = 0.0;      // M_s, bits

  /// Per-unit compute time C/F (s) and transmit time M/r (s).
  double compute_time() const { return cycles_per_unit / cpu_freq; }
  double transmit_time() const { return quant_bits / tx_rate; }
  /// Per-unit compute energy alpha*C*F^2 (J) and transmit energy p*M/r (J).
  double compute_energy() const {
    return capacitance * cycles_per_unit * cpu_freq * cpu_freq;
  }
  double transmit_energy() const { return tx_power * quant_bits / tx_rate; }
};

struct SystemProfile {
  NodeProfile server;
  std::vector<NodeProfile> workers;

  int worker_count() const { return static_cast<int>(workers.size()); }
};

/// Constants of the learning problem plus the derived bound coefficients.
/// `initial_gap` is the configured scalar f(x_hat_1) - delta entering c1;
/// it is supplied by config so the optimizer is independent of any run.
struct LearnConstants {
  double lipschitz = 0.0;      // L
  double grad_variance = 0.0;  // sigma
  double second_moment = 0.0;  // G
  double step_size = 0.0;      // gamma
  double initial_gap = 0.0;    // f(x_hat_1) - delta
  int worker_count = 0;        // N
  std::int64_t dimension = 0;  // D

  double c1() const { return 2.0 * worker_count * initial_gap / step_size; }
  double c2() const {
    const double gl = second_moment * lipschitz;
    return 4.0 * step_size * step_size * gl * gl;
  }
  double c3() const {
    return lipschitz * step_size * grad_variance * grad_variance /
           worker_count;
  }
};

/// Algorithm parameters in continuous-relaxed form; the integer evaluation
/// path uses the same functions with integral values.
struct ContinuousParams {
  double global_iters = 0.0;        // K0
  std::vector<double> local_iters;  // K_n, one per worker
  double batch = 0.0;               // B
};

/// Wall-clock cost T(K,B) in seconds.
double time_cost(const ContinuousParams& params, const SystemProfile& profile);

/// Energy cost E(K,B) in joules, with payload-bit communication terms.
double energy_cost(const ContinuousParams& params, const SystemProfile& profile);

/// Variant of the worker communication energy using D*p*log2(s)/r per
/// worker instead of p*M/r; selectable via config, never the default.
double energy_cost_log_levels(const ContinuousParams& params,
                              const SystemProfile& profile,
                              std::span<const double> worker_levels,
                              double dimension);

/// Coefficient of K_n^2 in the quantization-noise term:
/// 2*L*gamma*G^2*(q_s0 + q_sn + q_s0*q_sn).
double quant_noise_weight(const NodeProfile& server, const NodeProfile& worker,
                          const LearnConstants& constants);

/// Convergence error bound C(K,B) with the configured delta surrogate.
double conv_error(const ContinuousParams& params, const SystemProfile& profile,
                  const LearnConstants& constants);

/// The convergence bound with the true gap f_init - f_star in place of the
/// delta surrogate; used by the bound-verification tests.
double theorem1_rhs(const ContinuousParams& params,
                    const SystemProfile& profile,
                    const LearnConstants& constants, double f_init,
                    double f_star);

}  // namespace fedopt::cost
