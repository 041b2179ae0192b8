#pragma once

// Reference evaluators for the three performance metrics, written directly
// from their displayed formulas over raw parameter arrays. Kept independent
// of the cost_model implementation on purpose: tests compare the two.

#include <cstddef>
#include <vector>

namespace oracle {

struct RawSystem {
  // index 0 is the server, 1..N the workers
  std::vector<double> cpu_freq;     // F
  std::vector<double> cycles;      // C
  std::vector<double> capacitance;  // alpha
  std::vector<double> tx_power;     // p
  std::vector<double> tx_rate;      // r
  std::vector<double> q;            // q_{s_n}
  std::vector<double> bits;         // M_{s_n}
  std::size_t workers() const { return cpu_freq.size() - 1; }
};

inline double time_cost(double k0, const std::vector<double>& k, double batch,
                        const RawSystem& sys) {
  double compute = 0.0;
  double upload = 0.0;
  for (std::size_t n = 1; n <= sys.workers(); ++n) {
    const double t = sys.cycles[n] / sys.cpu_freq[n] * k[n - 1];
    if (t > compute) compute = t;
    const double u = sys.bits[n] / sys.tx_rate[n];
    if (u > upload) upload = u;
  }
  return k0 * (batch * compute + sys.cycles[0] / sys.cpu_freq[0] + upload +
               sys.bits[0] / sys.tx_rate[0]);
}

inline double energy_cost(double k0, const std::vector<double>& k,
                          double batch, const RawSystem& sys) {
  double compute = 0.0;
  double comm = 0.0;
  for (std::size_t n = 1; n <= sys.workers(); ++n) {
    compute += sys.capacitance[n] * sys.cycles[n] * sys.cpu_freq[n] *
               sys.cpu_freq[n] * k[n - 1];
    comm += sys.tx_power[n] * sys.bits[n] / sys.tx_rate[n];
  }
  comm += sys.tx_power[0] * sys.bits[0] / sys.tx_rate[0];
  const double server = sys.capacitance[0] * sys.cycles[0] * sys.cpu_freq[0] *
                        sys.cpu_freq[0];
  return k0 * (batch * compute + server + comm);
}

struct RawConstants {
  double lipschitz, sigma, second_moment, gamma, gap;
  std::size_t workers;
};

inline double conv_error(double k0, const std::vector<double>& k, double batch,
                         const RawSystem& sys, const RawConstants& c) {
  const double c1 = 2.0 * static_cast<double>(c.workers) * c.gap / c.gamma;
  const double c2 = 4.0 * c.gamma * c.gamma * c.second_moment *
                    c.second_moment * c.lipschitz * c.lipschitz;
  const double c3 =
      c.lipschitz * c.gamma * c.sigma * c.sigma / static_cast<double>(c.workers);
  double sum_k = 0.0;
  double max_k = 0.0;
  double noise = 0.0;
  for (std::size_t n = 1; n <= c.workers; ++n) {
    sum_k += k[n - 1];
    if (k[n - 1] > max_k) max_k = k[n - 1];
    const double qq = sys.q[0] + sys.q[n] + sys.q[0] * sys.q[n];
    noise += 2.0 * c.lipschitz * c.gamma * c.second_moment * c.second_moment *
             qq * k[n - 1] * k[n - 1];
  }
  return c1 / (k0 * sum_k) + c2 * max_k * max_k + c3 / batch + noise / sum_k;
}

}  // namespace oracle
