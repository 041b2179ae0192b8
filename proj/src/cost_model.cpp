#include "fedopt/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedopt::cost {
namespace {

void check_shapes(const ContinuousParams& params,
                  const SystemProfile& profile) {
  if (params.local_iters.size() != profile.workers.size()) {
    throw std::invalid_argument(
        "cost model: local iteration count does not match worker count");
  }
  if (profile.workers.empty()) {
    throw std::invalid_argument("cost model: at least one worker required");
  }
}

}  // namespace

double time_cost(const ContinuousParams& params,
                 const SystemProfile& profile) {
  check_shapes(params, profile);
  double worker_compute = 0.0;
  double worker_upload = 0.0;
  for (std::size_t n = 0; n < profile.workers.size(); ++n) {
    const NodeProfile& w = profile.workers[n];
    worker_compute =
        std::max(worker_compute, w.compute_time() * params.local_iters[n]);
    worker_upload = std::max(worker_upload, w.transmit_time());
  }
  const double per_round = params.batch * worker_compute +
                           profile.server.compute_time() + worker_upload +
                           profile.server.transmit_time();
  return params.global_iters * per_round;
}

double energy_cost(const ContinuousParams& params,
                   const SystemProfile& profile) {
  check_shapes(params, profile);
  double worker_compute = 0.0;
  double comm = profile.server.transmit_energy();
  for (std::size_t n = 0; n < profile.workers.size(); ++n) {
    const NodeProfile& w = profile.workers[n];
    worker_compute += w.compute_energy() * params.local_iters[n];
    comm += w.transmit_energy();
  }
  const double per_round =
      params.batch * worker_compute + profile.server.compute_energy() + comm;
  return params.global_iters * per_round;
}

double energy_cost_log_levels(const ContinuousParams& params,
                              const SystemProfile& profile,
                              std::span<const double> worker_levels,
                              double dimension) {
  check_shapes(params, profile);
  if (worker_levels.size() != profile.workers.size()) {
    throw std::invalid_argument(
        "energy_cost_log_levels: levels do not match worker count");
  }
  double worker_compute = 0.0;
  double comm = profile.server.transmit_energy();
  for (std::size_t n = 0; n < profile.workers.size(); ++n) {
    const NodeProfile& w = profile.workers[n];
    if (worker_levels[n] <= 1.0) {
      throw std::invalid_argument(
          "energy_cost_log_levels: levels must exceed 1");
    }
    worker_compute += w.compute_energy() * params.local_iters[n];
    comm += dimension * w.tx_power * std::log2(worker_levels[n]) / w.tx_rate;
  }
  const double per_round =
      params.batch * worker_compute + profile.server.compute_energy() + comm;
  return params.global_iters * per_round;
}

double quant_noise_weight(const NodeProfile& server, const NodeProfile& worker,
                          const LearnConstants& constants) {
  const double q0 = server.quant_variance;
  const double qn = worker.quant_variance;
  return 2.0 * constants.lipschitz * constants.step_size *
         constants.second_moment * constants.second_moment *
         (q0 + qn + q0 * qn);
}

double conv_error(const ContinuousParams& params, const SystemProfile& profile,
                  const LearnConstants& constants) {
  check_shapes(params, profile);
  double local_sum = 0.0;
  double local_max = 0.0;
  double noise_num = 0.0;
  for (std::size_t n = 0; n < profile.workers.size(); ++n) {
    const double k = params.local_iters[n];
    local_sum += k;
    local_max = std::max(local_max, k);
    noise_num +=
        quant_noise_weight(profile.server, profile.workers[n], constants) * k * k;
  }
  return constants.c1() / (params.global_iters * local_sum) +
         constants.c2() * local_max * local_max + constants.c3() / params.batch +
         noise_num / local_sum;
}

double theorem1_rhs(const ContinuousParams& params,
                    const SystemProfile& profile,
                    const LearnConstants& constants, double f_init,
                    double f_star) {
  check_shapes(params, profile);
  if (f_init < f_star) {
    throw std::invalid_argument("theorem1_rhs: f_init must be >= f_star");
  }
  LearnConstants exact = constants;
  exact.initial_gap = f_init - f_star;
  return conv_error(params, profile, exact);
}

}  // namespace fedopt::cost
