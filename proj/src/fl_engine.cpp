#include "fedopt/fl_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace fedopt::engine {
namespace {

double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

void check_finite(std::span<const double> v, const std::string& what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error("run_genqsgd: non-finite " + what);
    }
  }
}

std::vector<std::vector<std::int64_t>> even_split(std::int64_t total,
                                                  int workers) {
  std::vector<std::vector<std::int64_t>> sets(workers);
  std::int64_t next = 0;
  for (int n = 0; n < workers; ++n) {
    const std::int64_t count = total / workers + (n < total % workers ? 1 : 0);
    for (std::int64_t i = 0; i < count; ++i) sets[n].push_back(next++);
  }
  return sets;
}

class QuadraticTask final : public Task {
 public:
  QuadraticTask(std::int64_t dimension, int workers,
                std::vector<std::vector<double>> samples)
      : dimension_(dimension), samples_(std::move(samples)) {
    if (workers < 1 || samples_.empty() ||
        samples_.size() % static_cast<std::size_t>(workers) != 0) {
      throw std::invalid_argument(
          "quadratic task: sample count must be a positive multiple of the "
          "worker count");
    }
    worker_samples_ =
        even_split(static_cast<std::int64_t>(samples_.size()), workers);
    // f is minimized at the mean of all samples (equal per-worker counts).
    std::vector<double> mean(dimension_, 0.0);
    for (const auto& s : samples_) {
      for (std::int64_t d = 0; d < dimension_; ++d) mean[d] += s[d];
    }
    for (double& v : mean) v /= static_cast<double>(samples_.size());
    double value = 0.0;
    for (const auto& s : samples_) {
      double dist = 0.0;
      for (std::int64_t d = 0; d < dimension_; ++d) {
        const double diff = mean[d] - s[d];
        dist += diff * diff;
      }
      value += 0.5 * dist;
    }
    optimum_value_ = value / static_cast<double>(samples_.size());
  }

  std::int64_t dimension() const override { return dimension_; }

  double sample_loss(std::span<const double> x,
                     std::int64_t sample) const override {
    const auto& s = samples_[static_cast<std::size_t>(sample)];
    double dist = 0.0;
    for (std::int64_t d = 0; d < dimension_; ++d) {
      const double diff = x[d] - s[d];
      dist += diff * diff;
    }
    return 0.5 * dist;
  }

  void sample_gradient(std::span<const double> x, std::int64_t sample,
                       std::span<double> out) const override {
    const auto& s = samples_[static_cast<std::size_t>(sample)];
    for (std::int64_t d = 0; d < dimension_; ++d) out[d] = x[d] - s[d];
  }

 private:
  std::int64_t dimension_;
  std::vector<std::vector<double>> samples_;
};

class LogisticTask final : public Task {
 public:
  LogisticTask(std::int64_t dimension, int workers,
               std::int64_t samples_per_worker, std::uint64_t seed)
      : dimension_(dimension) {
    if (dimension < 2) {
      throw std::invalid_argument("logistic task: dimension must be >= 2");
    }
    Rng root(seed);
    Rng cluster_rng = root.derive(0x10);
    std::vector<double> cluster(dimension - 1);
    const double scale = 2.0 / std::sqrt(static_cast<double>(dimension));
    for (double& v : cluster) v = scale * cluster_rng.next_gaussian();

    const std::int64_t total =
        samples_per_worker * static_cast<std::int64_t>(workers);
    Rng sample_rng = root.derive(0x11);
    features_.resize(total);
    labels_.resize(total);
    for (std::int64_t i = 0; i < total; ++i) {
      const double label = sample_rng.next_unit() < 0.5 ? -1.0 : 1.0;
      labels_[i] = label;
      auto& f = features_[i];
      f.resize(dimension);
      for (std::int64_t d = 0; d + 1 < dimension; ++d) {
        f[d] = label * cluster[d] + sample_rng.next_gaussian();
      }
      f[dimension - 1] = 1.0;  // folded bias
    }
    worker_samples_ = even_split(total, workers);
  }

  std::int64_t dimension() const override { return dimension_; }

  double sample_loss(std::span<const double> x,
                     std::int64_t sample) const override {
    const double t = labels_[sample] * dot(x, sample);
    // log(1 + exp(-t)), stable for large |t|
    return t < -30.0 ? -t : std::log1p(std::exp(-t));
  }

  void sample_gradient(std::span<const double> x, std::int64_t sample,
                       std::span<double> out) const override {
    const double y = labels_[sample];
    const double t = y * dot(x, sample);
    const double sigma = 1.0 / (1.0 + std::exp(t));  // sigmoid(-t)
    const auto& f = features_[static_cast<std::size_t>(sample)];
    for (std::int64_t d = 0; d < dimension_; ++d) out[d] = -y * sigma * f[d];
  }

 private:
  double dot(std::span<const double> x, std::int64_t sample) const {
    const auto& f = features_[static_cast<std::size_t>(sample)];
    double s = 0.0;
    for (std::int64_t d = 0; d < dimension_; ++d) s += x[d] * f[d];
    return s;
  }

  std::int64_t dimension_;
  std::vector<std::vector<double>> features_;
  std::vector<double> labels_;
};

}  // namespace

double Task::full_loss(std::span<const double> x) const {
  double total = 0.0;
  for (const auto& samples : worker_samples_) {
    double worker = 0.0;
    for (std::int64_t i : samples) worker += sample_loss(x, i);
    total += worker / static_cast<double>(samples.size());
  }
  return total / static_cast<double>(worker_samples_.size());
}

std::vector<double> Task::full_gradient(std::span<const double> x) const {
  std::vector<double> grad(x.size(), 0.0);
  std::vector<double> g(x.size());
  for (const auto& samples : worker_samples_) {
    const double w = 1.0 / (static_cast<double>(samples.size()) *
                            static_cast<double>(worker_samples_.size()));
    for (std::int64_t i : samples) {
      sample_gradient(x, i, g);
      for (std::size_t d = 0; d < grad.size(); ++d) grad[d] += w * g[d];
    }
  }
  return grad;
}

std::vector<double> Task::worker_gradient(std::span<const double> x,
                                          int n) const {
  const auto& samples = worker_samples_.at(static_cast<std::size_t>(n));
  std::vector<double> grad(x.size(), 0.0);
  std::vector<double> g(x.size());
  for (std::int64_t i : samples) {
    sample_gradient(x, i, g);
    for (std::size_t d = 0; d < grad.size(); ++d) grad[d] += g[d];
  }
  for (double& v : grad) v /= static_cast<double>(samples.size());
  return grad;
}

std::unique_ptr<Task> make_quadratic_task(std::int64_t dimension, int workers,
                                          std::int64_t samples_per_worker,
                                          std::uint64_t seed) {
  Rng root(seed);
  Rng center_rng = root.derive(0x20);
  std::vector<double> center(dimension);
  for (double& v : center) v = center_rng.next_gaussian();

  Rng sample_rng = root.derive(0x21);
  const std::int64_t total =
      samples_per_worker * static_cast<std::int64_t>(workers);
  std::vector<std::vector<double>> samples(total);
  for (auto& s : samples) {
    s.resize(dimension);
    for (std::int64_t d = 0; d < dimension; ++d) {
      s[d] = center[d] + sample_rng.next_gaussian();
    }
  }
  return std::make_unique<QuadraticTask>(dimension, workers, std::move(samples));
}

std::unique_ptr<Task> make_quadratic_task_from_samples(
    std::int64_t dimension, int workers,
    const std::vector<std::vector<double>>& samples) {
  return std::make_unique<QuadraticTask>(dimension, workers, samples);
}

std::unique_ptr<Task> make_logistic_task(std::int64_t dimension, int workers,
                                         std::int64_t samples_per_worker,
                                         std::uint64_t seed) {
  return std::make_unique<LogisticTask>(dimension, workers, samples_per_worker,
                                        seed);
}

namespace {

void validate_run(const Task& task, const RunConfig& config) {
  const int workers = task.worker_count();
  const auto& p = config.params;
  if (p.global_iters < 1) {
    throw std::invalid_argument("run_genqsgd: global_iters must be >= 1");
  }
  if (static_cast<int>(p.local_iters.size()) != workers) {
    throw std::invalid_argument(
        "run_genqsgd: local iteration vector must match worker count");
  }
  for (std::int64_t k : p.local_iters) {
    if (k < 1) {
      throw std::invalid_argument("run_genqsgd: local_iters must be >= 1");
    }
  }
  if (p.batch < 1) {
    throw std::invalid_argument("run_genqsgd: batch must be >= 1");
  }
  for (const auto& samples : task.worker_samples()) {
    if (samples.empty()) {
      throw std::invalid_argument("run_genqsgd: empty worker sample set");
    }
    if (p.batch > static_cast<std::int64_t>(samples.size())) {
      throw std::invalid_argument(
          "run_genqsgd: batch exceeds a worker's sample count");
    }
  }
  if (static_cast<int>(config.node_quant.size()) != workers + 1) {
    throw std::invalid_argument(
        "run_genqsgd: need one quantizer spec per node (server + workers)");
  }
  for (const auto& spec : config.node_quant) {
    if (spec.dimension != static_cast<std::size_t>(task.dimension())) {
      throw std::invalid_argument(
          "run_genqsgd: quantizer dimension does not match the task");
    }
  }
  if (config.step_size < 0.0) {
    throw std::invalid_argument("run_genqsgd: step size must be >= 0");
  }
}

// Uniform mini-batch without replacement: partial Fisher-Yates over the
// worker's sample list. One next_below call per drawn element.
std::vector<std::int64_t> sample_batch(const std::vector<std::int64_t>& pool,
                                       std::int64_t batch, Rng& rng) {
  std::vector<std::int64_t> scratch = pool;
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (std::int64_t j = 0; j < batch; ++j) {
    const auto remaining = scratch.size() - static_cast<std::size_t>(j);
    const auto pick = static_cast<std::size_t>(rng.next_below(remaining)) +
                      static_cast<std::size_t>(j);
    std::swap(scratch[static_cast<std::size_t>(j)], scratch[pick]);
    out.push_back(scratch[static_cast<std::size_t>(j)]);
  }
  return out;
}

}  // namespace

RunTrace run_genqsgd(const Task& task, const RunConfig& config) {
  validate_run(task, config);
  const std::int64_t dim = task.dimension();
  const int workers = task.worker_count();
  const auto& params = config.params;
  const std::int64_t k_max =
      *std::max_element(params.local_iters.begin(), params.local_iters.end());

  RunTrace trace;
  trace.seed = config.seed;
  trace.params = params;
  trace.active_workers.resize(static_cast<std::size_t>(k_max));
  for (std::int64_t k = 1; k <= k_max; ++k) {
    std::int64_t count = 0;
    for (std::int64_t kn : params.local_iters) count += (k <= kn) ? 1 : 0;
    trace.active_workers[static_cast<std::size_t>(k - 1)] = count;
  }

  Rng master(config.seed);

  // Line 1: server draws x0, sets Delta(0) = x0, multicasts its quantization;
  // workers start from x_hat(0) = 0.
  std::vector<double> delta(dim);
  {
    Rng init = master.derive(kStreamInit);
    for (double& v : delta) v = config.init_scale * init.next_gaussian();
  }
  std::vector<double> x_hat(dim, 0.0);
  if (config.record_iterates) {
    trace.global_models.push_back(x_hat);
    trace.server_deltas.push_back(delta);
  }
  std::vector<double> down;
  {
    Rng down_rng = master.derive(kStreamDownlink, 0);
    down = quant::quantize(delta, config.node_quant[0], down_rng);
  }

  std::vector<std::vector<std::vector<double>>> locals(
      static_cast<std::size_t>(workers));
  std::vector<double> grad(dim), mean(dim);

  for (std::int64_t k0 = 1; k0 <= params.global_iters; ++k0) {
    // Workers (and the server) recover the shared global model.
    for (std::int64_t d = 0; d < dim; ++d) x_hat[d] += down[d];
    if (k0 == 1) trace.initial_loss = task.full_loss(x_hat);

    std::fill(delta.begin(), delta.end(), 0.0);
    for (int n = 0; n < workers; ++n) {
      const std::int64_t local_steps = params.local_iters[n];
      auto& history = locals[static_cast<std::size_t>(n)];
      history.assign(static_cast<std::size_t>(local_steps) + 1, {});
      history[0] = x_hat;
      std::vector<double> x_n = x_hat;
      Rng batch_rng =
          master.derive(kStreamBatch, static_cast<std::uint64_t>(n + 1),
                        static_cast<std::uint64_t>(k0));
      for (std::int64_t k = 1; k <= local_steps; ++k) {
        const auto batch =
            sample_batch(task.worker_samples()[static_cast<std::size_t>(n)],
                         params.batch, batch_rng);
        std::fill(grad.begin(), grad.end(), 0.0);
        std::vector<double> g(static_cast<std::size_t>(dim));
        for (std::int64_t i : batch) {
          task.sample_gradient(x_n, i, g);
          for (std::int64_t d = 0; d < dim; ++d) grad[d] += g[d];
        }
        const double inv_batch = 1.0 / static_cast<double>(params.batch);
        for (std::int64_t d = 0; d < dim; ++d) {
          x_n[d] -= config.step_size * grad[d] * inv_batch;
        }
        if (!std::all_of(x_n.begin(), x_n.end(),
                         [](double v) { return std::isfinite(v); })) {
          throw std::runtime_error(
              "run_genqsgd: non-finite model at global iteration " +
              std::to_string(k0) + ", worker " + std::to_string(n + 1) +
              ", local iteration " + std::to_string(k));
        }
        history[static_cast<std::size_t>(k)] = x_n;
      }
      // Upload the quantized local update; aggregate in worker-id order.
      for (std::int64_t d = 0; d < dim; ++d) x_n[d] -= x_hat[d];
      Rng up_rng =
          master.derive(kStreamUplink, static_cast<std::uint64_t>(n + 1),
                        static_cast<std::uint64_t>(k0));
      const auto upload =
          quant::quantize(x_n, config.node_quant[static_cast<std::size_t>(n) + 1],
                          up_rng);
      for (std::int64_t d = 0; d < dim; ++d) delta[d] += upload[d];
    }
    for (std::int64_t d = 0; d < dim; ++d) {
      delta[d] /= static_cast<double>(workers);
    }

    // Virtual-iteration bookkeeping: averaged models and gradient norms.
    std::vector<double>& norms = trace.grad_norm_sq.emplace_back();
    norms.resize(static_cast<std::size_t>(k_max));
    std::vector<std::vector<double>> means_this_round;
    for (std::int64_t k = 0; k <= k_max; ++k) {
      std::fill(mean.begin(), mean.end(), 0.0);
      for (int n = 0; n < workers; ++n) {
        const auto& history = locals[static_cast<std::size_t>(n)];
        const auto idx = static_cast<std::size_t>(
            std::min<std::int64_t>(k, params.local_iters[n]));
        for (std::int64_t d = 0; d < dim; ++d) mean[d] += history[idx][d];
      }
      for (std::int64_t d = 0; d < dim; ++d) {
        mean[d] /= static_cast<double>(workers);
      }
      if (k < k_max) {
        const auto g_full = task.full_gradient(mean);
        check_finite(g_full, "gradient in trace bookkeeping");
        norms[static_cast<std::size_t>(k)] = squared_norm(g_full);
      }
      if (config.record_iterates) means_this_round.push_back(mean);
    }
    if (config.record_iterates) {
      trace.virtual_means.push_back(std::move(means_this_round));
      trace.global_models.push_back(x_hat);
      trace.server_deltas.push_back(delta);
    }

    Rng down_rng =
        master.derive(kStreamDownlink, static_cast<std::uint64_t>(k0));
    down = quant::quantize(delta, config.node_quant[0], down_rng);
  }

  // Line 12: the final multicast is applied by server and workers alike.
  for (std::int64_t d = 0; d < dim; ++d) x_hat[d] += down[d];
  if (config.record_iterates) trace.global_models.push_back(x_hat);
  trace.final_model = std::move(x_hat);
  return trace;
}

double empirical_lhs(const RunTrace& trace) {
  const auto& params = trace.params;
  const double workers = static_cast<double>(params.local_iters.size());
  double local_sum = 0.0;
  for (std::int64_t k : params.local_iters) {
    local_sum += static_cast<double>(k);
  }
  double total = 0.0;
  for (const auto& norms : trace.grad_norm_sq) {
    for (std::size_t k = 0; k < norms.size(); ++k) {
      total += (static_cast<double>(trace.active_workers[k]) / workers) *
               norms[k];
    }
  }
  return total /
         (static_cast<double>(params.global_iters) * local_sum / workers);
}

TaskConstants estimate_constants(const Task& task, int probe_count,
                                 std::uint64_t seed, double probe_halfwidth) {
  if (probe_count < 2) {
    throw std::invalid_argument("estimate_constants: probe_count must be >= 2");
  }
  if (task.worker_samples().empty()) {
    throw std::invalid_argument("estimate_constants: task has no samples");
  }
  const auto dim = static_cast<std::size_t>(task.dimension());
  const int workers = task.worker_count();
  Rng root(seed);
  Rng probe_rng = root.derive(0x30);

  auto draw_point = [&](std::vector<double>& x) {
    for (double& v : x) {
      v = probe_halfwidth * (2.0 * probe_rng.next_unit() - 1.0);
    }
  };

  std::vector<double> x(dim), y(dim), g(dim);
  double lipschitz = 0.0;
  double var_max = 0.0;
  double moment_max = 0.0;
  for (int probe = 0; probe < probe_count; ++probe) {
    draw_point(x);
    draw_point(y);
    double dist_sq = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = x[d] - y[d];
      dist_sq += diff * diff;
    }
    const double dist = std::sqrt(dist_sq);
    for (int n = 0; n < workers; ++n) {
      const auto gx = task.worker_gradient(x, n);
      if (dist > 0.0) {
        const auto gy = task.worker_gradient(y, n);
        double diff_sq = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
          const double diff = gx[d] - gy[d];
          diff_sq += diff * diff;
        }
        lipschitz = std::max(lipschitz, std::sqrt(diff_sq) / dist);
      }
      const auto& samples = task.worker_samples()[static_cast<std::size_t>(n)];
      double var = 0.0;
      double moment = 0.0;
      for (std::int64_t i : samples) {
        task.sample_gradient(x, i, g);
        double dev_sq = 0.0;
        double norm_sq = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
          const double dev = g[d] - gx[d];
          dev_sq += dev * dev;
          norm_sq += g[d] * g[d];
        }
        var += dev_sq;
        moment += norm_sq;
      }
      var /= static_cast<double>(samples.size());
      moment /= static_cast<double>(samples.size());
      var_max = std::max(var_max, var);
      moment_max = std::max(moment_max, moment);
    }
  }

  // Short full-gradient pre-training run; the lowest loss seen estimates
  // the optimal value.
  TaskConstants constants;
  constants.lipschitz = lipschitz;
  constants.grad_variance = std::sqrt(var_max);
  constants.second_moment = std::sqrt(moment_max);
  std::vector<double> model(dim, 0.0);
  const double step = lipschitz > 0.0 ? 1.0 / lipschitz : 1.0;
  double best = task.full_loss(model);
  for (int iter = 0; iter < 200; ++iter) {
    const auto grad_full = task.full_gradient(model);
    for (std::size_t d = 0; d < dim; ++d) model[d] -= step * grad_full[d];
    best = std::min(best, task.full_loss(model));
  }
  constants.optimum_estimate = best;
  return constants;
}

}  // namespace fedopt::engine
