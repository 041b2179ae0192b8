#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedopt/quantizer.hpp"
#include "fedopt/rng.hpp"

namespace fedopt::engine {

/// Integer algorithm parameters: K0 global rounds, K_n local iterations
/// per worker, mini-batch size B.
struct AlgoParams {
  std::int64_t global_iters = 1;
  std::vector<std::int64_t> local_iters;
  std::int64_t batch = 1;
};

/// A learning problem with per-worker sample sets. The empirical risk is
/// f(x) = (1/N) sum_n mean_{i in I_n} F(x; xi_i).
class Task {
 public:
  virtual ~Task() = default;

  virtual std::int64_t dimension() const = 0;
  virtual double sample_loss(std::span<const double> x,
                             std::int64_t sample) const = 0;
  virtual void sample_gradient(std::span<const double> x, std::int64_t sample,
                               std::span<double> out) const = 0;

  int worker_count() const { return static_cast<int>(worker_samples_.size()); }
  const std::vector<std::vector<std::int64_t>>& worker_samples() const {
    return worker_samples_;
  }
  std::optional<double> optimum_value() const { return optimum_value_; }

  double full_loss(std::span<const double> x) const;
  std::vector<double> full_gradient(std::span<const double> x) const;
  /// Gradient of worker n's expected loss f_n.
  std::vector<double> worker_gradient(std::span<const double> x, int n) const;

 protected:
  std::vector<std::vector<std::int64_t>> worker_samples_;
  std::optional<double> optimum_value_;
};

/// Quadratic task F(x; xi) = 0.5 * |x - xi|^2, exact optimum recorded.
std::unique_ptr<Task> make_quadratic_task(std::int64_t dimension, int workers,
                                          std::int64_t samples_per_worker,
                                          std::uint64_t seed);
/// Same loss over caller-provided samples (one row per sample), split
/// evenly across workers in order.
std::unique_ptr<Task> make_quadratic_task_from_samples(
    std::int64_t dimension, int workers,
    const std::vector<std::vector<double>>& samples);
/// Binary cross-entropy on Gaussian-cluster features; the last feature
/// component is a constant 1 (folded bias).
std::unique_ptr<Task> make_logistic_task(std::int64_t dimension, int workers,
                                         std::int64_t samples_per_worker,
                                         std::uint64_t seed);

/// Rng stream keys used by the engine; part of the determinism contract
/// (reference loops in tests reproduce trajectories through these keys).
enum StreamTag : std::uint64_t {
  kStreamInit = 1,      // (kStreamInit)              model initialization
  kStreamDownlink = 2,  // (kStreamDownlink, k0)      server multicast draw
  kStreamUplink = 3,    // (kStreamUplink, n, k0)     worker upload draw
  kStreamBatch = 4,     // (kStreamBatch, n, k0)      mini-batch sampling
};

struct RunConfig {
  AlgoParams params;
  /// node_quant[0] is the server downlink spec; node_quant[n] the uplink
  /// spec of worker n (1-based over the N workers).
  std::vector<quant::QuantSpec> node_quant;
  double step_size = 0.0;
  std::uint64_t seed = 0;
  double init_scale = 1.0;
  /// Keep full iterate history (global models, virtual means). Costs
  /// O(K0 * K_max * D) memory; disable for large runs.
  bool record_iterates = true;
};

struct RunTrace {
  std::uint64_t seed = 0;
  AlgoParams params;
  double initial_loss = 0.0;  // f(x_hat^(1))
  /// x_hat^(k0) for k0 = 0..K0+1 (only when record_iterates).
  std::vector<std::vector<double>> global_models;
  /// virtual_means[k0-1][k] = x_bar^(k0,k) for k = 0..K_max, where entry 0
  /// is x_hat^(k0) (only when record_iterates).
  std::vector<std::vector<std::vector<double>>> virtual_means;
  /// grad_norm_sq[k0-1][k-1] = |grad f(x_bar^(k0,k-1))|^2, k = 1..K_max.
  std::vector<std::vector<double>> grad_norm_sq;
  /// N_k for k = 1..K_max.
  std::vector<std::int64_t> active_workers;
  /// Unquantized server aggregates Delta x_hat^(k0), k0 = 0..K0
  /// (only when record_iterates).
  std::vector<std::vector<double>> server_deltas;
  std::vector<double> final_model;  // x*(K,B)
};

/// Seeded execution of the quantized parallel mini-batch SGD loop.
RunTrace run_genqsgd(const Task& task, const RunConfig& config);

/// One realization of the convergence-theorem left-hand side:
/// weighted average of the recorded squared gradient norms.
double empirical_lhs(const RunTrace& trace);

struct TaskConstants {
  double lipschitz = 0.0;      // L
  double grad_variance = 0.0;  // sigma
  double second_moment = 0.0;  // G
  double optimum_estimate = 0.0;  // delta, from a short pre-training run
};

/// Probe-based estimates of (L, sigma, G, delta). Probes are drawn
/// uniformly from the box [-probe_halfwidth, +probe_halfwidth]^D.
TaskConstants estimate_constants(const Task& task, int probe_count,
                                 std::uint64_t seed,
                                 double probe_halfwidth = 3.0);

/// Line-oriented trace export: header metadata then one record per (k0, k).
void write_trace(const RunTrace& trace, const std::filesystem::path& path,
                 std::string_view config_hash);

/// Model blob: 16-byte header (magic "FOM1", u32 version, u64 dimension,
/// little-endian) followed by dimension float64 values.
void write_model(std::span<const double> model,
                 const std::filesystem::path& path);
std::vector<double> read_model(const std::filesystem::path& path);

}  // namespace fedopt::engine
