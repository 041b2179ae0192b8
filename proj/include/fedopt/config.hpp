#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedopt/cost_model.hpp"
#include "fedopt/fl_engine.hpp"
#include "fedopt/param_optimizer.hpp"
#include "fedopt/quantizer.hpp"

namespace fedopt::cli {

struct TaskConfig {
  std::string kind = "quadratic";  // quadratic | logistic | dataset
  std::int64_t dimension = 50;
  std::int64_t samples_per_worker = 200;
  double init_scale = 1.0;
  /// Quantization levels driving the simulator; 0 means no quantization.
  std::uint32_t server_levels = 0;
  std::vector<std::uint32_t> worker_levels;  // one entry, or one per worker
  std::string images;  // IDX files for kind == dataset
  std::string labels;
};

struct OptimizerConfig {
  double time_limit = 0.0;
  double error_limit = 0.0;
  double solver_tolerance = 1e-8;
  double outer_tolerance = 1e-8;
  int max_outer_iterations = 200;
  double worker_samples = 0.0;  // I_n entering the cost model / FedAvg
};

struct ExperimentConfig {
  int version = 1;
  cost::SystemProfile system;
  cost::LearnConstants learning;  // worker_count derived from system
  TaskConfig task;
  OptimizerConfig optimizer;
  std::optional<engine::AlgoParams> simulate_params;
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "out";
  std::string energy_comm_model = "payload_bits";  // or log_levels
};

/// The stock configuration: ten workers with log-spaced capabilities,
/// quantized exchange, and the optimizer limits used by the shipped
/// sweeps.
ExperimentConfig default_config();

ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);
void save_config(const ExperimentConfig& config,
                 const std::filesystem::path& path);

/// FNV-1a hash of the canonical JSON serialization, 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

opt::OptSpec make_opt_spec(const ExperimentConfig& config);

/// Task described by the config. A dataset task whose files are missing
/// degrades to the synthetic kind with a warning on `log`.
std::unique_ptr<engine::Task> make_task(const ExperimentConfig& config,
                                        std::ostream& log);

/// Per-node quantizer specs for simulation at the given model dimension.
std::vector<quant::QuantSpec> make_node_quant(const ExperimentConfig& config,
                                              std::int64_t dimension);

}  // namespace fedopt::cli
