#include "fedopt/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "fedopt/idx.hpp"

namespace fedopt::cli {
namespace {

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw std::invalid_argument("config: " + path + ": " + message);
}

const nlohmann::json& expect_object(const nlohmann::json& j,
                                    const std::string& path,
                                    const std::set<std::string>& required,
                                    const std::set<std::string>& optional = {}) {
  if (!j.is_object()) fail(path, "expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!required.count(key) && !optional.count(key)) {
      fail(path + "." + key, "unknown key");
    }
  }
  for (const auto& key : required) {
    if (!j.contains(key)) fail(path + "." + key, "missing");
  }
  return j;
}

double get_number(const nlohmann::json& j, const std::string& path,
                  const std::string& key, double min_value,
                  bool strict = true) {
  const auto& v = j.at(key);
  if (!v.is_number()) fail(path + "." + key, "expected a number");
  const double x = v.get<double>();
  if (strict ? !(x > min_value) : !(x >= min_value)) {
    fail(path + "." + key,
         "must be " + std::string(strict ? "> " : ">= ") +
             std::to_string(min_value));
  }
  return x;
}

std::int64_t get_integer(const nlohmann::json& j, const std::string& path,
                         const std::string& key, std::int64_t min_value) {
  const auto& v = j.at(key);
  if (!v.is_number_integer()) fail(path + "." + key, "expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < min_value) {
    fail(path + "." + key, "must be >= " + std::to_string(min_value));
  }
  return x;
}

cost::NodeProfile node_from_json(const nlohmann::json& j,
                                 const std::string& path) {
  expect_object(j, path,
                {"cpu_freq", "cycles", "capacitance", "tx_power", "tx_rate",
                 "quant_variance", "quant_bits"});
  cost::NodeProfile node;
  node.cpu_freq = get_number(j, path, "cpu_freq", 0.0);
  node.cycles_per_unit = get_number(j, path, "cycles", 0.0);
  node.capacitance = get_number(j, path, "capacitance", 0.0);
  node.tx_power = get_number(j, path, "tx_power", 0.0);
  node.tx_rate = get_number(j, path, "tx_rate", 0.0);
  node.quant_variance = get_number(j, path, "quant_variance", 0.0, false);
  node.quant_bits = get_number(j, path, "quant_bits", 0.0);
  return node;
}

nlohmann::json node_to_json(const cost::NodeProfile& node) {
  return {{"cpu_freq", node.cpu_freq},
          {"cycles", node.cycles_per_unit},
          {"capacitance", node.capacitance},
          {"tx_power", node.tx_power},
          {"tx_rate", node.tx_rate},
          {"quant_variance", node.quant_variance},
          {"quant_bits", node.quant_bits}};
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
  expect_object(j, "$",
                {"version", "system", "learning", "task", "optimizer", "seeds",
                 "output_dir", "energy_comm_model"},
                {"simulate"});
  ExperimentConfig config;
  config.version = static_cast<int>(get_integer(j, "$", "version", 1));
  if (config.version != 1) fail("$.version", "unsupported version");

  const auto& system = expect_object(j.at("system"), "$.system",
                                     {"server", "workers"});
  config.system.server = node_from_json(system.at("server"), "$.system.server");
  if (!system.at("workers").is_array() || system.at("workers").empty()) {
    fail("$.system.workers", "expected a nonempty array");
  }
  int index = 0;
  for (const auto& w : system.at("workers")) {
    config.system.workers.push_back(node_from_json(
        w, "$.system.workers[" + std::to_string(index++) + "]"));
  }

  const std::string lpath = "$.learning";
  const auto& learning = expect_object(
      j.at("learning"), lpath,
      {"lipschitz", "grad_variance", "second_moment", "step_size",
       "initial_gap", "dimension"});
  config.learning.lipschitz = get_number(learning, lpath, "lipschitz", 0.0);
  config.learning.grad_variance =
      get_number(learning, lpath, "grad_variance", 0.0);
  config.learning.second_moment =
      get_number(learning, lpath, "second_moment", 0.0);
  config.learning.step_size = get_number(learning, lpath, "step_size", 0.0,
                                         /*strict=*/false);
  config.learning.initial_gap =
      get_number(learning, lpath, "initial_gap", 0.0, /*strict=*/false);
  config.learning.dimension = get_integer(learning, lpath, "dimension", 1);
  config.learning.worker_count = config.system.worker_count();

  const std::string tpath = "$.task";
  const auto& task = expect_object(
      j.at("task"), tpath,
      {"kind", "dimension", "samples_per_worker", "init_scale",
       "server_levels", "worker_levels"},
      {"images", "labels"});
  config.task.kind = task.at("kind").get<std::string>();
  if (config.task.kind != "quadratic" && config.task.kind != "logistic" &&
      config.task.kind != "dataset") {
    fail(tpath + ".kind", "expected quadratic, logistic, or dataset");
  }
  config.task.dimension = get_integer(task, tpath, "dimension", 1);
  config.task.samples_per_worker =
      get_integer(task, tpath, "samples_per_worker", 1);
  config.task.init_scale = get_number(task, tpath, "init_scale", 0.0, false);
  config.task.server_levels = static_cast<std::uint32_t>(
      get_integer(task, tpath, "server_levels", 0));
  if (!task.at("worker_levels").is_array() ||
      task.at("worker_levels").empty()) {
    fail(tpath + ".worker_levels", "expected a nonempty array");
  }
  for (const auto& v : task.at("worker_levels")) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
      fail(tpath + ".worker_levels", "expected nonnegative integers");
    }
    config.task.worker_levels.push_back(v.get<std::uint32_t>());
  }
  const auto levels = config.task.worker_levels.size();
  if (levels != 1 && levels != config.system.workers.size()) {
    fail(tpath + ".worker_levels", "expected 1 entry or one per worker");
  }
  if (task.contains("images")) {
    config.task.images = task.at("images").get<std::string>();
  }
  if (task.contains("labels")) {
    config.task.labels = task.at("labels").get<std::string>();
  }
  if (config.task.kind == "dataset" &&
      (config.task.images.empty() || config.task.labels.empty())) {
    fail(tpath, "dataset tasks need images and labels paths");
  }

  const std::string opath = "$.optimizer";
  const auto& optimizer = expect_object(
      j.at("optimizer"), opath,
      {"time_limit", "error_limit", "solver_tolerance", "outer_tolerance",
       "max_outer_iterations", "worker_samples"});
  config.optimizer.time_limit = get_number(optimizer, opath, "time_limit", 0.0);
  config.optimizer.error_limit =
      get_number(optimizer, opath, "error_limit", 0.0);
  config.optimizer.solver_tolerance =
      get_number(optimizer, opath, "solver_tolerance", 0.0);
  config.optimizer.outer_tolerance =
      get_number(optimizer, opath, "outer_tolerance", 0.0);
  config.optimizer.max_outer_iterations = static_cast<int>(
      get_integer(optimizer, opath, "max_outer_iterations", 1));
  config.optimizer.worker_samples =
      get_number(optimizer, opath, "worker_samples", 0.0);

  if (j.contains("simulate")) {
    const std::string spath = "$.simulate";
    const auto& sim = expect_object(j.at("simulate"), spath,
                                    {"global_iters", "local_iters", "batch"});
    engine::AlgoParams params;
    params.global_iters = get_integer(sim, spath, "global_iters", 1);
    params.batch = get_integer(sim, spath, "batch", 1);
    if (!sim.at("local_iters").is_array()) {
      fail(spath + ".local_iters", "expected an array");
    }
    for (const auto& v : sim.at("local_iters")) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 1) {
        fail(spath + ".local_iters", "expected positive integers");
      }
      params.local_iters.push_back(v.get<std::int64_t>());
    }
    if (params.local_iters.size() != config.system.workers.size()) {
      fail(spath + ".local_iters", "expected one entry per worker");
    }
    config.simulate_params = std::move(params);
  }

  if (!j.at("seeds").is_array() || j.at("seeds").empty()) {
    fail("$.seeds", "expected a nonempty array");
  }
  for (const auto& v : j.at("seeds")) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
      fail("$.seeds", "expected nonnegative integers");
    }
    config.seeds.push_back(v.get<std::uint64_t>());
  }
  config.output_dir = j.at("output_dir").get<std::string>();
  config.energy_comm_model = j.at("energy_comm_model").get<std::string>();
  if (config.energy_comm_model != "payload_bits" &&
      config.energy_comm_model != "log_levels") {
    fail("$.energy_comm_model", "expected payload_bits or log_levels");
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("config: cannot open " + path.string());
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config: parse error in " + path.string() +
                                ": " + e.what());
  }
  return config_from_json(j);
}

nlohmann::json to_json(const ExperimentConfig& config) {
  nlohmann::json workers = nlohmann::json::array();
  for (const auto& w : config.system.workers) workers.push_back(node_to_json(w));
  nlohmann::json j{
      {"version", config.version},
      {"system",
       {{"server", node_to_json(config.system.server)}, {"workers", workers}}},
      {"learning",
       {{"lipschitz", config.learning.lipschitz},
        {"grad_variance", config.learning.grad_variance},
        {"second_moment", config.learning.second_moment},
        {"step_size", config.learning.step_size},
        {"initial_gap", config.learning.initial_gap},
        {"dimension", config.learning.dimension}}},
      {"task",
       {{"kind", config.task.kind},
        {"dimension", config.task.dimension},
        {"samples_per_worker", config.task.samples_per_worker},
        {"init_scale", config.task.init_scale},
        {"server_levels", config.task.server_levels},
        {"worker_levels", config.task.worker_levels},
        {"images", config.task.images},
        {"labels", config.task.labels}}},
      {"optimizer",
       {{"time_limit", config.optimizer.time_limit},
        {"error_limit", config.optimizer.error_limit},
        {"solver_tolerance", config.optimizer.solver_tolerance},
        {"outer_tolerance", config.optimizer.outer_tolerance},
        {"max_outer_iterations", config.optimizer.max_outer_iterations},
        {"worker_samples", config.optimizer.worker_samples}}},
      {"seeds", config.seeds},
      {"output_dir", config.output_dir},
      {"energy_comm_model", config.energy_comm_model}};
  if (config.simulate_params) {
    j["simulate"] = {{"global_iters", config.simulate_params->global_iters},
                     {"local_iters", config.simulate_params->local_iters},
                     {"batch", config.simulate_params->batch}};
  }
  return j;
}

void save_config(const ExperimentConfig& config,
                 const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("config: cannot write " + path.string());
  }
  out << to_json(config).dump(2) << "\n";
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string dump = to_json(config).dump();
  std::uint64_t hash = 0xCBF29CE484222325ULL;
  for (unsigned char c : dump) {
    hash ^= c;
    hash *= 0x100000001B3ULL;
  }
  char buffer[17];
  std::snprintf(buffer, sizeof(buffer), "%016llx",
                static_cast<unsigned long long>(hash));
  return buffer;
}

ExperimentConfig default_config() {
  ExperimentConfig config;
  config.system.server = cost::NodeProfile{
      3e9, 1000.0, 2e-28, 20.0, 7.5e7, 4.9,
      static_cast<double>(quant::payload_bits(65, 101632))};
  const int workers = 10;
  const double ratio_spread = std::sqrt(20.0);  // C/F spread of 20x overall
  for (int i = 0; i < workers; ++i) {
    const double t = (static_cast<double>(i) - 4.5) / 9.0;
    const double u = static_cast<double>(i) / 9.0;
    cost::NodeProfile w;
    w.cycles_per_unit = 4e7 * std::pow(ratio_spread, t);
    w.cpu_freq = 6e8 * std::pow(ratio_spread, -t);
    w.capacitance = 2e-28;
    w.tx_power = 0.27 * std::pow(10.0, u);
    w.tx_rate = 9e5 * std::pow(10.0, u);
    w.quant_variance = 9.9;
    w.quant_bits = static_cast<double>(quant::payload_bits(32, 101632));
    config.system.workers.push_back(w);
  }
  config.learning = cost::LearnConstants{0.034, 18.0, 0.6, 0.03, 0.4,
                                         workers, 101632};
  config.task.kind = "quadratic";
  config.task.dimension = 50;
  config.task.samples_per_worker = 200;
  config.task.init_scale = 1.0;
  config.task.server_levels = 65;
  config.task.worker_levels = {32};
  config.optimizer.time_limit = 1500.0;
  config.optimizer.error_limit = 0.1;
  config.optimizer.worker_samples = 6000.0;
  config.seeds = {1};
  return config;
}

opt::OptSpec make_opt_spec(const ExperimentConfig& config) {
  opt::OptSpec spec;
  spec.time_limit = config.optimizer.time_limit;
  spec.error_limit = config.optimizer.error_limit;
  spec.profile = config.system;
  spec.constants = config.learning;
  spec.solver_tolerance = config.optimizer.solver_tolerance;
  spec.outer_tolerance = config.optimizer.outer_tolerance;
  spec.max_outer_iterations = config.optimizer.max_outer_iterations;
  spec.worker_samples.assign(config.system.workers.size(),
                             config.optimizer.worker_samples);
  return spec;
}

std::unique_ptr<engine::Task> make_task(const ExperimentConfig& config,
                                        std::ostream& log) {
  const int workers = config.system.worker_count();
  const std::uint64_t seed = config.seeds.front();
  std::string kind = config.task.kind;
  if (kind == "dataset") {
    std::error_code ec;
    if (!std::filesystem::exists(config.task.images, ec) ||
        !std::filesystem::exists(config.task.labels, ec)) {
      log << "warning: dataset files missing ('" << config.task.images
          << "', '" << config.task.labels
          << "'); falling back to a synthetic quadratic task\n";
      kind = "quadratic";
    } else {
      const Dataset data = load_idx_dataset(config.task.images,
                                            config.task.labels);
      return make_dataset_task(data, workers, seed);
    }
  }
  if (kind == "quadratic") {
    return engine::make_quadratic_task(config.task.dimension, workers,
                                       config.task.samples_per_worker, seed);
  }
  return engine::make_logistic_task(config.task.dimension, workers,
                                    config.task.samples_per_worker, seed);
}

std::vector<quant::QuantSpec> make_node_quant(const ExperimentConfig& config,
                                              std::int64_t dimension) {
  const auto dim = static_cast<std::size_t>(dimension);
  const auto spec_for = [dim](std::uint32_t levels) {
    return levels == 0 ? quant::QuantSpec::infinite(dim)
                       : quant::QuantSpec::finite(levels, dim);
  };
  std::vector<quant::QuantSpec> specs;
  specs.push_back(spec_for(config.task.server_levels));
  const auto& levels = config.task.worker_levels;
  for (std::size_t n = 0; n < config.system.workers.size(); ++n) {
    specs.push_back(spec_for(levels.size() == 1 ? levels[0] : levels[n]));
  }
  return specs;
}

}  // namespace fedopt::cli
