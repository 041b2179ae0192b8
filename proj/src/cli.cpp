#include "fedopt/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "fedopt/cost_model.hpp"
#include "fedopt/idx.hpp"

namespace fedopt::cli {
namespace {

std::string fmt12(double value) {
  char buffer[48];
  std::snprintf(buffer, sizeof(buffer), "%.12g", value);
  return buffer;
}

opt::Mode parse_mode(const std::string& name) {
  for (opt::Mode mode :
       {opt::Mode::kGenqsgd, opt::Mode::kFedavg, opt::Mode::kPrsgd,
        opt::Mode::kPsgd, opt::Mode::kFedpaq}) {
    if (name == opt::mode_name(mode)) return mode;
  }
  throw std::invalid_argument("unknown mode: " + name);
}

const char* status_name(opt::OptStatus status) {
  switch (status) {
    case opt::OptStatus::kSolved: return "SOLVED";
    case opt::OptStatus::kInfeasible: return "INFEASIBLE";
    case opt::OptStatus::kSolverFailure: return "SOLVER_FAILURE";
  }
  return "UNKNOWN";
}

nlohmann::json point_to_json(const opt::ContinuousPoint& point) {
  return {{"global_iters", point.global_iters},
          {"local_iters", point.local_iters},
          {"batch", point.batch},
          {"t1", point.t1},
          {"t2", point.t2}};
}

void require_positive_step(const ExperimentConfig& config) {
  if (!(config.learning.step_size > 0.0)) {
    throw std::invalid_argument(
        "config: $.learning.step_size: optimization requires a positive "
        "step size");
  }
}

double simulation_energy(const ExperimentConfig& config,
                         const cost::ContinuousParams& params) {
  if (config.energy_comm_model == "log_levels") {
    std::vector<double> levels;
    const auto& wl = config.task.worker_levels;
    for (std::size_t n = 0; n < config.system.workers.size(); ++n) {
      const std::uint32_t s = wl.size() == 1 ? wl[0] : wl[n];
      if (s < 2) {
        throw std::invalid_argument(
            "config: $.energy_comm_model: log_levels requires worker "
            "quantization levels >= 2");
      }
      levels.push_back(static_cast<double>(s));
    }
    return cost::energy_cost_log_levels(
        params, config.system, levels,
        static_cast<double>(config.learning.dimension));
  }
  return cost::energy_cost(params, config.system);
}

}  // namespace

int cmd_optimize(const ExperimentConfig& config, const std::string& mode_str,
                 const std::filesystem::path& out_dir, std::ostream& log) {
  require_positive_step(config);
  const opt::Mode mode = parse_mode(mode_str);
  const opt::OptSpec spec = make_opt_spec(config);
  const opt::ModeResult result = opt::optimize_mode(spec, mode);

  nlohmann::json record{{"spec_hash", config_hash(config)},
                        {"mode", opt::mode_name(mode)},
                        {"status", status_name(result.status)}};
  if (result.status == opt::OptStatus::kSolved) {
    record["continuous"] = point_to_json(result.point);
    record["energy_continuous"] = result.energy;
    record["kkt_residual"] = result.kkt_residual;
    record["iterations"] = result.iterations;
    if (mode == opt::Mode::kFedavg) record["fedavg_m"] = result.fedavg_m;
    const auto rounded = opt::round_to_integer(spec, result.point);
    if (rounded) {
      cost::ContinuousParams params;
      params.global_iters = static_cast<double>(rounded->global_iters);
      params.batch = static_cast<double>(rounded->batch);
      for (std::int64_t k : rounded->local_iters) {
        params.local_iters.push_back(static_cast<double>(k));
      }
      record["integer"] = {{"global_iters", rounded->global_iters},
                           {"local_iters", rounded->local_iters},
                           {"batch", rounded->batch}};
      record["energy_integer"] = cost::energy_cost(params, config.system);
    } else {
      record["integer"] = nullptr;
      record["energy_integer"] = nullptr;
    }
  }

  std::filesystem::create_directories(out_dir);
  const auto path = out_dir / ("optimize_" + std::string(opt::mode_name(mode)) +
                               ".json");
  std::ofstream out(path);
  out << record.dump(2) << "\n";
  log << "optimize " << opt::mode_name(mode) << ": "
      << status_name(result.status);
  if (result.status == opt::OptStatus::kSolved) {
    log << " energy " << fmt12(result.energy);
  }
  log << " -> " << path.string() << "\n";
  if (result.status == opt::OptStatus::kInfeasible) return kExitInfeasible;
  if (result.status == opt::OptStatus::kSolverFailure) return kExitFailure;
  return kExitOk;
}

int cmd_simulate(const ExperimentConfig& config,
                 const std::filesystem::path& out_dir, std::ostream& log) {
  const auto task = make_task(config, log);
  engine::AlgoParams params;
  if (config.simulate_params) {
    params = *config.simulate_params;
  } else {
    require_positive_step(config);
    const opt::OptSpec spec = make_opt_spec(config);
    const opt::ModeResult result = opt::optimize_mode(spec, opt::Mode::kGenqsgd);
    if (result.status == opt::OptStatus::kInfeasible) {
      log << "simulate: optimization infeasible at the configured limits\n";
      return kExitInfeasible;
    }
    if (result.status != opt::OptStatus::kSolved) return kExitFailure;
    const auto rounded = opt::round_to_integer(spec, result.point);
    if (!rounded) {
      log << "simulate: integer recovery failed\n";
      return kExitFailure;
    }
    params = *rounded;
  }

  std::filesystem::create_directories(out_dir);
  const std::string hash = config_hash(config);

  engine::RunConfig run;
  run.params = params;
  run.node_quant = make_node_quant(config, task->dimension());
  run.step_size = config.learning.step_size;
  run.init_scale = config.task.init_scale;
  const std::int64_t k_max = *std::max_element(params.local_iters.begin(),
                                               params.local_iters.end());
  run.record_iterates =
      task->dimension() * (params.global_iters + 2) * (k_max + 1) <= 50000000;

  cost::ContinuousParams cparams;
  cparams.global_iters = static_cast<double>(params.global_iters);
  cparams.batch = static_cast<double>(params.batch);
  for (std::int64_t k : params.local_iters) {
    cparams.local_iters.push_back(static_cast<double>(k));
  }
  const double predicted_time = cost::time_cost(cparams, config.system);
  const double predicted_energy = simulation_energy(config, cparams);
  const double predicted_error =
      config.learning.step_size > 0.0
          ? cost::conv_error(cparams, config.system, config.learning)
          : 0.0;

  std::ofstream metrics(out_dir / "metrics.csv");
  metrics << "seed,time_cost,energy_cost,conv_error,empirical_lhs,"
             "initial_loss,final_loss\n";
  for (std::uint64_t seed : config.seeds) {
    run.seed = seed;
    const engine::RunTrace trace = engine::run_genqsgd(*task, run);
    engine::write_trace(trace,
                        out_dir / ("trace_" + std::to_string(seed) + ".txt"),
                        hash);
    engine::write_model(trace.final_model,
                        out_dir / ("model_" + std::to_string(seed) + ".bin"));
    metrics << seed << ',' << fmt12(predicted_time) << ','
            << fmt12(predicted_energy) << ',' << fmt12(predicted_error) << ','
            << fmt12(engine::empirical_lhs(trace)) << ','
            << fmt12(trace.initial_loss) << ','
            << fmt12(task->full_loss(trace.final_model)) << "\n";
  }
  log << "simulate: " << config.seeds.size() << " run(s) written to "
      << out_dir.string() << "\n";
  return kExitOk;
}

int cmd_sweep(const ExperimentConfig& config, const std::string& axis_str,
              const std::vector<double>& values, int jobs,
              const std::filesystem::path& out_dir, std::ostream& log) {
  require_positive_step(config);
  if (values.empty()) {
    throw std::invalid_argument("sweep: need at least one axis value");
  }
  opt::SweepAxis axis;
  if (axis_str == "cmax") {
    axis = opt::SweepAxis::kCmax;
  } else if (axis_str == "tmax") {
    axis = opt::SweepAxis::kTmax;
  } else {
    throw std::invalid_argument("sweep: axis must be cmax or tmax");
  }
  const opt::OptSpec base = make_opt_spec(config);
  const std::vector<opt::Mode> modes{opt::Mode::kGenqsgd, opt::Mode::kFedavg,
                                     opt::Mode::kPrsgd, opt::Mode::kPsgd};
  const auto rows = opt::run_sweep(base, axis, values, modes, jobs);

  std::filesystem::create_directories(out_dir);
  // One JSON per axis point, then the merged CSV in axis order.
  const std::size_t per_point = modes.size();
  for (std::size_t v = 0; v < values.size(); ++v) {
    nlohmann::json point = nlohmann::json::array();
    for (std::size_t m = 0; m < per_point; ++m) {
      const auto& row = rows[v * per_point + m];
      point.push_back({{"axis_value", row.axis_value},
                       {"mode", opt::mode_name(row.mode)},
                       {"status", status_name(row.status)},
                       {"energy", row.status == opt::OptStatus::kSolved
                                      ? nlohmann::json(row.energy)
                                      : nlohmann::json()}});
    }
    char name[64];
    std::snprintf(name, sizeof(name), "sweep_%s_%03zu.json", axis_str.c_str(),
                  v);
    std::ofstream out(out_dir / name);
    out << point.dump(2) << "\n";
  }

  std::ofstream csv(out_dir / ("sweep_" + axis_str + ".csv"));
  csv << "axis_value,mode,status,energy\n";
  bool any_feasible = false;
  for (const auto& row : rows) {
    csv << fmt12(row.axis_value) << ',' << opt::mode_name(row.mode) << ','
        << status_name(row.status) << ',';
    if (row.status == opt::OptStatus::kSolved) {
      csv << fmt12(row.energy);
      any_feasible = true;
    }
    csv << "\n";
  }
  log << "sweep " << axis_str << ": " << values.size() << " point(s), "
      << rows.size() << " rows -> " << (out_dir / ("sweep_" + axis_str + ".csv"))
      << "\n";
  return any_feasible ? kExitOk : kExitInfeasible;
}

int cmd_verify_bound(const ExperimentConfig& config,
                     const std::filesystem::path& out_dir, std::ostream& log) {
  const auto task = make_task(config, log);
  const int workers = task->worker_count();
  const std::int64_t spw = static_cast<std::int64_t>(
      task->worker_samples().front().size());

  const engine::TaskConstants measured =
      engine::estimate_constants(*task, 200, config.seeds.front());
  double gamma = config.learning.step_size;
  const double gamma_cap = 0.95 / measured.lipschitz;
  if (!(gamma > 0.0) || gamma > gamma_cap) gamma = gamma_cap;

  const auto node_quant = make_node_quant(config, task->dimension());
  cost::SystemProfile bound_profile;
  const auto bound_node = [](const quant::QuantSpec& spec) {
    return cost::NodeProfile{1.0, 1.0, 1.0, 1.0,
                             1.0, spec.variance_bound,
                             std::max<double>(1.0, spec.payload_bits)};
  };
  bound_profile.server = bound_node(node_quant[0]);
  for (int n = 0; n < workers; ++n) {
    bound_profile.workers.push_back(
        bound_node(node_quant[static_cast<std::size_t>(n) + 1]));
  }
  cost::LearnConstants constants;
  constants.lipschitz = measured.lipschitz;
  constants.grad_variance = measured.grad_variance;
  constants.second_moment = measured.second_moment;
  constants.step_size = gamma;
  constants.initial_gap = 0.0;  // replaced by the exact gap per setting
  constants.worker_count = workers;
  constants.dimension = task->dimension();

  // Losses here are nonnegative, so zero is a valid optimum lower bound
  // when the task does not carry an exact value.
  const double f_star = task->optimum_value().value_or(0.0);

  std::vector<engine::AlgoParams> settings(3);
  settings[0].global_iters = 15;
  settings[0].batch = std::min<std::int64_t>(4, spw);
  settings[0].local_iters.assign(static_cast<std::size_t>(workers), 1);
  settings[1].global_iters = 10;
  settings[1].batch = std::min<std::int64_t>(2, spw);
  for (int n = 0; n < workers; ++n) {
    settings[1].local_iters.push_back(1 + (n % 3));
  }
  settings[2].global_iters = 8;
  settings[2].batch = 1;
  for (int n = 0; n < workers; ++n) {
    settings[2].local_iters.push_back(n % 2 ? 4 : 2);
  }

  std::filesystem::create_directories(out_dir);
  std::ofstream report(out_dir / "bound_report.txt");
  report << "# convergence bound verification\n";
  report << "# L " << fmt12(measured.lipschitz) << " sigma "
         << fmt12(measured.grad_variance) << " G "
         << fmt12(measured.second_moment) << " gamma " << fmt12(gamma)
         << " f_star " << fmt12(f_star) << "\n";

  constexpr int kSeedCount = 20;
  Rng seed_root(config.seeds.front());
  bool all_pass = true;
  for (std::size_t s = 0; s < settings.size(); ++s) {
    engine::RunConfig run;
    run.params = settings[s];
    run.node_quant = node_quant;
    run.step_size = gamma;
    run.init_scale = config.task.init_scale;
    run.record_iterates = false;

    double lhs_sum = 0.0;
    double f_init = 0.0;
    for (int i = 0; i < kSeedCount; ++i) {
      run.seed = seed_root.derive(0x60, s, static_cast<std::uint64_t>(i))
                     .next_u64();
      const engine::RunTrace trace = engine::run_genqsgd(*task, run);
      lhs_sum += engine::empirical_lhs(trace);
      f_init = std::max(f_init, trace.initial_loss);
    }
    const double lhs = lhs_sum / kSeedCount;

    cost::ContinuousParams params;
    params.global_iters = static_cast<double>(settings[s].global_iters);
    params.batch = static_cast<double>(settings[s].batch);
    for (std::int64_t k : settings[s].local_iters) {
      params.local_iters.push_back(static_cast<double>(k));
    }
    const double rhs =
        cost::theorem1_rhs(params, bound_profile, constants, f_init, f_star);
    const bool pass = lhs <= rhs;
    all_pass = all_pass && pass;
    const std::string line = std::string(pass ? "PASS" : "FAIL") + " setting " +
                             std::to_string(s + 1) + ": lhs " + fmt12(lhs) +
                             " <= rhs " + fmt12(rhs);
    report << line << "\n";
    log << line << "\n";
  }
  report << (all_pass ? "RESULT PASS" : "RESULT FAIL") << "\n";
  log << "verify-bound: " << (all_pass ? "PASS" : "FAIL") << " -> "
      << (out_dir / "bound_report.txt").string() << "\n";
  return all_pass ? kExitOk : kExitFailure;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"GenQSGD federated edge learning laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  std::int64_t seed_override = -1;
  std::string mode = "genqsgd";
  std::string axis;
  std::vector<double> values;
  int jobs = 1;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")
        ->required();
    sub->add_option("--out", out_override, "output directory");
    sub->add_option("--seed", seed_override, "override the config seed list");
  };
  CLI::App* optimize = app.add_subcommand("optimize", "optimize parameters");
  add_common(optimize);
  optimize->add_option("--mode", mode,
                       "genqsgd|fedavg|prsgd|psgd|fedpaq");
  CLI::App* simulate = app.add_subcommand("simulate", "run the training loop");
  add_common(simulate);
  CLI::App* sweep = app.add_subcommand("sweep", "limit sweep over modes");
  add_common(sweep);
  sweep->add_option("--axis", axis, "cmax|tmax")->required();
  sweep->add_option("--values", values, "axis values")
      ->required()
      ->delimiter(',');
  sweep->add_option("--jobs", jobs, "concurrent axis points");
  CLI::App* verify = app.add_subcommand("verify-bound",
                                        "check the convergence bound");
  add_common(verify);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    ExperimentConfig config = load_config(config_path);
    if (seed_override >= 0) {
      config.seeds = {static_cast<std::uint64_t>(seed_override)};
    }
    const std::filesystem::path out_dir =
        out_override.empty() ? config.output_dir : out_override;
    if (optimize->parsed()) {
      return cmd_optimize(config, mode, out_dir, std::cout);
    }
    if (simulate->parsed()) {
      return cmd_simulate(config, out_dir, std::cout);
    }
    if (sweep->parsed()) {
      return cmd_sweep(config, axis, values, jobs, out_dir, std::cout);
    }
    return cmd_verify_bound(config, out_dir, std::cout);
  } catch (const std::invalid_argument& e) {
    std::cerr << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace fedopt::cli
