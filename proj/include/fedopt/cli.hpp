#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "fedopt/config.hpp"

namespace fedopt::cli {

/// Exit codes shared by all commands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitInfeasible = 3;
inline constexpr int kExitFailure = 4;

int cmd_optimize(const ExperimentConfig& config, const std::string& mode,
                 const std::filesystem::path& out_dir, std::ostream& log);
int cmd_simulate(const ExperimentConfig& config,
                 const std::filesystem::path& out_dir, std::ostream& log);
int cmd_sweep(const ExperimentConfig& config, const std::string& axis,
              const std::vector<double>& values, int jobs,
              const std::filesystem::path& out_dir, std::ostream& log);
int cmd_verify_bound(const ExperimentConfig& config,
                     const std::filesystem::path& out_dir, std::ostream& log);

int run_cli(int argc, char** argv);

}  // namespace fedopt::cli
