#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "fedopt/fl_engine.hpp"

namespace fedopt::cli {

struct Dataset {
  std::int64_t count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> pixels;  // count * rows * cols values in [0, 1]
  std::vector<int> labels;     // count entries
};

/// Parse a big-endian IDX image/label file pair (magic 0x00000803 and
/// 0x00000801). Parse failures report the byte offset.
Dataset load_idx_dataset(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path);

/// Disjoint, exhaustive, size-balanced index sets via a seeded shuffle.
std::vector<std::vector<std::int64_t>> partition_dataset(std::int64_t count,
                                                         int workers,
                                                         std::uint64_t seed);

/// Multinomial softmax regression over the dataset; model dimension is
/// classes * (rows * cols + 1).
std::unique_ptr<engine::Task> make_dataset_task(const Dataset& data,
                                                int workers,
                                                std::uint64_t seed);

}  // namespace fedopt::cli
