#include "fedopt/idx.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "fedopt/rng.hpp"

namespace fedopt::cli {
namespace {

class IdxReader {
 public:
  explicit IdxReader(const std::filesystem::path& path)
      : path_(path.string()), in_(path, std::ios::binary) {
    if (!in_) {
      throw std::runtime_error("idx: cannot open " + path_);
    }
  }

  std::uint32_t read_u32() {
    unsigned char bytes[4];
    in_.read(reinterpret_cast<char*>(bytes), 4);
    if (!in_) truncated();
    offset_ += 4;
    return (std::uint32_t{bytes[0]} << 24) | (std::uint32_t{bytes[1]} << 16) |
           (std::uint32_t{bytes[2]} << 8) | std::uint32_t{bytes[3]};
  }

  void read_bytes(std::vector<unsigned char>& out, std::size_t count) {
    out.resize(count);
    in_.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(count));
    if (!in_) truncated();
    offset_ += count;
  }

  [[noreturn]] void truncated() const {
    throw std::runtime_error("idx: " + path_ + " truncated at byte offset " +
                             std::to_string(offset_ + in_.gcount()));
  }

  [[noreturn]] void bad_magic(std::uint32_t magic) const {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "0x%08x", magic);
    throw std::runtime_error("idx: " + path_ + ": bad magic " + buffer +
                             " at byte offset 0");
  }

 private:
  std::string path_;
  std::ifstream in_;
  std::size_t offset_ = 0;
};

}  // namespace

Dataset load_idx_dataset(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path) {
  Dataset data;

  IdxReader images(images_path);
  const std::uint32_t image_magic = images.read_u32();
  if (image_magic != 0x00000803u) images.bad_magic(image_magic);
  const std::uint32_t count = images.read_u32();
  const std::uint32_t rows = images.read_u32();
  const std::uint32_t cols = images.read_u32();
  std::vector<unsigned char> raw;
  images.read_bytes(raw, std::size_t{count} * rows * cols);
  data.count = count;
  data.rows = static_cast<int>(rows);
  data.cols = static_cast<int>(cols);
  data.pixels.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    data.pixels[i] = static_cast<double>(raw[i]) / 255.0;
  }

  IdxReader labels(labels_path);
  const std::uint32_t label_magic = labels.read_u32();
  if (label_magic != 0x00000801u) labels.bad_magic(label_magic);
  const std::uint32_t label_count = labels.read_u32();
  if (label_count != count) {
    throw std::runtime_error("idx: image count " + std::to_string(count) +
                             " does not match label count " +
                             std::to_string(label_count));
  }
  labels.read_bytes(raw, label_count);
  data.labels.assign(raw.begin(), raw.end());
  return data;
}

std::vector<std::vector<std::int64_t>> partition_dataset(std::int64_t count,
                                                         int workers,
                                                         std::uint64_t seed) {
  if (workers < 1 || count < workers) {
    throw std::invalid_argument(
        "partition_dataset: need at least one sample per worker");
  }
  std::vector<std::int64_t> order(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    order[static_cast<std::size_t>(i)] = i;
  }
  Rng rng = Rng(seed).derive(0x50);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.next_below(i)]);
  }
  std::vector<std::vector<std::int64_t>> sets(
      static_cast<std::size_t>(workers));
  std::size_t next = 0;
  for (int n = 0; n < workers; ++n) {
    const std::int64_t size =
        count / workers + (n < static_cast<int>(count % workers) ? 1 : 0);
    auto& set = sets[static_cast<std::size_t>(n)];
    for (std::int64_t i = 0; i < size; ++i) set.push_back(order[next++]);
  }
  return sets;
}

namespace {

/// Softmax regression: x holds one weight row per class (features + bias).
class SoftmaxRegressionTask final : public engine::Task {
 public:
  SoftmaxRegressionTask(const Dataset& data, int workers, std::uint64_t seed)
      : features_(static_cast<std::size_t>(data.rows * data.cols)),
        classes_(1 + *std::max_element(data.labels.begin(), data.labels.end())),
        pixels_(data.pixels),
        labels_(data.labels) {
    worker_samples_ = partition_dataset(data.count, workers, seed);
  }

  std::int64_t dimension() const override {
    return static_cast<std::int64_t>(classes_) *
           static_cast<std::int64_t>(features_ + 1);
  }

  double sample_loss(std::span<const double> x,
                     std::int64_t sample) const override {
    std::vector<double> logits = compute_logits(x, sample);
    const double lse = log_sum_exp(logits);
    return lse - logits[static_cast<std::size_t>(labels_[sample])];
  }

  void sample_gradient(std::span<const double> x, std::int64_t sample,
                       std::span<double> out) const override {
    std::vector<double> logits = compute_logits(x, sample);
    const double lse = log_sum_exp(logits);
    const double* pixel = &pixels_[static_cast<std::size_t>(sample) * features_];
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t c = 0; c < classes_; ++c) {
      const double p = std::exp(logits[c] - lse) -
                       (static_cast<int>(c) == labels_[sample] ? 1.0 : 0.0);
      double* row = &out[c * (features_ + 1)];
      for (std::size_t f = 0; f < features_; ++f) row[f] = p * pixel[f];
      row[features_] = p;  // bias
    }
  }

 private:
  std::vector<double> compute_logits(std::span<const double> x,
                                     std::int64_t sample) const {
    const double* pixel = &pixels_[static_cast<std::size_t>(sample) * features_];
    std::vector<double> logits(classes_, 0.0);
    for (std::size_t c = 0; c < classes_; ++c) {
      const double* row = &x[c * (features_ + 1)];
      double v = row[features_];
      for (std::size_t f = 0; f < features_; ++f) v += row[f] * pixel[f];
      logits[c] = v;
    }
    return logits;
  }

  static double log_sum_exp(const std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
  }

  std::size_t features_;
  std::size_t classes_;
  std::vector<double> pixels_;
  std::vector<int> labels_;
};

}  // namespace

std::unique_ptr<engine::Task> make_dataset_task(const Dataset& data,
                                                int workers,
                                                std::uint64_t seed) {
  if (data.count < workers) {
    throw std::invalid_argument("dataset task: fewer samples than workers");
  }
  return std::make_unique<SoftmaxRegressionTask>(data, workers, seed);
}

}  // namespace fedopt::cli
