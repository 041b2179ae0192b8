#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "fedopt/fl_engine.hpp"

namespace fedopt::engine {
namespace {

constexpr std::array<char, 4> kModelMagic = {'F', 'O', 'M', '1'};
constexpr std::uint32_t kModelVersion = 1;

template <typename T>
void write_le(std::ofstream& out, T value) {
  std::array<char, sizeof(T)> bytes;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T read_le(std::ifstream& in) {
  std::array<unsigned char, sizeof(T)> bytes;
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw std::runtime_error("model file: truncated header");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(bytes[i]) << (8 * i);
  }
  return value;
}

}  // namespace

void write_trace(const RunTrace& trace, const std::filesystem::path& path,
                 std::string_view config_hash) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_trace: cannot open " + path.string());
  }
  out << "# fedopt trace v1\n";
  out << "# seed " << trace.seed << "\n";
  out << "# global_iters " << trace.params.global_iters << "\n";
  out << "# batch " << trace.params.batch << "\n";
  out << "# local_iters";
  for (std::size_t n = 0; n < trace.params.local_iters.size(); ++n) {
    out << (n == 0 ? ' ' : ',') << trace.params.local_iters[n];
  }
  out << "\n";
  out << "# config " << config_hash << "\n";
  out << "# columns k0 k grad_norm_sq\n";
  char buffer[64];
  for (std::size_t k0 = 0; k0 < trace.grad_norm_sq.size(); ++k0) {
    const auto& norms = trace.grad_norm_sq[k0];
    for (std::size_t k = 0; k < norms.size(); ++k) {
      std::snprintf(buffer, sizeof(buffer), "%.12g", norms[k]);
      out << (k0 + 1) << ' ' << (k + 1) << ' ' << buffer << "\n";
    }
  }
  if (!out) {
    throw std::runtime_error("write_trace: failed writing " + path.string());
  }
}

void write_model(std::span<const double> model,
                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("write_model: cannot open " + path.string());
  }
  out.write(kModelMagic.data(), kModelMagic.size());
  write_le<std::uint32_t>(out, kModelVersion);
  write_le<std::uint64_t>(out, model.size());
  for (double v : model) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    write_le<std::uint64_t>(out, bits);
  }
  if (!out) {
    throw std::runtime_error("write_model: failed writing " + path.string());
  }
}

std::vector<double> read_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("read_model: cannot open " + path.string());
  }
  std::array<char, 4> magic;
  in.read(magic.data(), magic.size());
  if (!in || magic != kModelMagic) {
    throw std::runtime_error("read_model: bad magic in " + path.string());
  }
  const auto version = read_le<std::uint32_t>(in);
  if (version != kModelVersion) {
    throw std::runtime_error("read_model: unsupported version " +
                             std::to_string(version));
  }
  const auto dim = read_le<std::uint64_t>(in);
  std::vector<double> model(dim);
  for (std::uint64_t d = 0; d < dim; ++d) {
    const auto bits = read_le<std::uint64_t>(in);
    std::memcpy(&model[d], &bits, sizeof(double));
  }
  return model;
}

}  // namespace fedopt::engine
