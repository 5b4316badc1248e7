#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

namespace support {

/// Hand-rolled property runner: calls `body(rng, case_index)` `cases` times
/// with a generator seeded per case, so a failing case can be replayed alone.
template <typename Fn>
void for_all(int cases, uint64_t seed, Fn body) {
  for (int i = 0; i < cases; ++i) {
    std::mt19937_64 rng(seed * 1000003ULL + static_cast<uint64_t>(i));
    body(rng, i);
  }
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int64_t integer(std::mt19937_64& rng, int64_t lo, int64_t hi) {
  return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

/// Fresh scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("rirci-unit-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

inline double max_abs(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().max().item<double>(); }

}  // namespace support
