#pragma once

#include <chrono>
#include <filesystem>
#include <string>

#include "neurohybrid/net.hpp"
#include "neurohybrid/rng.hpp"
#include "neurohybrid/tensor.hpp"

namespace testutil {

// Self-cleaning scratch directory under the system temp root.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path = std::filesystem::temp_directory_path() /
           ("nh-" + tag + "-" + std::to_string(static_cast<long long>(stamp)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

// Three-branch architecture small enough for unit tests: 8^3 crops pool
// down 8 -> 4 -> 2 -> 1 through the three blocks.
inline neurohybrid::ArchitectureConfig tiny_arch() {
  neurohybrid::ArchitectureConfig cfg;
  for (auto& b : cfg.branches) {
    b.channels = cfg.channels_per_branch();
    b.crop = neurohybrid::Dims3{8, 8, 8};
  }
  cfg.filters = {2, 3, 4};
  cfg.dense_width = 8;
  return cfg;
}

template <typename T>
neurohybrid::BranchBatch<T> random_batch(const neurohybrid::ArchitectureConfig& cfg, int64_t n,
                                         neurohybrid::Rng& rng) {
  neurohybrid::BranchBatch<T> batch;
  for (int r = 0; r < neurohybrid::kRegionCount; ++r) {
    const auto& b = cfg.branches[r];
    neurohybrid::Tensor<T> x(
        neurohybrid::Shape{n, b.channels, b.crop.d, b.crop.h, b.crop.w});
    for (auto& v : x.values()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
    batch[r] = x;
  }
  return batch;
}

}  // namespace testutil
