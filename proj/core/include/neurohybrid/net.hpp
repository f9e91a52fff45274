#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "neurohybrid/cohort.hpp"
#include "neurohybrid/ops.hpp"
#include "neurohybrid/rng.hpp"
#include "neurohybrid/tensor.hpp"

namespace neurohybrid {

struct BranchShape {
  int64_t channels = 0;
  Dims3 crop;
};

struct ArchitectureConfig {
  std::array<BranchShape, kRegionCount> branches;  // brainstem, ventricles, striatum
  std::array<int64_t, 3> filters{8, 16, 32};
  int64_t kernel = 3;
  int64_t pool_window = 2;
  int64_t pool_stride = 2;
  int64_t dense_width = 256;
  double dropout_rate = 0.5;
  bool use_mri = true;
  bool use_mask = true;

  int64_t channels_per_branch() const {
    return (use_mri ? 1 : 0) + (use_mask ? kStructuresPerRegion : 0);
  }
  int64_t concat_width() const { return kRegionCount * filters[2]; }
  void validate() const;

  // Defaults sized for the 48-voxel phantom template.
  static ArchitectureConfig defaults();
};

template <typename T>
struct ConvBlock {
  Tensor<T> kernel, bias, gamma, beta;
  BatchNormState<T> bn;
};

// One [N,C,D,H,W] tensor per region, in Region order.
template <typename T>
using BranchBatch = std::array<Tensor<T>, kRegionCount>;

template <typename T>
struct ForwardResult {
  Tensor<T> probabilities;  // [N,1]
  Tensor<T> logits;         // [N,1] pre-sigmoid
  Tensor<T> features;       // [N,dense_width] post-ReLU dense activations
  std::array<Tensor<T>, kRegionCount> branch_activations;  // last conv block, post-ReLU, pre-pool
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct Model {
  ArchitectureConfig cfg;
  uint64_t seed = 0;
  int64_t epochs_run = 0;
  std::array<std::array<ConvBlock<T>, 3>, kRegionCount> blocks;
  Tensor<T> fc1_weight, fc1_bias, fc2_weight, fc2_bias;

  // Fan-in-scaled uniform init for kernels and dense weights, zero biases,
  // unit batch-norm scale, identity running stats. Deterministic under seed.
  static Model build(const ArchitectureConfig& cfg, uint64_t seed);

  // Train mode updates batch-norm running stats and applies dropout (which
  // then requires dropout_rng when the rate is non-zero).
  ForwardResult<T> forward(const BranchBatch<T>& batch, Mode mode, Tape<T>* tape = nullptr,
                           Rng* dropout_rng = nullptr);

  // Infer-mode dense-layer features, [N, dense_width].
  Tensor<T> extract_features(const BranchBatch<T>& batch);

  std::vector<NamedTensor<T>> parameters();     // trainable tensors
  std::vector<NamedTensor<T>> state_tensors();  // parameters + running statistics
  void set_requires_grad(bool b);
  Model deep_copy() const;
  void copy_values_from(const Model& other);  // same architecture required
};

// Self-describing binary checkpoint: magic "NHCK", version, a JSON config
// block, then per-tensor records. Round trips are byte-identical.
template <typename T>
void save_checkpoint(Model<T>& model, const std::filesystem::path& path);
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path);

// Peeks at the config block to learn the stored dtype ("f32"/"f64").
std::string checkpoint_dtype(const std::filesystem::path& path);

}  // namespace neurohybrid
