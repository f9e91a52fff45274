#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neurohybrid/net.hpp"

namespace neurohybrid {

// Neuron importance: alpha_k is the spatial mean of grads[k]. grads is the
// [K, D, H, W] gradient of the class score w.r.t. one branch's last
// conv-block output for a single subject.
template <typename T>
std::vector<double> neuron_weights(const Tensor<T>& grads);

// ReLU(sum_k alpha_k * A^k) over maps [K, D, H, W], flattened to [D, H, W].
template <typename T>
std::vector<double> cam(const std::vector<double>& alphas, const Tensor<T>& maps);

// Separable Catmull-Rom interpolation, corner-aligned, with linearly
// extrapolated boundary samples (keeps degree-1 fields exact everywhere);
// undershoot below zero is clamped away. Source extents must be >= 2 per axis.
std::vector<double> upsample_tricubic(const std::vector<double>& src, Dims3 src_dims,
                                      Dims3 dst_dims);

struct AttentionMap {
  std::string branch;
  int target_class = 1;
  Dims3 low_dims;              // last conv-block resolution
  Dims3 dims;                  // branch input crop resolution
  std::vector<double> low;     // raw cam values, low resolution
  std::vector<double> values;  // upsampled, min-max normalized to [0, 1]
  double raw_min = 0.0;        // upsampled-map extrema before normalization
  double raw_max = 0.0;
};

// One tape-recorded forward/backward per subject. The score is the
// pre-sigmoid logit, negated when the target class is 0, so saturated
// probabilities cannot flatten the maps. An all-zero map stays all-zero.
template <typename T>
std::array<AttentionMap, kRegionCount> subject_attention(Model<T>& model,
                                                         const BranchBatch<T>& subject,
                                                         int target_class);

struct PopulationMap {
  std::string branch;
  int target_class = 1;
  Dims3 dims;
  std::vector<double> values;  // voxel-wise mean of normalized subject maps
  int64_t subjects = 0;
};

// Voxel-wise mean over subjects; every map must share branch, class, and shape.
PopulationMap population_average(const std::vector<AttentionMap>& maps);

// One slice as a binary pixmap (P6): grayscale anatomy with a black->red->yellow
// overlay alpha-blended in where the attention exceeds 0.2. axis is 0/1/2 for
// the D/H/W axis of the [D, H, W] volumes.
void render_overlay(const std::vector<double>& attention, const std::vector<double>& anatomy,
                    Dims3 dims, int axis, int64_t slice_index,
                    const std::filesystem::path& path);

struct PpmImage {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
};

PpmImage read_ppm(const std::filesystem::path& path);

}  // namespace neurohybrid
