#pragma once

#include "neurohybrid/rng.hpp"
#include "neurohybrid/tensor.hpp"

namespace neurohybrid {

struct Dims3 {
  int64_t d = 0, h = 0, w = 0;
  bool operator==(const Dims3&) const = default;
  int64_t volume() const { return d * h * w; }
};

enum class Mode { Train, Infer };

// Per-channel running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;  // [C]
  Tensor<T> running_var;   // [C]

  static BatchNormState init(int64_t channels) {
    BatchNormState s;
    s.running_mean = Tensor<T>(Shape{channels}, T(0));
    s.running_var = Tensor<T>(Shape{channels}, T(1));
    return s;
  }
};

// All ops take tensors laid out row-major. Volumetric tensors are
// [N, C, D, H, W]. Passing a tape records the backward closure; passing
// nullptr runs a plain forward pass.

// Zero-padded cross-correlation. kernel is [F, C, KD, KH, KW], bias is [F].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 Dims3 stride, Dims3 padding, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> batchnorm3d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& stats, Mode mode, T eps, T momentum, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& input, Dims3 window, Dims3 stride, Tape<T>* tape = nullptr);

// [N, C, D, H, W] -> [N, C]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input, Tape<T>* tape = nullptr);

// input [N, K] x weight [K, M] + bias [M] -> [N, M]
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> relu(const Tensor<T>& input, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input, Tape<T>* tape = nullptr);

// Inverted dropout: kept units are scaled by 1/(1-rate) at train time so the
// infer pass is the identity. rate is in [0, 1).
template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double rate, Mode mode, Rng& rng, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, size_t axis, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> slice(const Tensor<T>& input, size_t axis, int64_t start, int64_t length, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> scale(const Tensor<T>& input, T factor, Tape<T>* tape = nullptr);

// Sum of all elements -> scalar [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& input, Tape<T>* tape = nullptr);

// Row-major C[m,n] = alpha * op(A) * op(B) + beta * C, dispatched to BLAS.
template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
          int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc);

void set_blas_threads(int n);

}  // namespace neurohybrid
