#include "neurohybrid/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

extern "C" void openblas_set_num_threads(int);

namespace neurohybrid {

void set_blas_threads(int n) { openblas_set_num_threads(n < 1 ? 1 : n); }

template <>
void gemm<float>(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
                 int64_t lda, const float* b, int64_t ldb, float beta, float* c, int64_t ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

template <>
void gemm<double>(bool ta, bool tb, int64_t m, int64_t n, int64_t k, double alpha, const double* a,
                  int64_t lda, const double* b, int64_t ldb, double beta, double* c, int64_t ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

namespace {

template <typename T>
bool want_grad(Tape<T>* tape, std::initializer_list<const Tensor<T>*> ins) {
  if (!tape) return false;
  for (const auto* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

int64_t out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad, const char* op, const char* axis) {
  require(stride >= 1, std::string(op) + ": stride must be positive on axis " + axis);
  require(pad >= 0, std::string(op) + ": padding must be non-negative on axis " + axis);
  const int64_t span = in + 2 * pad - k;
  require(span >= 0, std::string(op) + ": window exceeds padded input on axis " + axis);
  require(span % stride == 0,
          std::string(op) + ": input " + std::to_string(in) + " with window " + std::to_string(k) +
              ", stride " + std::to_string(stride) + ", pad " + std::to_string(pad) +
              " leaves a partial window on axis " + axis);
  return span / stride + 1;
}

// Fills col[K x (OH*OW)] for one (sample, output-depth) slice, K = C*KD*KH*KW.
template <typename T>
void im2col_slice(const T* x, int64_t C, Dims3 in, Dims3 k, Dims3 stride, Dims3 pad, int64_t od,
                  Dims3 out, T* col) {
  const int64_t hw = out.h * out.w;
  for (int64_t c = 0; c < C; ++c) {
    const T* xc = x + c * in.volume();
    for (int64_t kz = 0; kz < k.d; ++kz) {
      const int64_t id = od * stride.d - pad.d + kz;
      const bool dead = id < 0 || id >= in.d;
      for (int64_t ky = 0; ky < k.h; ++ky) {
        for (int64_t kx = 0; kx < k.w; ++kx) {
          T* row = col + (((c * k.d + kz) * k.h + ky) * k.w + kx) * hw;
          if (dead) {
            std::memset(row, 0, static_cast<size_t>(hw) * sizeof(T));
            continue;
          }
          for (int64_t oh = 0; oh < out.h; ++oh) {
            const int64_t ih = oh * stride.h - pad.h + ky;
            T* dst = row + oh * out.w;
            if (ih < 0 || ih >= in.h) {
              std::memset(dst, 0, static_cast<size_t>(out.w) * sizeof(T));
              continue;
            }
            const T* src = xc + (id * in.h + ih) * in.w;
            if (stride.w == 1) {
              const int64_t lo = std::max<int64_t>(0, pad.w - kx);
              const int64_t hi = std::min<int64_t>(out.w, in.w + pad.w - kx);
              if (lo > 0) std::memset(dst, 0, static_cast<size_t>(lo) * sizeof(T));
              if (hi > lo)
                std::memcpy(dst + lo, src + (lo - pad.w + kx), static_cast<size_t>(hi - lo) * sizeof(T));
              if (hi < out.w) std::memset(dst + hi, 0, static_cast<size_t>(out.w - hi) * sizeof(T));
            } else {
              for (int64_t ow = 0; ow < out.w; ++ow) {
                const int64_t iw = ow * stride.w - pad.w + kx;
                dst[ow] = (iw < 0 || iw >= in.w) ? T(0) : src[iw];
              }
            }
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col_slice.
template <typename T>
void col2im_slice_add(const T* col, int64_t C, Dims3 in, Dims3 k, Dims3 stride, Dims3 pad,
                      int64_t od, Dims3 out, T* gx) {
  const int64_t hw = out.h * out.w;
  for (int64_t c = 0; c < C; ++c) {
    T* gc = gx + c * in.volume();
    for (int64_t kz = 0; kz < k.d; ++kz) {
      const int64_t id = od * stride.d - pad.d + kz;
      if (id < 0 || id >= in.d) continue;
      for (int64_t ky = 0; ky < k.h; ++ky) {
        for (int64_t kx = 0; kx < k.w; ++kx) {
          const T* row = col + (((c * k.d + kz) * k.h + ky) * k.w + kx) * hw;
          for (int64_t oh = 0; oh < out.h; ++oh) {
            const int64_t ih = oh * stride.h - pad.h + ky;
            if (ih < 0 || ih >= in.h) continue;
            T* dst = gc + (id * in.h + ih) * in.w;
            const T* src = row + oh * out.w;
            for (int64_t ow = 0; ow < out.w; ++ow) {
              const int64_t iw = ow * stride.w - pad.w + kx;
              if (iw >= 0 && iw < in.w) dst[iw] += src[ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 Dims3 stride, Dims3 padding, Tape<T>* tape) {
  require(input.rank() == 5, "conv3d: input must be [N,C,D,H,W], got " + shape_str(input.shape()));
  require(kernel.rank() == 5, "conv3d: kernel must be [F,C,KD,KH,KW], got " + shape_str(kernel.shape()));
  require(bias.rank() == 1, "conv3d: bias must be [F], got " + shape_str(bias.shape()));
  const int64_t N = input.extent(0), C = input.extent(1);
  const Dims3 in{input.extent(2), input.extent(3), input.extent(4)};
  const int64_t F = kernel.extent(0);
  require(kernel.extent(1) == C, "conv3d: kernel channels " + std::to_string(kernel.extent(1)) +
                                     " do not match input channels " + std::to_string(C));
  require(bias.extent(0) == F, "conv3d: bias length does not match filter count");
  const Dims3 k{kernel.extent(2), kernel.extent(3), kernel.extent(4)};
  const Dims3 out{out_extent(in.d, k.d, stride.d, padding.d, "conv3d", "D"),
                  out_extent(in.h, k.h, stride.h, padding.h, "conv3d", "H"),
                  out_extent(in.w, k.w, stride.w, padding.w, "conv3d", "W")};

  const int64_t K = C * k.volume();
  const int64_t hw = out.h * out.w;
  Tensor<T> y(Shape{N, F, out.d, out.h, out.w});
  std::vector<T> col(static_cast<size_t>(K * hw));
  for (int64_t n = 0; n < N; ++n) {
    const T* x = input.data() + n * C * in.volume();
    for (int64_t od = 0; od < out.d; ++od) {
      im2col_slice(x, C, in, k, stride, padding, od, out, col.data());
      T* dst = y.data() + (n * F * out.d + od) * hw;
      gemm<T>(false, false, F, hw, K, T(1), kernel.data(), K, col.data(), hw, T(0), dst, out.d * hw);
    }
    for (int64_t f = 0; f < F; ++f) {
      T* yf = y.data() + (n * F + f) * out.volume();
      const T b = bias[f];
      for (int64_t i = 0; i < out.volume(); ++i) yf[i] += b;
    }
  }

  if (want_grad(tape, {&input, &kernel, &bias})) {
    y.set_requires_grad(true);
    Tensor<T> xh = input, kh = kernel, bh = bias, yh = y;
    tape->record(
        [xh, kh, bh, yh, stride, padding, in, k, out, N, C, F, K, hw]() mutable {
          const std::vector<T>& gy = yh.grad();
          std::vector<T> col(static_cast<size_t>(K * hw));
          std::vector<T> gcol(xh.requires_grad() ? static_cast<size_t>(K * hw) : 0);
          for (int64_t n = 0; n < N; ++n) {
            const T* x = xh.data() + n * C * in.volume();
            for (int64_t od = 0; od < out.d; ++od) {
              const T* gslice = gy.data() + (n * F * out.d + od) * hw;
              if (kh.requires_grad()) {
                im2col_slice(x, C, in, k, stride, padding, od, out, col.data());
                gemm<T>(false, true, F, K, hw, T(1), gslice, out.d * hw, col.data(), hw, T(1),
                        kh.grad().data(), K);
              }
              if (xh.requires_grad()) {
                gemm<T>(true, false, K, hw, F, T(1), kh.data(), K, gslice, out.d * hw, T(0),
                        gcol.data(), hw);
                col2im_slice_add(gcol.data(), C, in, k, stride, padding, od, out,
                                 xh.grad().data() + n * C * in.volume());
              }
            }
            if (bh.requires_grad()) {
              for (int64_t f = 0; f < F; ++f) {
                const T* g = gy.data() + (n * F + f) * out.volume();
                T acc = T(0);
                for (int64_t i = 0; i < out.volume(); ++i) acc += g[i];
                bh.grad()[static_cast<size_t>(f)] += acc;
              }
            }
          }
        },
        {input, kernel, bias, y});
  }
  return y;
}

template <typename T>
Tensor<T> batchnorm3d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& stats, Mode mode, T eps, T momentum, Tape<T>* tape) {
  require(input.rank() == 5, "batchnorm3d: input must be [N,C,D,H,W], got " + shape_str(input.shape()));
  require(input.extent(0) >= 1, "batchnorm3d: batch must hold at least one sample");
  const int64_t N = input.extent(0), C = input.extent(1);
  const int64_t S = input.extent(2) * input.extent(3) * input.extent(4);
  require(gamma.rank() == 1 && gamma.extent(0) == C, "batchnorm3d: gamma must be [C]");
  require(beta.rank() == 1 && beta.extent(0) == C, "batchnorm3d: beta must be [C]");
  require(stats.running_mean.numel() == C && stats.running_var.numel() == C,
          "batchnorm3d: running stats do not match channel count");
  require(eps > T(0), "batchnorm3d: eps must be positive");
  require(momentum >= T(0) && momentum <= T(1), "batchnorm3d: momentum must be in [0,1]");

  const int64_t M = N * S;
  std::vector<T> mean(static_cast<size_t>(C)), invstd(static_cast<size_t>(C));
  if (mode == Mode::Train) {
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const T* x = input.data() + (n * C + c) * S;
        for (int64_t i = 0; i < S; ++i) acc += static_cast<double>(x[i]);
      }
      const double mu = acc / static_cast<double>(M);
      double var = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const T* x = input.data() + (n * C + c) * S;
        for (int64_t i = 0; i < S; ++i) {
          const double d = static_cast<double>(x[i]) - mu;
          var += d * d;
        }
      }
      var /= static_cast<double>(M);
      mean[static_cast<size_t>(c)] = static_cast<T>(mu);
      invstd[static_cast<size_t>(c)] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      stats.running_mean[c] = (T(1) - momentum) * stats.running_mean[c] + momentum * static_cast<T>(mu);
      stats.running_var[c] = (T(1) - momentum) * stats.running_var[c] + momentum * static_cast<T>(var);
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[static_cast<size_t>(c)] = stats.running_mean[c];
      invstd[static_cast<size_t>(c)] =
          static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.running_var[c]) + static_cast<double>(eps)));
    }
  }

  Tensor<T> y(input.shape());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* x = input.data() + (n * C + c) * S;
      T* o = y.data() + (n * C + c) * S;
      const T mu = mean[static_cast<size_t>(c)], is = invstd[static_cast<size_t>(c)];
      const T g = gamma[c], b = beta[c];
      for (int64_t i = 0; i < S; ++i) o[i] = g * (x[i] - mu) * is + b;
    }

  if (want_grad(tape, {&input, &gamma, &beta})) {
    y.set_requires_grad(true);
    Tensor<T> xh = input, gh = gamma, bh = beta, yh = y;
    const bool train = mode == Mode::Train;
    tape->record(
        [xh, gh, bh, yh, mean, invstd, train, N, C, S, M]() mutable {
          const std::vector<T>& gy = yh.grad();
          for (int64_t c = 0; c < C; ++c) {
            const T mu = mean[static_cast<size_t>(c)], is = invstd[static_cast<size_t>(c)];
            double s1 = 0.0, s2 = 0.0;  // sum(dy), sum(dy * xhat)
            for (int64_t n = 0; n < N; ++n) {
              const T* x = xh.data() + (n * C + c) * S;
              const T* g = gy.data() + (n * C + c) * S;
              for (int64_t i = 0; i < S; ++i) {
                s1 += static_cast<double>(g[i]);
                s2 += static_cast<double>(g[i]) * static_cast<double>((x[i] - mu) * is);
              }
            }
            if (gh.requires_grad()) gh.grad()[static_cast<size_t>(c)] += static_cast<T>(s2);
            if (bh.requires_grad()) bh.grad()[static_cast<size_t>(c)] += static_cast<T>(s1);
            if (xh.requires_grad()) {
              const T gs = gh[c] * is;
              const T m1 = static_cast<T>(s1 / static_cast<double>(M));
              const T m2 = static_cast<T>(s2 / static_cast<double>(M));
              for (int64_t n = 0; n < N; ++n) {
                const T* x = xh.data() + (n * C + c) * S;
                const T* g = gy.data() + (n * C + c) * S;
                T* gx = xh.grad().data() + (n * C + c) * S;
                if (train) {
                  for (int64_t i = 0; i < S; ++i) {
                    const T xhat = (x[i] - mu) * is;
                    gx[i] += gs * (g[i] - m1 - xhat * m2);
                  }
                } else {
                  for (int64_t i = 0; i < S; ++i) gx[i] += gs * g[i];
                }
              }
            }
          }
        },
        {input, gamma, beta, y});
  }
  return y;
}

template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& input, Dims3 window, Dims3 stride, Tape<T>* tape) {
  require(input.rank() == 5, "maxpool3d: input must be [N,C,D,H,W], got " + shape_str(input.shape()));
  require(window.d >= 1 && window.h >= 1 && window.w >= 1, "maxpool3d: window must be positive");
  const int64_t N = input.extent(0), C = input.extent(1);
  const Dims3 in{input.extent(2), input.extent(3), input.extent(4)};
  const Dims3 out{out_extent(in.d, window.d, stride.d, 0, "maxpool3d", "D"),
                  out_extent(in.h, window.h, stride.h, 0, "maxpool3d", "H"),
                  out_extent(in.w, window.w, stride.w, 0, "maxpool3d", "W")};

  Tensor<T> y(Shape{N, C, out.d, out.h, out.w});
  std::vector<int64_t> argmax(static_cast<size_t>(y.numel()));
  int64_t oi = 0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* x = input.data() + (n * C + c) * in.volume();
      for (int64_t od = 0; od < out.d; ++od)
        for (int64_t oh = 0; oh < out.h; ++oh)
          for (int64_t ow = 0; ow < out.w; ++ow, ++oi) {
            T best = -std::numeric_limits<T>::infinity();
            int64_t best_at = -1;
            for (int64_t kz = 0; kz < window.d; ++kz)
              for (int64_t ky = 0; ky < window.h; ++ky)
                for (int64_t kx = 0; kx < window.w; ++kx) {
                  const int64_t id = od * stride.d + kz, ih = oh * stride.h + ky, iw = ow * stride.w + kx;
                  const int64_t at = (id * in.h + ih) * in.w + iw;
                  if (x[at] > best) {
                    best = x[at];
                    best_at = at;
                  }
                }
            y[oi] = best;
            argmax[static_cast<size_t>(oi)] = (n * C + c) * in.volume() + best_at;
          }
    }

  if (want_grad(tape, {&input})) {
    y.set_requires_grad(true);
    Tensor<T> xh = input, yh = y;
    tape->record(
        [xh, yh, argmax = std::move(argmax)]() mutable {
          const std::vector<T>& gy = yh.grad();
          std::vector<T>& gx = xh.grad();
          for (size_t i = 0; i < argmax.size(); ++i) gx[static_cast<size_t>(argmax[i])] += gy[i];
        },
        {input, y});
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input, Tape<T>* tape) {
  require(input.rank() == 5, "global_avg_pool: input must be [N,C,D,H,W], got " + shape_str(input.shape()));
  const int64_t N = input.extent(0), C = input.extent(1);
  const int64_t S = input.extent(2) * input.extent(3) * input.extent(4);
  Tensor<T> y(Shape{N, C});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* x = input.data() + (n * C + c) * S;
      double acc = 0.0;
      for (int64_t i = 0; i < S; ++i) acc += static_cast<double>(x[i]);
      y[n * C + c] = static_cast<T>(acc / static_cast<double>(S));
    }

  if (want_grad(tape, {&input})) {
    y.set_requires_grad(true);
    Tensor<T> xh = input, yh = y;
    tape->record(
        [xh, yh, N, C, S]() mutable {
          const std::vector<T>& gy = yh.grad();
          const T inv = T(1) / static_cast<T>(S);
          for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c) {
              T* gx = xh.grad().data() + (n * C + c) * S;
              const T g = gy[static_cast<size_t>(n * C + c)] * inv;
              for (int64_t i = 0; i < S; ++i) gx[i] += g;
            }
        },
        {input, y});
  }
  return y;
}

template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Tape<T>* tape) {
  require(input.rank() == 2, "dense: input must be [N,K], got " + shape_str(input.shape()));
  require(weight.rank() == 2, "dense: weight must be [K,M], got " + shape_str(weight.shape()));
  require(bias.rank() == 1, "dense: bias must be [M], got " + shape_str(bias.shape()));
  const int64_t N = input.extent(0), K = input.extent(1);
  const int64_t M = weight.extent(1);
  require(weight.extent(0) == K, "dense: weight rows " + std::to_string(weight.extent(0)) +
                                     " do not match input width " + std::to_string(K));
  require(bias.extent(0) == M, "dense: bias length does not match output width");

  Tensor<T> y(Shape{N, M});
  gemm<T>(false, false, N, M, K, T(1), input.data(), K, weight.data(), M, T(0), y.data(), M);
  for (int64_t n = 0; n < N; ++n) {
    T* row = y.data() + n * M;
    for (int64_t m = 0; m < M; ++m) row[m] += bias[m];
  }

  if (want_grad(tape, {&input, &weight, &bias})) {
    y.set_requires_grad(true);
    Tensor<T> xh = input, wh = weight, bh = bias, yh = y;
    tape->record(
        [xh, wh, bh, yh, N, K, M]() mutable {
          const std::vector<T>& gy = yh.grad();
          if (xh.requires_grad())
            gemm<T>(false, true, N, K, M, T(1), gy.data(), M, wh.data(), M, T(1), xh.grad().data(), K);
          if (wh.requires_grad())
            gemm<T>(true, false, K, M, N, T(1), xh.data(), K, gy.data(), M, T(1), wh.grad().data(), M);
          if (bh.requires_grad())
            for (int64_t n = 0; n < N; ++n)
              for (int64_t m = 0; m < M; ++m) bh.grad()[static_cast<size_t>(m)] += gy[static_cast<size_t>(n * M + m)];
        },
        {input, weight, bias, y});
  }
  return y;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input, Tape<T>* tape) {
  Tensor<T> y(input.shape());
  for (int64_t i = 0; i < input.numel(); ++i) y[i] = input[i] > T(0) ? input[i] : T(0);
  if (want_grad(tape, {&input})) {
    y.set_requires_grad(true);
    Tensor<T> xh = input, yh = y;
    tape->record(
        [xh, yh]() mutable {
          const std::vector<T>& gy = yh.grad();
          std::vector<T>& gx = xh.grad();
          for (size_t i = 0; i < gx.size(); ++i)
            if (xh[static_cast<int64_t>(i)] > T(0)) gx[i] += gy[i];
        },
        {input, y});
  }
  return y;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input, Tape<T>* tape) {
  Tensor<T> y(input.shape());
  for (int64_t i = 0; i < input.numel(); ++i) {
    const T x = input[i];
    if (x >= T(0)) {
      const T e = std::exp(-x);
      y[i] = T(1) / (T(1) + e);
    } else {
      const T e = std::exp(x);
      y[i] = e / (T(1) + e);
    }
  }
  if (want_grad(tape, {&input})) {
    y.set_requires_grad(true);
    Tensor<T> xh = input, yh = y;
    tape->record(
        [xh, yh]() mutable {
          const std::vector<T>& gy = yh.grad();
          std::vector<T>& gx = xh.grad();
          for (size_t i = 0; i < gx.size(); ++i) {
            const T s = yh[static_cast<int64_t>(i)];
            gx[i] += gy[i] * s * (T(1) - s);
          }
        },
        {input, y});
  }
  return y;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double rate, Mode mode, Rng& rng, Tape<T>* tape) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (mode == Mode::Infer) return input;
  const T q = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<uint8_t> keep(static_cast<size_t>(input.numel()));
  for (auto& k : keep) k = rng.uniform() >= rate ? 1 : 0;
  Tensor<T> y(input.shape());
  for (int64_t i = 0; i < input.numel(); ++i) y[i] = keep[static_cast<size_t>(i)] ? input[i] * q : T(0);
  if (want_grad(tape, {&input})) {
    y.set_requires_grad(true);
    Tensor<T> xh = input, yh = y;
    tape->record(
        [xh, yh, keep = std::move(keep), q]() mutable {
          const std::vector<T>& gy = yh.grad();
          std::vector<T>& gx = xh.grad();
          for (size_t i = 0; i < gx.size(); ++i)
            if (keep[i]) gx[i] += gy[i] * q;
        },
        {input, y});
  }
  return y;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, size_t axis, Tape<T>* tape) {
  require(!parts.empty(), "concat: needs at least one input");
  const size_t rank = parts[0].rank();
  require(axis < rank, "concat: axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  Shape out_shape = parts[0].shape();
  int64_t axis_total = 0;
  for (const auto& p : parts) {
    require(p.rank() == rank, "concat: rank mismatch between inputs");
    for (size_t a = 0; a < rank; ++a)
      if (a != axis)
        require(p.shape()[a] == out_shape[a], "concat: extent mismatch on axis " + std::to_string(a));
    axis_total += p.extent(axis);
  }
  out_shape[axis] = axis_total;

  int64_t outer = 1, inner = 1;
  for (size_t a = 0; a < axis; ++a) outer *= out_shape[a];
  for (size_t a = axis + 1; a < rank; ++a) inner *= out_shape[a];

  Tensor<T> y(out_shape);
  for (int64_t o = 0; o < outer; ++o) {
    T* dst = y.data() + o * axis_total * inner;
    for (const auto& p : parts) {
      const int64_t block = p.extent(axis) * inner;
      std::memcpy(dst, p.data() + o * block, static_cast<size_t>(block) * sizeof(T));
      dst += block;
    }
  }

  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape && any) {
    y.set_requires_grad(true);
    Tensor<T> yh = y;
    std::vector<Tensor<T>> touched = parts;
    touched.push_back(y);
    auto ph = parts;
    tape->record(
        [ph, yh, outer, inner, axis_total]() mutable {
          const std::vector<T>& gy = yh.grad();
          for (int64_t o = 0; o < outer; ++o) {
            const T* src = gy.data() + o * axis_total * inner;
            for (auto& p : ph) {
              const int64_t blk = p.numel() / outer;
              if (p.requires_grad()) {
                T* gx = p.grad().data() + o * blk;
                for (int64_t i = 0; i < blk; ++i) gx[i] += src[i];
              }
              src += blk;
            }
          }
        },
        std::move(touched));
  }
  return y;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& input, size_t axis, int64_t start, int64_t length, Tape<T>* tape) {
  require(axis < input.rank(), "slice: axis " + std::to_string(axis) + " out of range");
  require(start >= 0 && length >= 1 && start + length <= input.extent(axis),
          "slice: range [" + std::to_string(start) + "," + std::to_string(start + length) +
              ") out of bounds for extent " + std::to_string(input.extent(axis)));
  Shape out_shape = input.shape();
  out_shape[axis] = length;
  int64_t outer = 1, inner = 1;
  for (size_t a = 0; a < axis; ++a) outer *= input.shape()[a];
  for (size_t a = axis + 1; a < input.rank(); ++a) inner *= input.shape()[a];
  const int64_t in_axis = input.extent(axis);

  Tensor<T> y(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(y.data() + o * length * inner, input.data() + (o * in_axis + start) * inner,
                static_cast<size_t>(length * inner) * sizeof(T));

  if (want_grad(tape, {&input})) {
    y.set_requires_grad(true);
    Tensor<T> xh = input, yh = y;
    tape->record(
        [xh, yh, outer, inner, in_axis, start, length]() mutable {
          const std::vector<T>& gy = yh.grad();
          std::vector<T>& gx = xh.grad();
          for (int64_t o = 0; o < outer; ++o) {
            T* dst = gx.data() + (o * in_axis + start) * inner;
            const T* src = gy.data() + o * length * inner;
            for (int64_t i = 0; i < length * inner; ++i) dst[i] += src[i];
          }
        },
        {input, y});
  }
  return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& input, T factor, Tape<T>* tape) {
  Tensor<T> y(input.shape());
  for (int64_t i = 0; i < input.numel(); ++i) y[i] = input[i] * factor;
  if (want_grad(tape, {&input})) {
    y.set_requires_grad(true);
    Tensor<T> xh = input, yh = y;
    tape->record(
        [xh, yh, factor]() mutable {
          const std::vector<T>& gy = yh.grad();
          std::vector<T>& gx = xh.grad();
          for (size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * factor;
        },
        {input, y});
  }
  return y;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input, Tape<T>* tape) {
  double acc = 0.0;
  for (int64_t i = 0; i < input.numel(); ++i) acc += static_cast<double>(input[i]);
  Tensor<T> y = Tensor<T>::scalar(static_cast<T>(acc));
  if (want_grad(tape, {&input})) {
    y.set_requires_grad(true);
    Tensor<T> xh = input, yh = y;
    tape->record(
        [xh, yh]() mutable {
          const T g = yh.grad()[0];
          std::vector<T>& gx = xh.grad();
          for (auto& v : gx) v += g;
        },
        {input, y});
  }
  return y;
}

#define NH_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> conv3d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Dims3,   \
                               Dims3, Tape<T>*);                                              \
  template Tensor<T> batchnorm3d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                    BatchNormState<T>&, Mode, T, T, Tape<T>*);                \
  template Tensor<T> maxpool3d<T>(const Tensor<T>&, Dims3, Dims3, Tape<T>*);                  \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&, Tape<T>*);                          \
  template Tensor<T> dense<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tape<T>*);\
  template Tensor<T> relu<T>(const Tensor<T>&, Tape<T>*);                                     \
  template Tensor<T> sigmoid<T>(const Tensor<T>&, Tape<T>*);                                  \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Mode, Rng&, Tape<T>*);              \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, size_t, Tape<T>*);              \
  template Tensor<T> slice<T>(const Tensor<T>&, size_t, int64_t, int64_t, Tape<T>*);          \
  template Tensor<T> scale<T>(const Tensor<T>&, T, Tape<T>*);                                 \
  template Tensor<T> sum<T>(const Tensor<T>&, Tape<T>*);

NH_INSTANTIATE_OPS(float)
NH_INSTANTIATE_OPS(double)
#undef NH_INSTANTIATE_OPS

}  // namespace neurohybrid
