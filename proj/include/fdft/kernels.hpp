#pragma once

// Pure forward and backward kernels over channels-last tensors. Every
// function here is stateless; the autograd layer composes them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>

#include "fdft/tensor.hpp"

namespace fdft::kernels {

/// Row-major C = alpha * op(A) * op(B) + beta * C.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc);

// ---------------------------------------------------------------------------
// Scalar activations.

template <class T>
constexpr T relu(T x) noexcept {
  return x > T(0) ? x : T(0);
}
template <class T>
constexpr T relu6(T x) noexcept {
  return std::min(std::max(x, T(0)), T(6));
}
template <class T>
constexpr T hard_sigmoid(T x) noexcept {
  return relu6(x + T(3)) / T(6);
}
template <class T>
constexpr T h_swish(T x) noexcept {
  return x * hard_sigmoid(x);
}
template <class T>
T sigmoid(T x) noexcept {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
constexpr T relu_grad(T x) noexcept {
  return x > T(0) ? T(1) : T(0);
}
template <class T>
constexpr T relu6_grad(T x) noexcept {
  return (x > T(0) && x < T(6)) ? T(1) : T(0);
}
template <class T>
constexpr T hard_sigmoid_grad(T x) noexcept {
  return (x > T(-3) && x < T(3)) ? T(1) / T(6) : T(0);
}
// At x = -3 and x = 3 the interior branch is used.
template <class T>
constexpr T h_swish_grad(T x) noexcept {
  if (x < T(-3)) return T(0);
  if (x > T(3)) return T(1);
  return (T(2) * x + T(3)) / T(6);
}

// ---------------------------------------------------------------------------
// Convolutions.

/// Weights of a depthwise-separable or pointwise convolution.
template <class T>
struct ConvWeights {
  Tensor<T> pointwise;            // (1, 1, c_in, c_out)
  Tensor<T> depthwise;            // (1, 3, 3, c_in); empty for plain 1x1
  std::optional<Tensor<T>> bias;  // (1, 1, 1, c_out)
};

/// Leading zero padding of a same-padded 3-wide window.
constexpr std::size_t same_pad_before(std::size_t in, std::size_t stride) noexcept {
  const std::size_t out = same_out(in, stride);
  const std::size_t needed = (out - 1) * stride + 3;
  return needed > in ? (needed - in) / 2 : 0;
}

void require_stride(const char* op, std::size_t stride);

/// y = subsample(x, stride) * w (+ bias). w is (1, 1, c_in, c_out).
template <class T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                  std::size_t stride = 1);

/// Accumulates gradients into any non-null output.
template <class T>
void conv1x1_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                      std::size_t stride, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db);

/// Per-channel 3x3 convolution with same zero padding. k is (1, 3, 3, c).
template <class T>
Tensor<T> depthwise3x3(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride);

template <class T>
void depthwise3x3_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& dy,
                           std::size_t stride, Tensor<T>* dx, Tensor<T>* dk);

/// Depthwise 3x3 followed by a bias-free pointwise projection.
template <class T>
Tensor<T> depthwise_separable_conv3x3(const Tensor<T>& x, const ConvWeights<T>& w,
                                      std::size_t stride);

// ---------------------------------------------------------------------------
// Batch normalization. Parameter vectors are (1, 1, 1, c).

template <class T>
Tensor<T> batch_norm_infer(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           const Tensor<T>& mean, const Tensor<T>& var, double eps);

/// State saved by a training-mode batch-norm forward pass.
template <class T>
struct BatchNormSaved {
  Tensor<T> xhat;
  std::vector<T> inv_std;
  std::vector<T> mean;
  std::vector<T> var;  // biased batch variance
};

template <class T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           double eps, BatchNormSaved<T>& saved);

/// Full backward through batch statistics.
template <class T>
void batch_norm_train_backward(const Tensor<T>& dy, const Tensor<T>& gamma,
                               const BatchNormSaved<T>& saved, Tensor<T>* dx,
                               Tensor<T>* dgamma, Tensor<T>* dbeta);

// ---------------------------------------------------------------------------
// Attention building blocks. Each (n, h, w, c) tensor is viewed per batch
// element as an (h*w) x c matrix.

/// Softmax over the channel axis of every (n, h, w) row.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& s);

/// dx = y * (g - sum(y * g)) per row.
template <class T>
void softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx);

/// out[b, j, i] = q[b, j, :] . k[b, i, :]; result (n, q.h, q.w, k.h * k.w).
template <class T>
Tensor<T> matmul_abt(const Tensor<T>& q, const Tensor<T>& k);

template <class T>
void matmul_abt_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& dout,
                         Tensor<T>* dq, Tensor<T>* dk);

/// o[b, j, :] = sum_i attn[b, j, i] * v[b, i, :]; result (n, attn.h, attn.w, v.c).
template <class T>
Tensor<T> batchdot(const Tensor<T>& attn, const Tensor<T>& v);

template <class T>
void batchdot_backward(const Tensor<T>& attn, const Tensor<T>& v, const Tensor<T>& dout,
                       Tensor<T>* dattn, Tensor<T>* dv);

/// batchdot(softmax_rows(matmul_abt(g, f)), h) evaluated in blocks of query
/// rows, so the (L x L) attention map is never stored. The backward pass
/// recomputes each block of the map.
template <class T>
Tensor<T> attention(const Tensor<T>& g, const Tensor<T>& f, const Tensor<T>& h);

template <class T>
void attention_backward(const Tensor<T>& g, const Tensor<T>& f, const Tensor<T>& h,
                        const Tensor<T>& dout, Tensor<T>* dg, Tensor<T>* df, Tensor<T>* dh);

// ---------------------------------------------------------------------------
// Pooling and dense.

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

template <class T>
void global_avg_pool_backward(const Shape& in_shape, const Tensor<T>& dy, Tensor<T>& dx);

/// Affine map of (n, 1, 1, c) rows by w (1, 1, c, k) and b (1, 1, 1, k).
template <class T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

}  // namespace fdft::kernels
