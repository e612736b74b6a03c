#include "fdft/kernels.hpp"

#include <Eigen/Core>

#include <bit>
#include <cstdint>
#include <limits>

namespace fdft::kernels {

namespace {

Eigen::Index ix(std::size_t v) { return static_cast<Eigen::Index>(v); }

// exp(x) for x <= 0 without calls or branches, so softmax loops vectorize.
// Cephes polynomial; within 2 ulp of std::exp.
inline float exp_nonpos(float x) {
  x = std::max(x, -87.0f);
  const std::int32_t ni = -static_cast<std::int32_t>(x * -1.44269504088896341f + 0.5f);
  const float n = static_cast<float>(ni);
  const float r = x - n * 0.693359375f + n * 2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const float y = p * r * r + r + 1.0f;
  return y * std::bit_cast<float>(static_cast<std::uint32_t>(ni + 127) << 23);
}

inline double exp_nonpos(double x) { return std::exp(x); }

template <class T>
void softmax_inplace(T* row, std::size_t c) {
  T mx = row[0];
#pragma omp simd reduction(max : mx)
  for (std::size_t i = 1; i < c; ++i) mx = row[i] > mx ? row[i] : mx;
#pragma omp simd
  for (std::size_t i = 0; i < c; ++i) row[i] = exp_nonpos(row[i] - mx);
  T sum = T(0);
#pragma omp simd reduction(+ : sum)
  for (std::size_t i = 0; i < c; ++i) sum += row[i];
  const T inv = T(1) / sum;
#pragma omp simd
  for (std::size_t i = 0; i < c; ++i) row[i] *= inv;
}

void require_vector(const char* op, const char* what, const Shape& s, std::size_t c) {
  if (s.n != 1 || s.h != 1 || s.w != 1) {
    throw DimensionError(std::string(op) + ": " + what + " must be a (1,1,1,c) vector, got " +
                         s.str());
  }
  require_dim(op, "c", s.c, c);
}

/// Copies the strided subsample of x selected by a 1x1 window.
template <class T>
Tensor<T> subsample(const Tensor<T>& x, std::size_t stride) {
  const Shape& s = x.shape();
  Shape o{s.n, same_out(s.h, stride), same_out(s.w, stride), s.c};
  Tensor<T> out(o);
  for (std::size_t n = 0; n < o.n; ++n)
    for (std::size_t y = 0; y < o.h; ++y)
      for (std::size_t xx = 0; xx < o.w; ++xx) {
        const T* src = x.ptr() + s.index(n, y * stride, xx * stride, 0);
        std::copy(src, src + s.c, out.ptr() + o.index(n, y, xx, 0));
      }
  return out;
}

}  // namespace

template <class T>
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<>;
  using In = Eigen::Map<const Mat, Eigen::Unaligned, Stride>;
  if (m == 0 || n == 0) return;
  Eigen::Map<Mat, Eigen::Unaligned, Stride> out(c, ix(m), ix(n), Stride(ix(ldc)));
  const In am(a, ix(ta ? k : m), ix(ta ? m : k), Stride(ix(lda)));
  const In bm(b, ix(tb ? n : k), ix(tb ? k : n), Stride(ix(ldb)));
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (beta == T(0)) {
      out.noalias() = alpha * lhs * rhs;
    } else {
      if (beta != T(1)) out *= beta;
      out.noalias() += alpha * lhs * rhs;
    }
  };
  if (!ta && !tb) run(am, bm);
  else if (!ta) run(am, bm.transpose());
  else if (!tb) run(am.transpose(), bm);
  else run(am.transpose(), bm.transpose());
}

template void gemm(bool, bool, std::size_t, std::size_t, std::size_t, float, const float*,
                   std::size_t, const float*, std::size_t, float, float*, std::size_t);
template void gemm(bool, bool, std::size_t, std::size_t, std::size_t, double, const double*,
                   std::size_t, const double*, std::size_t, double, double*, std::size_t);

void require_stride(const char* op, std::size_t stride) {
  if (stride != 1 && stride != 2) {
    throw ConfigError(std::string(op) + ": stride must be 1 or 2, got " +
                      std::to_string(stride));
  }
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                  std::size_t stride) {
  require_stride("conv1x1", stride);
  const Shape& ws = w.shape();
  if (ws.n != 1 || ws.h != 1) {
    throw DimensionError("conv1x1: weight must be (1,1,c_in,c_out), got " + ws.str());
  }
  require_dim("conv1x1", "c_in", x.shape().c, ws.w);
  if (bias) require_vector("conv1x1", "bias", bias->shape(), ws.c);

  const Tensor<T> sub = stride == 1 ? Tensor<T>() : subsample(x, stride);
  const Tensor<T>& in = stride == 1 ? x : sub;
  const Shape& is = in.shape();
  Tensor<T> out(Shape{is.n, is.h, is.w, ws.c});
  const std::size_t rows = is.n * is.h * is.w;
  if (bias) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(bias->ptr(), bias->ptr() + ws.c, out.ptr() + r * ws.c);
  }
  gemm<T>(false, false, rows, ws.c, ws.w, T(1), in.ptr(), ws.w, w.ptr(), ws.c,
          bias ? T(1) : T(0), out.ptr(), ws.c);
  return out;
}

template <class T>
void conv1x1_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                      std::size_t stride, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const Shape& ws = w.shape();
  const std::size_t cin = ws.w;
  const std::size_t cout = ws.c;
  const std::size_t rows = dy.shape().n * dy.shape().h * dy.shape().w;
  const Tensor<T> sub = (stride == 1 || !dw) ? Tensor<T>() : subsample(x, stride);
  const Tensor<T>& in = stride == 1 ? x : sub;

  if (dw) gemm<T>(true, false, cin, cout, rows, T(1), in.ptr(), cin, dy.ptr(), cout, T(1),
                  dw->ptr(), cout);
  if (db) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cout; ++c) (*db)[c] += dy[r * cout + c];
  }
  if (dx) {
    if (stride == 1) {
      gemm<T>(false, true, rows, cin, cout, T(1), dy.ptr(), cout, w.ptr(), cout, T(1),
              dx->ptr(), cin);
    } else {
      Tensor<T> dsub(Shape{dy.shape().n, dy.shape().h, dy.shape().w, cin});
      gemm<T>(false, true, rows, cin, cout, T(1), dy.ptr(), cout, w.ptr(), cout, T(0),
              dsub.ptr(), cin);
      const Shape& xs = x.shape();
      const Shape& ss = dsub.shape();
      for (std::size_t n = 0; n < ss.n; ++n)
        for (std::size_t y = 0; y < ss.h; ++y)
          for (std::size_t xx = 0; xx < ss.w; ++xx) {
            const T* src = dsub.ptr() + ss.index(n, y, xx, 0);
            T* dst = dx->ptr() + xs.index(n, y * stride, xx * stride, 0);
            for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
          }
    }
  }
}

template <class T>
Tensor<T> depthwise3x3(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride) {
  require_stride("depthwise3x3", stride);
  const Shape& s = x.shape();
  const Shape& ks = k.shape();
  if (ks.n != 1 || ks.h != 3 || ks.w != 3) {
    throw DimensionError("depthwise3x3: kernel must be (1,3,3,c), got " + ks.str());
  }
  require_dim("depthwise3x3", "c", s.c, ks.c);
  const Shape o{s.n, same_out(s.h, stride), same_out(s.w, stride), s.c};
  const std::ptrdiff_t py = static_cast<std::ptrdiff_t>(same_pad_before(s.h, stride));
  const std::ptrdiff_t px = static_cast<std::ptrdiff_t>(same_pad_before(s.w, stride));
  const std::size_t c = s.c;
  Tensor<T> out(o);
  for (std::size_t n = 0; n < o.n; ++n)
    for (std::size_t oy = 0; oy < o.h; ++oy)
      for (std::size_t ox = 0; ox < o.w; ++ox) {
        T* dst = out.ptr() + o.index(n, oy, ox, 0);
        for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride) + ky - py;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
          for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride) + kx - px;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
            const T* src = x.ptr() + s.index(n, iy, ix, 0);
            const T* kw = k.ptr() + ks.index(0, ky, kx, 0);
            for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch] * kw[ch];
          }
        }
      }
  return out;
}

template <class T>
void depthwise3x3_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& dy,
                           std::size_t stride, Tensor<T>* dx, Tensor<T>* dk) {
  const Shape& s = x.shape();
  const Shape& ks = k.shape();
  const Shape& o = dy.shape();
  const std::ptrdiff_t py = static_cast<std::ptrdiff_t>(same_pad_before(s.h, stride));
  const std::ptrdiff_t px = static_cast<std::ptrdiff_t>(same_pad_before(s.w, stride));
  const std::size_t c = s.c;
  for (std::size_t n = 0; n < o.n; ++n)
    for (std::size_t oy = 0; oy < o.h; ++oy)
      for (std::size_t ox = 0; ox < o.w; ++ox) {
        const T* g = dy.ptr() + o.index(n, oy, ox, 0);
        for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride) + ky - py;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
          for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride) + kx - px;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
            const std::size_t xi = s.index(n, iy, ix, 0);
            const std::size_t ki = ks.index(0, ky, kx, 0);
            if (dx) {
              T* d = dx->ptr() + xi;
              const T* kw = k.ptr() + ki;
              for (std::size_t ch = 0; ch < c; ++ch) d[ch] += g[ch] * kw[ch];
            }
            if (dk) {
              T* d = dk->ptr() + ki;
              const T* src = x.ptr() + xi;
              for (std::size_t ch = 0; ch < c; ++ch) d[ch] += g[ch] * src[ch];
            }
          }
        }
      }
}

template <class T>
Tensor<T> depthwise_separable_conv3x3(const Tensor<T>& x, const ConvWeights<T>& w,
                                      std::size_t stride) {
  return conv1x1(depthwise3x3(x, w.depthwise, stride), w.pointwise,
                 w.bias ? &*w.bias : nullptr, 1);
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> batch_norm_infer(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           const Tensor<T>& mean, const Tensor<T>& var, double eps) {
  const std::size_t c = x.shape().c;
  require_vector("batch_norm", "gamma", gamma.shape(), c);
  require_vector("batch_norm", "beta", beta.shape(), c);
  require_vector("batch_norm", "moving_mean", mean.shape(), c);
  require_vector("batch_norm", "moving_var", var.shape(), c);
  std::vector<T> scale(c), shift(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (!(var[ch] >= T(0)) || !std::isfinite(mean[ch]) || !std::isfinite(var[ch])) {
      throw NumericError("batch_norm: moving statistics of channel " + std::to_string(ch) +
                         " are not finite or have negative variance");
    }
  }
  Tensor<T> out(x.shape());
  const std::size_t rows = x.size() / std::max<std::size_t>(c, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.ptr() + r * c;
    T* dst = out.ptr() + r * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      dst[ch] = gamma[ch] * (src[ch] - mean[ch]) / std::sqrt(var[ch] + T(eps)) + beta[ch];
    }
  }
  return out;
}

template <class T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           double eps, BatchNormSaved<T>& saved) {
  const std::size_t c = x.shape().c;
  require_vector("batch_norm", "gamma", gamma.shape(), c);
  require_vector("batch_norm", "beta", beta.shape(), c);
  const std::size_t rows = x.size() / std::max<std::size_t>(c, 1);
  std::vector<double> sum(c, 0.0), sq(c, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) sum[ch] += x[r * c + ch];
  saved.mean.assign(c, T(0));
  saved.var.assign(c, T(0));
  saved.inv_std.assign(c, T(0));
  for (std::size_t ch = 0; ch < c; ++ch) sum[ch] /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double d = x[r * c + ch] - sum[ch];
      sq[ch] += d * d;
    }
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double var = sq[ch] / static_cast<double>(rows);
    if (!std::isfinite(sum[ch]) || !std::isfinite(var)) {
      throw NumericError("batch_norm: batch statistics of channel " + std::to_string(ch) +
                         " are not finite");
    }
    saved.mean[ch] = static_cast<T>(sum[ch]);
    saved.var[ch] = static_cast<T>(var);
    saved.inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + eps));
  }
  saved.xhat = Tensor<T>(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = r * c + ch;
      const T xh = (x[i] - saved.mean[ch]) * saved.inv_std[ch];
      saved.xhat[i] = xh;
      out[i] = gamma[ch] * xh + beta[ch];
    }
  return out;
}

template <class T>
void batch_norm_train_backward(const Tensor<T>& dy, const Tensor<T>& gamma,
                               const BatchNormSaved<T>& saved, Tensor<T>* dx,
                               Tensor<T>* dgamma, Tensor<T>* dbeta) {
  const std::size_t c = dy.shape().c;
  const std::size_t rows = dy.size() / std::max<std::size_t>(c, 1);
  std::vector<double> sdy(c, 0.0), sdyx(c, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = r * c + ch;
      sdy[ch] += dy[i];
      sdyx[ch] += static_cast<double>(dy[i]) * saved.xhat[i];
    }
  if (dgamma)
    for (std::size_t ch = 0; ch < c; ++ch) (*dgamma)[ch] += static_cast<T>(sdyx[ch]);
  if (dbeta)
    for (std::size_t ch = 0; ch < c; ++ch) (*dbeta)[ch] += static_cast<T>(sdy[ch]);
  if (!dx) return;
  const double m = static_cast<double>(rows);
  std::vector<T> k(c), mdy(c), mdyx(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    k[ch] = gamma[ch] * saved.inv_std[ch];
    mdy[ch] = static_cast<T>(sdy[ch] / m);
    mdyx[ch] = static_cast<T>(sdyx[ch] / m);
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = r * c + ch;
      (*dx)[i] += k[ch] * (dy[i] - mdy[ch] - saved.xhat[i] * mdyx[ch]);
    }
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& s) {
  const std::size_t c = s.shape().c;
  const std::size_t rows = c == 0 ? 0 : s.size() / c;
  Tensor<T> out(s.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = s.ptr() + r * c;
    T* dst = out.ptr() + r * c;
    std::copy(src, src + c, dst);
    softmax_inplace(dst, c);
  }
  return out;
}

template <class T>
void softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx) {
  const std::size_t c = y.shape().c;
  const std::size_t rows = c == 0 ? 0 : y.size() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* yr = y.ptr() + r * c;
    const T* gr = dy.ptr() + r * c;
    T* dr = dx.ptr() + r * c;
    T dot = T(0);
#pragma omp simd reduction(+ : dot)
    for (std::size_t i = 0; i < c; ++i) dot += yr[i] * gr[i];
#pragma omp simd
    for (std::size_t i = 0; i < c; ++i) dr[i] += yr[i] * (gr[i] - dot);
  }
}

template <class T>
Tensor<T> matmul_abt(const Tensor<T>& q, const Tensor<T>& k) {
  const Shape& qs = q.shape();
  const Shape& ks = k.shape();
  require_dim("matmul_abt", "n", ks.n, qs.n);
  require_dim("matmul_abt", "c", ks.c, qs.c);
  const std::size_t lq = qs.positions();
  const std::size_t lk = ks.positions();
  const std::size_t d = qs.c;
  Tensor<T> out(Shape{qs.n, qs.h, qs.w, lk});
  for (std::size_t b = 0; b < qs.n; ++b) {
    gemm<T>(false, true, lq, lk, d, T(1), q.ptr() + b * lq * d, d, k.ptr() + b * lk * d, d,
            T(0), out.ptr() + b * lq * lk, lk);
  }
  return out;
}

template <class T>
void matmul_abt_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& dout,
                         Tensor<T>* dq, Tensor<T>* dk) {
  const std::size_t lq = q.shape().positions();
  const std::size_t lk = k.shape().positions();
  const std::size_t d = q.shape().c;
  for (std::size_t b = 0; b < q.shape().n; ++b) {
    const T* g = dout.ptr() + b * lq * lk;
    if (dq)
      gemm<T>(false, false, lq, d, lk, T(1), g, lk, k.ptr() + b * lk * d, d, T(1),
              dq->ptr() + b * lq * d, d);
    if (dk)
      gemm<T>(true, false, lk, d, lq, T(1), g, lk, q.ptr() + b * lq * d, d, T(1),
              dk->ptr() + b * lk * d, d);
  }
}

template <class T>
Tensor<T> batchdot(const Tensor<T>& attn, const Tensor<T>& v) {
  const Shape& as = attn.shape();
  const Shape& vs = v.shape();
  require_dim("batchdot", "n", vs.n, as.n);
  require_dim("batchdot", "inner", as.c, vs.positions());
  const std::size_t lq = as.positions();
  const std::size_t l = as.c;
  const std::size_t c = vs.c;
  Tensor<T> out(Shape{as.n, as.h, as.w, c});
  for (std::size_t b = 0; b < as.n; ++b) {
    gemm<T>(false, false, lq, c, l, T(1), attn.ptr() + b * lq * l, l, v.ptr() + b * l * c, c,
            T(0), out.ptr() + b * lq * c, c);
  }
  return out;
}

template <class T>
void batchdot_backward(const Tensor<T>& attn, const Tensor<T>& v, const Tensor<T>& dout,
                       Tensor<T>* dattn, Tensor<T>* dv) {
  const std::size_t lq = attn.shape().positions();
  const std::size_t l = attn.shape().c;
  const std::size_t c = v.shape().c;
  for (std::size_t b = 0; b < attn.shape().n; ++b) {
    const T* g = dout.ptr() + b * lq * c;
    if (dattn)
      gemm<T>(false, true, lq, l, c, T(1), g, c, v.ptr() + b * l * c, c, T(1),
              dattn->ptr() + b * lq * l, l);
    if (dv)
      gemm<T>(true, false, l, c, lq, T(1), attn.ptr() + b * lq * l, l, g, c, T(1),
              dv->ptr() + b * l * c, c);
  }
}

namespace {

constexpr std::size_t kAttentionBlock = 64;

struct AttentionDims {
  std::size_t n, lq, lk, d, c;
};

template <class T>
AttentionDims attention_dims(const Tensor<T>& g, const Tensor<T>& f, const Tensor<T>& h) {
  const Shape& gs = g.shape();
  require_dim("attention", "n", f.shape().n, gs.n);
  require_dim("attention", "n", h.shape().n, gs.n);
  require_dim("attention", "c", f.shape().c, gs.c);
  require_dim("attention", "positions", h.shape().positions(), f.shape().positions());
  return {gs.n, gs.positions(), f.shape().positions(), gs.c, h.shape().c};
}

// beta rows [j0, j0 + rows) of batch element b, written to `out` (rows x lk).
template <class T>
void attention_rows(const AttentionDims& a, const T* g, const T* f, std::size_t j0,
                    std::size_t rows, T* out) {
  gemm<T>(false, true, rows, a.lk, a.d, T(1), g + j0 * a.d, a.d, f, a.d, T(0), out, a.lk);
  for (std::size_t r = 0; r < rows; ++r) softmax_inplace(out + r * a.lk, a.lk);
}

}  // namespace

template <class T>
Tensor<T> attention(const Tensor<T>& g, const Tensor<T>& f, const Tensor<T>& h) {
  const AttentionDims a = attention_dims(g, f, h);
  Tensor<T> out(Shape{a.n, g.shape().h, g.shape().w, a.c});
  std::vector<T> beta(kAttentionBlock * a.lk);
  for (std::size_t b = 0; b < a.n; ++b) {
    const T* gb = g.ptr() + b * a.lq * a.d;
    const T* fb = f.ptr() + b * a.lk * a.d;
    const T* hb = h.ptr() + b * a.lk * a.c;
    for (std::size_t j0 = 0; j0 < a.lq; j0 += kAttentionBlock) {
      const std::size_t rows = std::min(kAttentionBlock, a.lq - j0);
      attention_rows(a, gb, fb, j0, rows, beta.data());
      gemm<T>(false, false, rows, a.c, a.lk, T(1), beta.data(), a.lk, hb, a.c, T(0),
              out.ptr() + (b * a.lq + j0) * a.c, a.c);
    }
  }
  return out;
}

template <class T>
void attention_backward(const Tensor<T>& g, const Tensor<T>& f, const Tensor<T>& h,
                        const Tensor<T>& dout, Tensor<T>* dg, Tensor<T>* df, Tensor<T>* dh) {
  const AttentionDims a = attention_dims(g, f, h);
  std::vector<T> beta(kAttentionBlock * a.lk);
  std::vector<T> dbeta(kAttentionBlock * a.lk);
  for (std::size_t b = 0; b < a.n; ++b) {
    const T* gb = g.ptr() + b * a.lq * a.d;
    const T* fb = f.ptr() + b * a.lk * a.d;
    const T* hb = h.ptr() + b * a.lk * a.c;
    for (std::size_t j0 = 0; j0 < a.lq; j0 += kAttentionBlock) {
      const std::size_t rows = std::min(kAttentionBlock, a.lq - j0);
      const T* go = dout.ptr() + (b * a.lq + j0) * a.c;
      attention_rows(a, gb, fb, j0, rows, beta.data());
      if (dh)
        gemm<T>(true, false, a.lk, a.c, rows, T(1), beta.data(), a.lk, go, a.c, T(1),
                dh->ptr() + b * a.lk * a.c, a.c);
      if (!dg && !df) continue;
      gemm<T>(false, true, rows, a.lk, a.c, T(1), go, a.c, hb, a.c, T(0), dbeta.data(), a.lk);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = beta.data() + r * a.lk;
        T* d = dbeta.data() + r * a.lk;
        T dot = T(0);
#pragma omp simd reduction(+ : dot)
        for (std::size_t i = 0; i < a.lk; ++i) dot += y[i] * d[i];
#pragma omp simd
        for (std::size_t i = 0; i < a.lk; ++i) d[i] = y[i] * (d[i] - dot);
      }
      if (dg)
        gemm<T>(false, false, rows, a.d, a.lk, T(1), dbeta.data(), a.lk, fb, a.d, T(1),
                dg->ptr() + (b * a.lq + j0) * a.d, a.d);
      if (df)
        gemm<T>(true, false, a.lk, a.d, rows, T(1), dbeta.data(), a.lk, gb + j0 * a.d, a.d, T(1),
                df->ptr() + b * a.lk * a.d, a.d);
    }
  }
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.h == 0 || s.w == 0) throw DimensionError("global_avg_pool: empty spatial extent");
  Tensor<T> out(Shape{s.n, 1, 1, s.c});
  const std::size_t p = s.positions();
  std::vector<double> acc(s.c);
  for (std::size_t n = 0; n < s.n; ++n) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t i = 0; i < p; ++i) {
      const T* src = x.ptr() + (n * p + i) * s.c;
      for (std::size_t ch = 0; ch < s.c; ++ch) acc[ch] += src[ch];
    }
    for (std::size_t ch = 0; ch < s.c; ++ch)
      out[n * s.c + ch] = static_cast<T>(acc[ch] / static_cast<double>(p));
  }
  return out;
}

template <class T>
void global_avg_pool_backward(const Shape& s, const Tensor<T>& dy, Tensor<T>& dx) {
  const std::size_t p = s.positions();
  const T inv = T(1) / static_cast<T>(p);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < p; ++i) {
      T* dst = dx.ptr() + (n * p + i) * s.c;
      const T* g = dy.ptr() + n * s.c;
      for (std::size_t ch = 0; ch < s.c; ++ch) dst[ch] += g[ch] * inv;
    }
}

template <class T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.shape().h != 1 || x.shape().w != 1) {
    throw DimensionError("dense: input must be (n,1,1,c), got " + x.shape().str());
  }
  return conv1x1(x, w, &b, 1);
}

#define FDFT_INSTANTIATE(T)                                                                  \
  template Tensor<T> conv1x1(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,          \
                             std::size_t);                                                   \
  template void conv1x1_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                 std::size_t, Tensor<T>*, Tensor<T>*, Tensor<T>*);           \
  template Tensor<T> depthwise3x3(const Tensor<T>&, const Tensor<T>&, std::size_t);         \
  template void depthwise3x3_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                      std::size_t, Tensor<T>*, Tensor<T>*);                  \
  template Tensor<T> depthwise_separable_conv3x3(const Tensor<T>&, const ConvWeights<T>&,   \
                                                 std::size_t);                               \
  template Tensor<T> batch_norm_infer(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                      const Tensor<T>&, const Tensor<T>&, double);           \
  template Tensor<T> batch_norm_train(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                      double, BatchNormSaved<T>&);                           \
  template void batch_norm_train_backward(const Tensor<T>&, const Tensor<T>&,               \
                                          const BatchNormSaved<T>&, Tensor<T>*, Tensor<T>*,  \
                                          Tensor<T>*);                                       \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                         \
  template void softmax_rows_backward(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);      \
  template Tensor<T> matmul_abt(const Tensor<T>&, const Tensor<T>&);                         \
  template void matmul_abt_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                    Tensor<T>*, Tensor<T>*);                                 \
  template Tensor<T> batchdot(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template void attention_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                   const Tensor<T>&, Tensor<T>*, Tensor<T>*, Tensor<T>*);    \
  template void batchdot_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                  Tensor<T>*, Tensor<T>*);                                   \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                      \
  template void global_avg_pool_backward(const Shape&, const Tensor<T>&, Tensor<T>&);       \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

FDFT_INSTANTIATE(float)
FDFT_INSTANTIATE(double)
#undef FDFT_INSTANTIATE

}  // namespace fdft::kernels
