#include "fdft/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fdft {

Shape shape_from_dims(const std::vector<std::size_t>& dims) {
  if (dims.empty() || dims.size() > 4) {
    throw DimensionError("parameter rank must be 1..4, got " + std::to_string(dims.size()));
  }
  std::size_t s[4] = {1, 1, 1, 1};
  const std::size_t off = 4 - dims.size();
  for (std::size_t i = 0; i < dims.size(); ++i) s[off + i] = dims[i];
  return Shape{s[0], s[1], s[2], s[3]};
}

// ---------------------------------------------------------------------------
// ParamStore

template <class T>
Parameter<T>& ParamStore<T>::add(std::string name, std::vector<std::size_t> dims, T fill,
                                 ParamKind kind) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Parameter<T> p;
  const Shape shape = shape_from_dims(dims);
  p.name = name;
  p.dims = std::move(dims);
  p.value = Tensor<T>(shape, fill);
  p.grad = Tensor<T>(shape);
  p.kind = kind;
  p.trainable = kind == ParamKind::Weight;
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return params_.back();
}

template <class T>
Parameter<T>* ParamStore<T>::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <class T>
const Parameter<T>* ParamStore<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <class T>
Parameter<T>& ParamStore<T>::at(const std::string& name) {
  Parameter<T>* p = find(name);
  if (!p) throw ConfigError("unknown parameter '" + name + "'");
  return *p;
}

template <class T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.grad.fill(T(0));
}

template <class T>
void ParamStore<T>::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& p : params_) {
    if (p.kind == ParamKind::Weight && p.name.starts_with(prefix)) p.trainable = trainable;
  }
}

template <class T>
std::size_t ParamStore<T>::total_numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

template <class T>
std::size_t ParamStore<T>::trainable_numel() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += p.numel();
  return n;
}

template <class T>
std::size_t ParamStore<T>::numel_with_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.name.starts_with(prefix)) n += p.numel();
  return n;
}

// ---------------------------------------------------------------------------
// Tape

template <class T>
typename Tape<T>::Var Tape<T>::constant(Tensor<T> value) {
  if (consumed_) throw StateError("tape already swept; record a new forward pass");
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <class T>
typename Tape<T>::Var Tape<T>::param(Parameter<T>& p) {
  if (consumed_) throw StateError("tape already swept; record a new forward pass");
  Node node;
  node.param = &p;
  node.requires_grad = p.trainable;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <class T>
typename Tape<T>::Var Tape<T>::record(Tensor<T> value, std::initializer_list<Var> inputs,
                                      BackwardFn backward) {
  if (consumed_) throw StateError("tape already swept; record a new forward pass");
  Node node;
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                   [&](Var v) { return nodes_.at(v.id).requires_grad; });
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <class T>
const Tensor<T>& Tape<T>::value(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.param ? n.param->value : n.value;
}

template <class T>
Tensor<T>& Tape<T>::grad(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.empty() && value(v).size() != 0) n.grad = Tensor<T>(value(v).shape());
  return n.grad;
}

template <class T>
void Tape<T>::backward(Var root, const Tensor<T>& seed) {
  if (consumed_) throw StateError("backward: tape was already swept");
  if (nodes_.empty() || root.id >= nodes_.size()) {
    throw StateError("backward: no forward pass recorded for this root");
  }
  require_shape("backward", seed.shape(), value(root).shape());
  if (nodes_[root.id].requires_grad) grad(root) = seed;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) {
      n.backward(*this, n.grad);
    } else if (n.param && n.param->trainable) {
      T* dst = n.param->grad.ptr();
      const T* src = n.grad.ptr();
      for (std::size_t k = 0; k < n.grad.size(); ++k) dst[k] += src[k];
    }
    n.grad = Tensor<T>();
  }
  nodes_.clear();
  consumed_ = true;
}

template <class T>
void Tape<T>::backward(Var root) {
  if (root.id >= nodes_.size()) throw StateError("backward: no forward pass recorded");
  backward(root, Tensor<T>(value(root).shape(), T(1)));
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Tape<float>;
template class Tape<double>;

// ---------------------------------------------------------------------------
// Operations

namespace ops {

namespace {

template <class T, class F, class DF>
Var<T> unary(Tape<T>& tape, Var<T> x, F f, DF df) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return tape.record(std::move(out), {x}, [x, df](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    Tensor<T>& dx = t.grad(x);
    for (std::size_t i = 0; i < xv.size(); ++i) dx[i] += g[i] * df(xv[i]);
  });
}

template <class T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <class T>
Var<T> conv1x1(Tape<T>& tape, Var<T> x, Var<T> w, std::optional<Var<T>> bias,
               std::size_t stride) {
  Tensor<T> out = kernels::conv1x1(tape.value(x), tape.value(w),
                                   bias ? &tape.value(*bias) : nullptr, stride);
  auto fn = [x, w, bias, stride](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* dx = t.requires_grad(x) ? &t.grad(x) : nullptr;
    Tensor<T>* dw = t.requires_grad(w) ? &t.grad(w) : nullptr;
    Tensor<T>* db = (bias && t.requires_grad(*bias)) ? &t.grad(*bias) : nullptr;
    kernels::conv1x1_backward(t.value(x), t.value(w), g, stride, dx, dw, db);
  };
  if (bias) return tape.record(std::move(out), {x, w, *bias}, fn);
  return tape.record(std::move(out), {x, w}, fn);
}

template <class T>
Var<T> depthwise3x3(Tape<T>& tape, Var<T> x, Var<T> k, std::size_t stride) {
  Tensor<T> out = kernels::depthwise3x3(tape.value(x), tape.value(k), stride);
  return tape.record(std::move(out), {x, k}, [x, k, stride](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* dx = t.requires_grad(x) ? &t.grad(x) : nullptr;
    Tensor<T>* dk = t.requires_grad(k) ? &t.grad(k) : nullptr;
    kernels::depthwise3x3_backward(t.value(x), t.value(k), g, stride, dx, dk);
  });
}

template <class T>
Var<T> batch_norm(Tape<T>& tape, Var<T> x, Var<T> gamma, Var<T> beta,
                  Parameter<T>& moving_mean, Parameter<T>& moving_var, Mode mode, double eps,
                  double momentum) {
  if (mode == Mode::Infer) {
    Tensor<T> out = kernels::batch_norm_infer(tape.value(x), tape.value(gamma),
                                              tape.value(beta), moving_mean.value,
                                              moving_var.value, eps);
    // y = gamma * (x - mean) * inv_std + beta with frozen statistics.
    std::vector<T> inv_std(moving_var.value.size());
    for (std::size_t c = 0; c < inv_std.size(); ++c)
      inv_std[c] = T(1) / std::sqrt(moving_var.value[c] + T(eps));
    std::vector<T> mean(moving_mean.value.data().begin(), moving_mean.value.data().end());
    return tape.record(
        std::move(out), {x, gamma, beta},
        [x, gamma, beta, inv_std = std::move(inv_std), mean = std::move(mean)](
            Tape<T>& t, const Tensor<T>& g) {
          const Tensor<T>& xv = t.value(x);
          const Tensor<T>& gv = t.value(gamma);
          const std::size_t c = xv.shape().c;
          const std::size_t rows = xv.size() / c;
          Tensor<T>* dx = t.requires_grad(x) ? &t.grad(x) : nullptr;
          Tensor<T>* dg = t.requires_grad(gamma) ? &t.grad(gamma) : nullptr;
          Tensor<T>* db = t.requires_grad(beta) ? &t.grad(beta) : nullptr;
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t i = r * c + ch;
              if (dx) (*dx)[i] += g[i] * gv[ch] * inv_std[ch];
              if (dg) (*dg)[ch] += g[i] * (xv[i] - mean[ch]) * inv_std[ch];
              if (db) (*db)[ch] += g[i];
            }
        });
  }

  kernels::BatchNormSaved<T> saved;
  Tensor<T> out = kernels::batch_norm_train(tape.value(x), tape.value(gamma), tape.value(beta),
                                            eps, saved);
  const T m = static_cast<T>(momentum);
  for (std::size_t c = 0; c < saved.mean.size(); ++c) {
    moving_mean.value[c] = m * moving_mean.value[c] + (T(1) - m) * saved.mean[c];
    moving_var.value[c] = m * moving_var.value[c] + (T(1) - m) * saved.var[c];
  }
  return tape.record(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, saved = std::move(saved)](Tape<T>& t,
                                                                const Tensor<T>& g) {
                       Tensor<T>* dx = t.requires_grad(x) ? &t.grad(x) : nullptr;
                       Tensor<T>* dg = t.requires_grad(gamma) ? &t.grad(gamma) : nullptr;
                       Tensor<T>* db = t.requires_grad(beta) ? &t.grad(beta) : nullptr;
                       kernels::batch_norm_train_backward(g, t.value(gamma), saved, dx, dg,
                                                          db);
                     });
}

template <class T>
Var<T> relu(Tape<T>& tape, Var<T> x) {
  return unary(tape, x, kernels::relu<T>, kernels::relu_grad<T>);
}
template <class T>
Var<T> relu6(Tape<T>& tape, Var<T> x) {
  return unary(tape, x, kernels::relu6<T>, kernels::relu6_grad<T>);
}
template <class T>
Var<T> h_swish(Tape<T>& tape, Var<T> x) {
  return unary(tape, x, kernels::h_swish<T>, kernels::h_swish_grad<T>);
}
template <class T>
Var<T> hard_sigmoid(Tape<T>& tape, Var<T> x) {
  return unary(tape, x, kernels::hard_sigmoid<T>, kernels::hard_sigmoid_grad<T>);
}
template <class T>
Var<T> sigmoid(Tape<T>& tape, Var<T> x) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = kernels::sigmoid(xv[i]);
  Tensor<T> y = out;
  return tape.record(std::move(out), {x}, [x, y = std::move(y)](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& dx = t.grad(x);
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <class T>
Var<T> add(Tape<T>& tape, Var<T> a, Var<T> b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require_shape("add", bv.shape(), av.shape());
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) accumulate(t.grad(a), g);
    if (t.requires_grad(b)) accumulate(t.grad(b), g);
  });
}

template <class T>
Var<T> mul(Tape<T>& tape, Var<T> a, Var<T> b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require_shape("mul", bv.shape(), av.shape());
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor<T>& da = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      Tensor<T>& db = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(Tape<T>& tape, Var<T> x, Var<T> s) {
  const Tensor<T>& xv = tape.value(x);
  if (tape.value(s).size() != 1) {
    throw DimensionError("scale: factor must hold exactly one element, got " +
                         tape.value(s).shape().str());
  }
  const T k = tape.value(s)[0];
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = k * xv[i];
  return tape.record(std::move(out), {x, s}, [x, s](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    if (t.requires_grad(x)) {
      Tensor<T>& dx = t.grad(x);
      const T k = t.value(s)[0];
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += k * g[i];
    }
    if (t.requires_grad(s)) {
      T acc = T(0);
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      t.grad(s)[0] += acc;
    }
  });
}

template <class T>
Var<T> mul_channels(Tape<T>& tape, Var<T> x, Var<T> gate) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& gv = tape.value(gate);
  const Shape& s = xv.shape();
  require_shape("mul_channels", gv.shape(), Shape{s.n, 1, 1, s.c});
  const std::size_t p = s.positions();
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t c = 0; c < s.c; ++c) {
        const std::size_t k = (n * p + i) * s.c + c;
        out[k] = xv[k] * gv[n * s.c + c];
      }
  return tape.record(std::move(out), {x, gate}, [x, gate](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& gv = t.value(gate);
    const Shape& s = xv.shape();
    const std::size_t p = s.positions();
    Tensor<T>* dx = t.requires_grad(x) ? &t.grad(x) : nullptr;
    Tensor<T>* dg = t.requires_grad(gate) ? &t.grad(gate) : nullptr;
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t c = 0; c < s.c; ++c) {
          const std::size_t k = (n * p + i) * s.c + c;
          if (dx) (*dx)[k] += g[k] * gv[n * s.c + c];
          if (dg) (*dg)[n * s.c + c] += g[k] * xv[k];
        }
  });
}

template <class T>
Var<T> concat_channels(Tape<T>& tape, Var<T> a, Var<T> b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  const Shape& as = av.shape();
  const Shape& bs = bv.shape();
  require_dim("concat_channels", "n", bs.n, as.n);
  require_dim("concat_channels", "h", bs.h, as.h);
  require_dim("concat_channels", "w", bs.w, as.w);
  const std::size_t rows = as.n * as.h * as.w;
  const std::size_t ca = as.c;
  const std::size_t cb = bs.c;
  Tensor<T> out(Shape{as.n, as.h, as.w, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(av.ptr() + r * ca, av.ptr() + (r + 1) * ca, out.ptr() + r * (ca + cb));
    std::copy(bv.ptr() + r * cb, bv.ptr() + (r + 1) * cb, out.ptr() + r * (ca + cb) + ca);
  }
  return tape.record(std::move(out), {a, b},
                     [a, b, rows, ca, cb](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(a)) {
                         Tensor<T>& da = t.grad(a);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < ca; ++c)
                             da[r * ca + c] += g[r * (ca + cb) + c];
                       }
                       if (t.requires_grad(b)) {
                         Tensor<T>& db = t.grad(b);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < cb; ++c)
                             db[r * cb + c] += g[r * (ca + cb) + ca + c];
                       }
                     });
}

template <class T>
Var<T> softmax_rows(Tape<T>& tape, Var<T> s) {
  Tensor<T> out = kernels::softmax_rows(tape.value(s));
  // The backward rule reads this node's own output, which lands at index size().
  const std::size_t self = tape.size();
  return tape.record(std::move(out), {s}, [s, self](Tape<T>& t, const Tensor<T>& g) {
    kernels::softmax_rows_backward(t.value(Var<T>{self}), g, t.grad(s));
  });
}

template <class T>
Var<T> matmul_abt(Tape<T>& tape, Var<T> q, Var<T> k) {
  Tensor<T> out = kernels::matmul_abt(tape.value(q), tape.value(k));
  return tape.record(std::move(out), {q, k}, [q, k](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* dq = t.requires_grad(q) ? &t.grad(q) : nullptr;
    Tensor<T>* dk = t.requires_grad(k) ? &t.grad(k) : nullptr;
    kernels::matmul_abt_backward(t.value(q), t.value(k), g, dq, dk);
  });
}

template <class T>
Var<T> attention(Tape<T>& tape, Var<T> g, Var<T> f, Var<T> h) {
  Tensor<T> out = kernels::attention(tape.value(g), tape.value(f), tape.value(h));
  return tape.record(std::move(out), {g, f, h}, [g, f, h](Tape<T>& t, const Tensor<T>& go) {
    Tensor<T>* dg = t.requires_grad(g) ? &t.grad(g) : nullptr;
    Tensor<T>* df = t.requires_grad(f) ? &t.grad(f) : nullptr;
    Tensor<T>* dh = t.requires_grad(h) ? &t.grad(h) : nullptr;
    kernels::attention_backward(t.value(g), t.value(f), t.value(h), go, dg, df, dh);
  });
}

template <class T>
Var<T> batchdot(Tape<T>& tape, Var<T> attn, Var<T> v) {
  Tensor<T> out = kernels::batchdot(tape.value(attn), tape.value(v));
  return tape.record(std::move(out), {attn, v}, [attn, v](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* da = t.requires_grad(attn) ? &t.grad(attn) : nullptr;
    Tensor<T>* dv = t.requires_grad(v) ? &t.grad(v) : nullptr;
    kernels::batchdot_backward(t.value(attn), t.value(v), g, da, dv);
  });
}

template <class T>
Var<T> global_avg_pool(Tape<T>& tape, Var<T> x) {
  Tensor<T> out = kernels::global_avg_pool(tape.value(x));
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    kernels::global_avg_pool_backward(t.value(x).shape(), g, t.grad(x));
  });
}

template <class T>
Var<T> dense(Tape<T>& tape, Var<T> x, Var<T> w, Var<T> b) {
  if (tape.value(x).shape().h != 1 || tape.value(x).shape().w != 1) {
    throw DimensionError("dense: input must be (n,1,1,c), got " + tape.value(x).shape().str());
  }
  return conv1x1(tape, x, w, std::optional<Var<T>>(b), 1);
}

template <class T>
Var<T> weighted_sum(Tape<T>& tape, Var<T> x, const Tensor<T>& weights) {
  const Tensor<T>& xv = tape.value(x);
  require_shape("weighted_sum", weights.shape(), xv.shape());
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(xv[i]) * weights[i];
  Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(acc));
  return tape.record(std::move(out), {x}, [x, weights](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& dx = t.grad(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[0] * weights[i];
  });
}

template <class T>
Var<T> bce_with_logits(Tape<T>& tape, Var<T> logits, const std::vector<int>& labels) {
  const Tensor<T>& z = tape.value(logits);
  if (z.size() != labels.size()) {
    throw DimensionError("bce_with_logits: " + std::to_string(z.size()) + " logits for " +
                         std::to_string(labels.size()) + " labels");
  }
  std::vector<double> zd(z.data().begin(), z.data().end());
  const double loss = bce_loss(zd, labels);
  return tape.record(Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(loss)), {logits},
                     [logits, labels](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& z = t.value(logits);
                       Tensor<T>& dz = t.grad(logits);
                       const T inv = T(1) / static_cast<T>(labels.size());
                       for (std::size_t i = 0; i < z.size(); ++i) {
                         const T p = kernels::sigmoid(z[i]);
                         dz[i] += g[0] * (p - static_cast<T>(labels[i])) * inv;
                       }
                     });
}

#define FDFT_INSTANTIATE(T)                                                                   \
  template Var<T> conv1x1(Tape<T>&, Var<T>, Var<T>, std::optional<Var<T>>, std::size_t);     \
  template Var<T> depthwise3x3(Tape<T>&, Var<T>, Var<T>, std::size_t);                       \
  template Var<T> batch_norm(Tape<T>&, Var<T>, Var<T>, Var<T>, Parameter<T>&, Parameter<T>&, \
                             Mode, double, double);                                          \
  template Var<T> relu(Tape<T>&, Var<T>);                                                    \
  template Var<T> relu6(Tape<T>&, Var<T>);                                                   \
  template Var<T> h_swish(Tape<T>&, Var<T>);                                                 \
  template Var<T> hard_sigmoid(Tape<T>&, Var<T>);                                            \
  template Var<T> sigmoid(Tape<T>&, Var<T>);                                                 \
  template Var<T> add(Tape<T>&, Var<T>, Var<T>);                                             \
  template Var<T> mul(Tape<T>&, Var<T>, Var<T>);                                             \
  template Var<T> scale(Tape<T>&, Var<T>, Var<T>);                                           \
  template Var<T> mul_channels(Tape<T>&, Var<T>, Var<T>);                                    \
  template Var<T> concat_channels(Tape<T>&, Var<T>, Var<T>);                                 \
  template Var<T> softmax_rows(Tape<T>&, Var<T>);                                            \
  template Var<T> matmul_abt(Tape<T>&, Var<T>, Var<T>);                                      \
  template Var<T> batchdot(Tape<T>&, Var<T>, Var<T>);                                        \
  template Var<T> attention(Tape<T>&, Var<T>, Var<T>, Var<T>);                              \
  template Var<T> global_avg_pool(Tape<T>&, Var<T>);                                         \
  template Var<T> dense(Tape<T>&, Var<T>, Var<T>, Var<T>);                                   \
  template Var<T> weighted_sum(Tape<T>&, Var<T>, const Tensor<T>&);                          \
  template Var<T> bce_with_logits(Tape<T>&, Var<T>, const std::vector<int>&);

FDFT_INSTANTIATE(float)
FDFT_INSTANTIATE(double)
#undef FDFT_INSTANTIATE

}  // namespace ops

double bce_loss(std::span<const double> logits, std::span<const int> labels) {
  if (logits.empty()) return 0.0;
  constexpr double lo = 1e-7;
  constexpr double hi = 1.0 - 1e-7;
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = std::clamp(kernels::sigmoid(logits[i]), lo, hi);
    acc -= labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return acc / static_cast<double>(logits.size());
}

// ---------------------------------------------------------------------------

GradCheckResult finite_diff_check(ParamStore<double>& params,
                                  const std::function<Tape<double>::Var(Tape<double>&)>& build,
                                  const GradCheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  Tensor<double> projection;
  auto output_at = [&]() {
    Tape<double> tape;
    return Tensor<double>(tape.value(build(tape)));
  };

  // Analytic pass; the projection is drawn once the output shape is known.
  params.zero_grad();
  {
    Tape<double> tape;
    auto out = build(tape);
    projection = Tensor<double>(tape.value(out).shape());
    for (std::size_t i = 0; i < projection.size(); ++i) projection[i] = unit(rng);
    auto loss = ops::weighted_sum(tape, out, projection);
    tape.backward(loss);
  }

  struct Coord {
    Parameter<double>* p;
    std::size_t i;
  };
  std::vector<Coord> coords;
  for (auto& p : params) {
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.numel(); ++i) coords.push_back({&p, i});
  }
  if (options.max_coords != 0 && coords.size() > options.max_coords) {
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coords);
  }

  GradCheckResult result;
  for (const Coord& c : coords) {
    double& v = c.p->value[c.i];
    const double orig = v;
    v = orig + options.eps;
    const Tensor<double> up = output_at();
    v = orig - options.eps;
    const Tensor<double> down = output_at();
    v = orig;
    // Differencing elementwise before projecting keeps large unaffected
    // terms (residual paths) from swamping the change in the loss.
    double delta = 0.0;
    for (std::size_t i = 0; i < up.size(); ++i) delta += (up[i] - down[i]) * projection[i];
    const double numeric = delta / (2.0 * options.eps);
    const double analytic = c.p->grad[c.i];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
    const double err = std::abs(numeric - analytic) / denom;
    ++result.coords_checked;
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_coord = c.p->name + "[" + std::to_string(c.i) + "]";
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace fdft
