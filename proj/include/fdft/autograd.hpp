#pragma once

// Tape-based reverse-mode differentiation over the kernels in kernels.hpp.
//
// A Tape records one forward pass. Each recorded node owns its value and a
// backward closure that accumulates into the gradients of its inputs. Nodes
// whose inputs carry no trainable parameter drop their closure at record
// time, so frozen sub-graphs cost nothing on the way back.

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fdft/kernels.hpp"
#include "fdft/tensor.hpp"

namespace fdft {

enum class Mode { Train, Infer };

enum class ParamKind {
  Weight,  // learned by the optimizer when trainable
  State,   // running statistics; never trainable
};

template <class T>
struct Parameter {
  std::string name;
  std::vector<std::size_t> dims;  // logical shape used for serialization
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
  ParamKind kind = ParamKind::Weight;
  std::size_t fan_in = 0;  // > 0 marks a randomly initialized kernel

  std::size_t numel() const noexcept { return value.size(); }
};

/// Maps logical dims (rank 1..4) onto a right-aligned rank-4 shape.
Shape shape_from_dims(const std::vector<std::size_t>& dims);

/// Owns every Parameter of a network under unique hierarchical names.
/// Element addresses are stable for the lifetime of the store.
template <class T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  /// Registers a parameter; duplicate names raise ConfigError.
  Parameter<T>& add(std::string name, std::vector<std::size_t> dims, T fill = T(0),
                    ParamKind kind = ParamKind::Weight);

  Parameter<T>* find(const std::string& name);
  const Parameter<T>* find(const std::string& name) const;
  Parameter<T>& at(const std::string& name);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const noexcept { return params_.size(); }

  void zero_grad();
  /// Sets `trainable` on every Weight whose name starts with `prefix`.
  void set_trainable(const std::string& prefix, bool trainable);

  std::size_t total_numel() const;
  std::size_t trainable_numel() const;
  std::size_t numel_with_prefix(const std::string& prefix) const;

 private:
  std::deque<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <class T>
class Tape {
 public:
  struct Var {
    std::size_t id = 0;
  };
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding a value that needs no gradient (inputs, labels).
  Var constant(Tensor<T> value);
  /// Leaf bound to a parameter. Gradients flow back into it only when trainable.
  Var param(Parameter<T>& p);

  /// Records an op output. `backward` is kept only if some input needs a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward);

  const Tensor<T>& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor<T>& grad(Var v);

  /// Runs the backward sweep from `root` seeded with `seed` (same shape as the
  /// root value), adds leaf gradients into trainable parameters, then releases
  /// every recorded buffer. A tape can be swept once.
  void backward(Var root, const Tensor<T>& seed);
  /// Seeds with ones; intended for scalar losses.
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable operations.

namespace ops {

template <class T>
using Var = typename Tape<T>::Var;

template <class T>
Var<T> conv1x1(Tape<T>& tape, Var<T> x, Var<T> w, std::optional<Var<T>> bias,
               std::size_t stride = 1);
template <class T>
Var<T> depthwise3x3(Tape<T>& tape, Var<T> x, Var<T> k, std::size_t stride);

/// Batch normalization. In Train mode the batch statistics are used and the
/// moving statistics are updated in place with `momentum`.
template <class T>
Var<T> batch_norm(Tape<T>& tape, Var<T> x, Var<T> gamma, Var<T> beta,
                  Parameter<T>& moving_mean, Parameter<T>& moving_var, Mode mode, double eps,
                  double momentum);

template <class T>
Var<T> relu(Tape<T>& tape, Var<T> x);
template <class T>
Var<T> relu6(Tape<T>& tape, Var<T> x);
template <class T>
Var<T> h_swish(Tape<T>& tape, Var<T> x);
template <class T>
Var<T> hard_sigmoid(Tape<T>& tape, Var<T> x);
template <class T>
Var<T> sigmoid(Tape<T>& tape, Var<T> x);

template <class T>
Var<T> add(Tape<T>& tape, Var<T> a, Var<T> b);
/// Elementwise product of equal shapes.
template <class T>
Var<T> mul(Tape<T>& tape, Var<T> a, Var<T> b);
/// s * x where s is a (1,1,1,1) scalar.
template <class T>
Var<T> scale(Tape<T>& tape, Var<T> x, Var<T> s);
/// x (n,h,w,c) times a per-sample channel gate (n,1,1,c).
template <class T>
Var<T> mul_channels(Tape<T>& tape, Var<T> x, Var<T> gate);
template <class T>
Var<T> concat_channels(Tape<T>& tape, Var<T> a, Var<T> b);

template <class T>
Var<T> softmax_rows(Tape<T>& tape, Var<T> s);
template <class T>
Var<T> matmul_abt(Tape<T>& tape, Var<T> q, Var<T> k);
template <class T>
Var<T> batchdot(Tape<T>& tape, Var<T> attn, Var<T> v);
/// batchdot(softmax_rows(matmul_abt(g, f)), h) as one node that keeps no
/// attention map.
template <class T>
Var<T> attention(Tape<T>& tape, Var<T> g, Var<T> f, Var<T> h);
template <class T>
Var<T> global_avg_pool(Tape<T>& tape, Var<T> x);
template <class T>
Var<T> dense(Tape<T>& tape, Var<T> x, Var<T> w, Var<T> b);

/// Scalar sum(x * weights); weights has the shape of x.
template <class T>
Var<T> weighted_sum(Tape<T>& tape, Var<T> x, const Tensor<T>& weights);

/// Mean binary cross-entropy of sigmoid(logits) against 0/1 labels, with
/// probabilities clamped to [1e-7, 1 - 1e-7]. The gradient is (p - y) / n.
template <class T>
Var<T> bce_with_logits(Tape<T>& tape, Var<T> logits, const std::vector<int>& labels);

}  // namespace ops

/// Forward value of the clamped binary cross-entropy.
double bce_loss(std::span<const double> logits, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Finite-difference verification (64-bit only).

struct GradCheckOptions {
  double eps = 1e-5;
  /// 0 checks every trainable coordinate, otherwise a seeded random sample.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_coord;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares analytic gradients of sum(build(tape) * R), with R a fixed random
/// projection, against central differences over trainable parameters.
/// Relative error uses the denominator max(|a|, |b|, 1e-8).
GradCheckResult finite_diff_check(
    ParamStore<double>& params,
    const std::function<Tape<double>::Var(Tape<double>&)>& build,
    const GradCheckOptions& options = {});

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace fdft
