#pragma once

// Fine-Tune Transformer: downsampling separable convolutions interleaved with
// single-head dot-product self-attention, ending in a pooled feature vector.

#include <string>
#include <vector>

#include "fdft/layers.hpp"

namespace fdft {

struct FTTConfig {
  std::size_t m = 3;  // stage count
  std::size_t b = 8;  // bottleneck ratio of the query/key projections
  std::vector<std::size_t> stage_widths{32, 64, 128};
  std::size_t out_width = 576;
  std::size_t in_channels = 3;

  /// m stages with widths 32, 64, 128, ...
  static FTTConfig with_stages(std::size_t m);

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

/// y = gamma * softmax(g f^T) h + x, with f, g, h 1x1 convolutions with bias.
template <class T>
struct SelfAttention {
  Conv1x1Layer<T> f;
  Conv1x1Layer<T> g;
  Conv1x1Layer<T> h;
  Parameter<T>* gamma = nullptr;  // starts at exactly 0

  static SelfAttention create(ParamStore<T>& store, const std::string& prefix, std::size_t c,
                              std::size_t b);
  /// When `attention` is non-null it receives the softmax map node.
  typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var x,
                                typename Tape<T>::Var* attention = nullptr) const;

  static std::size_t count(std::size_t c, std::size_t b) {
    const std::size_t k = c / b;
    return 2 * Conv1x1Layer<T>::count(c, k, true) + Conv1x1Layer<T>::count(c, c, true) + 1;
  }
};

/// Tensors produced by the attention module, for inspection.
template <class T>
struct AttentionTrace {
  Tensor<T> attention;  // (n, h, w, h*w); row j sums to one over key positions i
  Tensor<T> output;
};

template <class T>
class FTT {
 public:
  struct Stage {
    SeparableConvLayer<T> conv;  // stride 2
    BatchNormLayer<T> bn;
    SelfAttention<T> attn;
  };

  static FTT create(ParamStore<T>& store, const std::string& prefix, const FTTConfig& cfg,
                    BatchNormConfig bn);

  /// (n, H, W, 3) -> (n, 1, 1, out_width). When `trace` is non-null, the shape
  /// after every stage and after the final projection is appended to it.
  typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var img, Mode mode,
                                std::vector<Shape>* trace = nullptr) const;

  const FTTConfig& config() const noexcept { return cfg_; }
  const std::vector<Stage>& stages() const noexcept { return stages_; }

 private:
  FTTConfig cfg_;
  std::vector<Stage> stages_;
  Conv1x1Layer<T> project_;
  BatchNormLayer<T> project_bn_;
};

/// Per-layer parameter counts of the FTT stack, in execution order.
ParamBreakdown ftt_param_count(const FTTConfig& cfg, std::size_t input_size = 64);

/// Runs one self-attention module outside of training.
template <class T>
AttentionTrace<T> self_attention_forward(const Tensor<T>& x, const SelfAttention<T>& p);

extern template struct SelfAttention<float>;
extern template struct SelfAttention<double>;
extern template class FTT<float>;
extern template class FTT<double>;

}  // namespace fdft
