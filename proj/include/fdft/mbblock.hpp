#pragma once

// MobileNet-block-V3: expand -> BN -> h-swish -> depthwise 3x3 -> BN ->
// squeeze-and-excitation -> h-swish -> linear projection -> BN (+ residual).

#include <string>

#include "fdft/layers.hpp"

namespace fdft {

enum class Residual {
  Auto,    // add the input back whenever stride is 1 and widths match
  Always,  // as Auto, but a mismatch is a configuration error
  Never,
};

struct MBBlockConfig {
  std::size_t c_in = 128;
  std::size_t expand = 576;
  std::size_t se_reduce = 144;
  std::size_t out = 128;
  std::size_t stride = 1;
  Residual residual = Residual::Auto;

  bool has_residual() const noexcept {
    return residual != Residual::Never && stride == 1 && c_in == out;
  }
  void validate() const;
};

/// Channel gate s = hard_sigmoid(W_expand relu(W_reduce GAP(u))); output u * s.
template <class T>
struct SEBlock {
  Conv1x1Layer<T> reduce;
  Conv1x1Layer<T> expand;

  static SEBlock create(ParamStore<T>& store, const std::string& prefix, std::size_t c,
                        std::size_t reduced);
  /// When `gate` is non-null it receives the (n,1,1,c) gate node.
  typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var u,
                                typename Tape<T>::Var* gate = nullptr) const;
};

template <class T>
class MBBlockV3 {
 public:
  static MBBlockV3 create(ParamStore<T>& store, const std::string& prefix,
                          const MBBlockConfig& cfg, BatchNormConfig bn);

  typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var x, Mode mode) const;

  const MBBlockConfig& config() const noexcept { return cfg_; }
  const SEBlock<T>& se() const noexcept { return se_; }

 private:
  MBBlockConfig cfg_;
  Conv1x1Layer<T> expand_;
  BatchNormLayer<T> bn1_;
  DepthwiseLayer<T> dw_;
  BatchNormLayer<T> bn2_;
  SEBlock<T> se_;
  Conv1x1Layer<T> project_;
  BatchNormLayer<T> bn3_;
};

/// Per-layer parameter counts of one block, in execution order.
ParamBreakdown mbblock_param_count(const MBBlockConfig& cfg, std::size_t spatial = 8);

/// Runs a squeeze-and-excitation block outside of training; returns (output, gate).
template <class T>
std::pair<Tensor<T>, Tensor<T>> se_block_forward(const Tensor<T>& u, const SEBlock<T>& p);

extern template struct SEBlock<float>;
extern template struct SEBlock<double>;
extern template class MBBlockV3<float>;
extern template class MBBlockV3<double>;

}  // namespace fdft
