#include "fdft/mbblock.hpp"

namespace fdft {

void MBBlockConfig::validate() const {
  if (c_in == 0 || expand == 0 || se_reduce == 0 || out == 0) {
    throw ConfigError("MBblockV3: widths must be positive");
  }
  kernels::require_stride("MBblockV3", stride);
  if (residual == Residual::Always && !has_residual()) {
    throw ConfigError("MBblockV3: residual requested but input (" + std::to_string(c_in) +
                      " ch, stride " + std::to_string(stride) + ") and output (" +
                      std::to_string(out) + " ch) shapes differ");
  }
}

template <class T>
SEBlock<T> SEBlock<T>::create(ParamStore<T>& store, const std::string& prefix, std::size_t c,
                              std::size_t reduced) {
  return SEBlock{Conv1x1Layer<T>::create(store, prefix + ".reduce", c, reduced, false),
                 Conv1x1Layer<T>::create(store, prefix + ".expand", reduced, c, false)};
}

template <class T>
typename Tape<T>::Var SEBlock<T>::forward(Tape<T>& tape, typename Tape<T>::Var u,
                                          typename Tape<T>::Var* gate) const {
  require_dim("se_block", "c", tape.value(u).shape().c, reduce.w->dims[0]);
  auto s = ops::global_avg_pool(tape, u);
  s = ops::relu(tape, reduce.forward(tape, s));
  s = ops::hard_sigmoid(tape, expand.forward(tape, s));
  if (gate) *gate = s;
  return ops::mul_channels(tape, u, s);
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> se_block_forward(const Tensor<T>& u, const SEBlock<T>& p) {
  Tape<T> tape;
  typename Tape<T>::Var gate;
  auto y = p.forward(tape, tape.constant(u), &gate);
  return {tape.value(y), tape.value(gate)};
}

template <class T>
MBBlockV3<T> MBBlockV3<T>::create(ParamStore<T>& store, const std::string& prefix,
                                  const MBBlockConfig& cfg, BatchNormConfig bn) {
  cfg.validate();
  MBBlockV3 b;
  b.cfg_ = cfg;
  b.expand_ = Conv1x1Layer<T>::create(store, prefix + ".expand", cfg.c_in, cfg.expand, false);
  b.bn1_ = BatchNormLayer<T>::create(store, prefix + ".bn1", cfg.expand, bn);
  b.dw_ = DepthwiseLayer<T>::create(store, prefix + ".dw", cfg.expand, cfg.stride);
  b.bn2_ = BatchNormLayer<T>::create(store, prefix + ".bn2", cfg.expand, bn);
  b.se_ = SEBlock<T>::create(store, prefix + ".se", cfg.expand, cfg.se_reduce);
  b.project_ = Conv1x1Layer<T>::create(store, prefix + ".project", cfg.expand, cfg.out, false);
  b.bn3_ = BatchNormLayer<T>::create(store, prefix + ".bn3", cfg.out, bn);
  return b;
}

template <class T>
typename Tape<T>::Var MBBlockV3<T>::forward(Tape<T>& tape, typename Tape<T>::Var x,
                                            Mode mode) const {
  require_dim("mbblockv3", "c", tape.value(x).shape().c, cfg_.c_in);
  auto y = expand_.forward(tape, x);
  y = ops::h_swish(tape, bn1_.forward(tape, y, mode));
  y = bn2_.forward(tape, dw_.forward(tape, y), mode);
  y = ops::h_swish(tape, se_.forward(tape, y));
  // Linear bottleneck: no activation after the projection.
  y = bn3_.forward(tape, project_.forward(tape, y), mode);
  if (cfg_.has_residual()) y = ops::add(tape, y, x);
  return y;
}

ParamBreakdown mbblock_param_count(const MBBlockConfig& cfg, std::size_t spatial) {
  cfg.validate();
  const auto d = [](std::size_t h, std::size_t c) {
    return std::to_string(h) + "x" + std::to_string(h) + "x" + std::to_string(c);
  };
  const std::size_t e = cfg.expand;
  const std::size_t r = cfg.se_reduce;
  const std::size_t s = spatial;
  const std::size_t so = same_out(spatial, cfg.stride);
  ParamBreakdown out;
  out.rows = {
      {d(s, cfg.c_in), "1x1 Conv", Conv1x1Layer<float>::count(cfg.c_in, e, false), e, "1"},
      {d(s, e), "BN", BatchNormLayer<float>::count(e), e, "-"},
      {d(s, e), "h-swish", 0, e, "-"},
      {d(s, e), "3x3 DConv", DepthwiseLayer<float>::count(e), e, std::to_string(cfg.stride)},
      {d(so, e), "BN", BatchNormLayer<float>::count(e), e, "-"},
      {d(so, e), "GAP", 0, e, "-"},
      {d(1, e), "1x1 Conv", Conv1x1Layer<float>::count(e, r, false), r, "1"},
      {d(1, r), "ReLU", 0, r, "-"},
      {d(1, r), "1x1 Conv", Conv1x1Layer<float>::count(r, e, false), e, "1"},
      {d(1, e), "hard-sigmoid", 0, e, "-"},
      {d(1, e), "Multiply", 0, e, "-"},
      {d(so, e), "h-swish", 0, e, "-"},
      {d(so, e), "1x1 Conv", Conv1x1Layer<float>::count(e, cfg.out, false), cfg.out, "1"},
      {d(so, cfg.out), "Linear", 0, cfg.out, "-"},
      {d(so, cfg.out), "BN", BatchNormLayer<float>::count(cfg.out), cfg.out, "-"},
  };
  if (cfg.has_residual()) out.rows.push_back({d(so, cfg.out), "Add", 0, cfg.out, "-"});
  return out;
}

template struct SEBlock<float>;
template struct SEBlock<double>;
template class MBBlockV3<float>;
template class MBBlockV3<double>;
template std::pair<Tensor<float>, Tensor<float>> se_block_forward(const Tensor<float>&,
                                                                  const SEBlock<float>&);
template std::pair<Tensor<double>, Tensor<double>> se_block_forward(const Tensor<double>&,
                                                                    const SEBlock<double>&);

}  // namespace fdft
