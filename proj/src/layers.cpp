#include "fdft/layers.hpp"

#include <cmath>
#include <numeric>

namespace fdft {

template <class T>
Conv1x1Layer<T> Conv1x1Layer<T>::create(ParamStore<T>& store, const std::string& prefix,
                                        std::size_t c_in, std::size_t c_out, bool bias,
                                        std::size_t stride) {
  kernels::require_stride("conv1x1", stride);
  Conv1x1Layer layer;
  layer.w = &store.add(prefix + ".w", {c_in, c_out});
  layer.w->fan_in = c_in;
  if (bias) layer.b = &store.add(prefix + ".b", {c_out});
  layer.stride = stride;
  return layer;
}

template <class T>
typename Tape<T>::Var Conv1x1Layer<T>::forward(Tape<T>& tape, typename Tape<T>::Var x) const {
  std::optional<typename Tape<T>::Var> bias;
  if (b) bias = tape.param(*b);
  return ops::conv1x1(tape, x, tape.param(*w), bias, stride);
}

template <class T>
SeparableConvLayer<T> SeparableConvLayer<T>::create(ParamStore<T>& store,
                                                    const std::string& prefix, std::size_t c_in,
                                                    std::size_t c_out, std::size_t stride) {
  kernels::require_stride("separable_conv3x3", stride);
  SeparableConvLayer layer;
  layer.dw = &store.add(prefix + ".dw", {3, 3, c_in});
  layer.dw->fan_in = 9;
  layer.pw = &store.add(prefix + ".pw", {c_in, c_out});
  layer.pw->fan_in = c_in;
  layer.stride = stride;
  return layer;
}

template <class T>
typename Tape<T>::Var SeparableConvLayer<T>::forward(Tape<T>& tape,
                                                     typename Tape<T>::Var x) const {
  auto d = ops::depthwise3x3(tape, x, tape.param(*dw), stride);
  return ops::conv1x1(tape, d, tape.param(*pw), std::nullopt, 1);
}

template <class T>
DepthwiseLayer<T> DepthwiseLayer<T>::create(ParamStore<T>& store, const std::string& prefix,
                                            std::size_t c, std::size_t stride) {
  kernels::require_stride("depthwise3x3", stride);
  DepthwiseLayer layer;
  layer.k = &store.add(prefix + ".w", {3, 3, c});
  layer.k->fan_in = 9;
  layer.stride = stride;
  return layer;
}

template <class T>
typename Tape<T>::Var DepthwiseLayer<T>::forward(Tape<T>& tape, typename Tape<T>::Var x) const {
  return ops::depthwise3x3(tape, x, tape.param(*k), stride);
}

template <class T>
BatchNormLayer<T> BatchNormLayer<T>::create(ParamStore<T>& store, const std::string& prefix,
                                            std::size_t c, BatchNormConfig cfg) {
  BatchNormLayer layer;
  layer.gamma = &store.add(prefix + ".gamma", {c}, T(1));
  layer.beta = &store.add(prefix + ".beta", {c}, T(0));
  layer.moving_mean = &store.add(prefix + ".moving_mean", {c}, T(0), ParamKind::State);
  layer.moving_var = &store.add(prefix + ".moving_var", {c}, T(1), ParamKind::State);
  layer.cfg = cfg;
  return layer;
}

template <class T>
typename Tape<T>::Var BatchNormLayer<T>::forward(Tape<T>& tape, typename Tape<T>::Var x,
                                                 Mode mode) const {
  const Mode effective = gamma->trainable ? mode : Mode::Infer;
  return ops::batch_norm(tape, x, tape.param(*gamma), tape.param(*beta), *moving_mean,
                         *moving_var, effective, cfg.eps, cfg.momentum);
}

template <class T>
DenseLayer<T> DenseLayer<T>::create(ParamStore<T>& store, const std::string& prefix,
                                    std::size_t c_in, std::size_t c_out) {
  DenseLayer layer;
  layer.w = &store.add(prefix + ".w", {c_in, c_out});
  layer.w->fan_in = c_in;
  layer.b = &store.add(prefix + ".b", {c_out});
  return layer;
}

template <class T>
typename Tape<T>::Var DenseLayer<T>::forward(Tape<T>& tape, typename Tape<T>::Var x) const {
  return ops::dense(tape, x, tape.param(*w), tape.param(*b));
}

template <class T>
void he_uniform_init(ParamStore<T>& store, std::mt19937_64& rng,
                     const std::vector<std::string>& skip) {
  for (auto& p : store) {
    if (p.kind != ParamKind::Weight || p.fan_in == 0) continue;
    bool skipped = false;
    for (const auto& s : skip) skipped = skipped || p.name.starts_with(s);
    if (skipped) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(p.fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t i = 0; i < p.numel(); ++i) p.value[i] = static_cast<T>(dist(rng));
  }
}

std::size_t ParamBreakdown::total() const {
  return std::accumulate(rows.begin(), rows.end(), std::size_t{0},
                         [](std::size_t acc, const ParamRow& r) { return acc + r.count; });
}

template struct Conv1x1Layer<float>;
template struct Conv1x1Layer<double>;
template struct SeparableConvLayer<float>;
template struct SeparableConvLayer<double>;
template struct DepthwiseLayer<float>;
template struct DepthwiseLayer<double>;
template struct BatchNormLayer<float>;
template struct BatchNormLayer<double>;
template struct DenseLayer<float>;
template struct DenseLayer<double>;
template void he_uniform_init(ParamStore<float>&, std::mt19937_64&,
                              const std::vector<std::string>&);
template void he_uniform_init(ParamStore<double>&, std::mt19937_64&,
                              const std::vector<std::string>&);

}  // namespace fdft
