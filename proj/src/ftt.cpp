#include "fdft/ftt.hpp"

namespace fdft {

namespace {

std::string dims3(std::size_t h, std::size_t w, std::size_t c) {
  return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
}

}  // namespace

FTTConfig FTTConfig::with_stages(std::size_t m) {
  FTTConfig cfg;
  cfg.m = m;
  cfg.stage_widths.clear();
  for (std::size_t i = 0; i < m; ++i) cfg.stage_widths.push_back(std::size_t{32} << i);
  return cfg;
}

void FTTConfig::validate() const {
  if (m < 1) throw ConfigError("FTT: stage count m must be >= 1");
  if (stage_widths.size() != m) {
    throw ConfigError("FTT: m = " + std::to_string(m) + " but " +
                      std::to_string(stage_widths.size()) + " stage widths given");
  }
  if (b < 1) throw ConfigError("FTT: bottleneck ratio b must be >= 1");
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t c = stage_widths[i];
    if (c == 0 || c % b != 0) {
      throw ConfigError("FTT: stage width " + std::to_string(c) +
                        " is not divisible by the bottleneck ratio " + std::to_string(b));
    }
    if (i > 0 && c != 2 * stage_widths[i - 1]) {
      throw ConfigError("FTT: stage widths must double from stage to stage");
    }
  }
  if (out_width == 0 || in_channels == 0) throw ConfigError("FTT: widths must be positive");
}

template <class T>
SelfAttention<T> SelfAttention<T>::create(ParamStore<T>& store, const std::string& prefix,
                                          std::size_t c, std::size_t b) {
  if (b == 0 || c % b != 0) {
    throw ConfigError("self_attention: channels " + std::to_string(c) +
                      " not divisible by bottleneck ratio " + std::to_string(b));
  }
  SelfAttention a;
  a.f = Conv1x1Layer<T>::create(store, prefix + ".f", c, c / b, true);
  a.g = Conv1x1Layer<T>::create(store, prefix + ".g", c, c / b, true);
  a.h = Conv1x1Layer<T>::create(store, prefix + ".h", c, c, true);
  a.gamma = &store.add(prefix + ".gamma", {1}, T(0));
  return a;
}

template <class T>
typename Tape<T>::Var SelfAttention<T>::forward(Tape<T>& tape, typename Tape<T>::Var x,
                                                typename Tape<T>::Var* attention) const {
  // The key bias adds g(x_j) . b_f to a whole row of energies, which the
  // softmax cancels exactly, so it is left out of the computation.
  auto fx = ops::conv1x1(tape, x, tape.param(*f.w), std::nullopt, 1);
  auto gx = g.forward(tape, x);
  auto hx = h.forward(tape, x);
  // energy[j, i] = g(x_j) . f(x_i); normalized over the key positions i.
  typename Tape<T>::Var o;
  if (attention) {
    *attention = ops::softmax_rows(tape, ops::matmul_abt(tape, gx, fx));
    o = ops::batchdot(tape, *attention, hx);
  } else {
    o = ops::attention(tape, gx, fx, hx);
  }
  return ops::add(tape, ops::scale(tape, o, tape.param(*gamma)), x);
}

template <class T>
AttentionTrace<T> self_attention_forward(const Tensor<T>& x, const SelfAttention<T>& p) {
  Tape<T> tape;
  typename Tape<T>::Var beta;
  auto y = p.forward(tape, tape.constant(x), &beta);
  return AttentionTrace<T>{tape.value(beta), tape.value(y)};
}

template <class T>
FTT<T> FTT<T>::create(ParamStore<T>& store, const std::string& prefix, const FTTConfig& cfg,
                      BatchNormConfig bn) {
  cfg.validate();
  FTT ftt;
  ftt.cfg_ = cfg;
  std::size_t c_in = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.m; ++i) {
    const std::string sp = prefix + ".stage" + std::to_string(i + 1);
    const std::size_t c = cfg.stage_widths[i];
    Stage s{SeparableConvLayer<T>::create(store, sp + ".conv", c_in, c, 2),
            BatchNormLayer<T>::create(store, sp + ".bn", c, bn),
            SelfAttention<T>::create(store, sp + ".attn", c, cfg.b)};
    ftt.stages_.push_back(s);
    c_in = c;
  }
  ftt.project_ = Conv1x1Layer<T>::create(store, prefix + ".project", c_in, cfg.out_width, false);
  ftt.project_bn_ = BatchNormLayer<T>::create(store, prefix + ".project_bn", cfg.out_width, bn);
  return ftt;
}

template <class T>
typename Tape<T>::Var FTT<T>::forward(Tape<T>& tape, typename Tape<T>::Var img, Mode mode,
                                      std::vector<Shape>* trace) const {
  require_dim("ftt_forward", "c", tape.value(img).shape().c, cfg_.in_channels);
  auto x = img;
  for (const Stage& s : stages_) {
    x = s.conv.forward(tape, x);
    x = s.bn.forward(tape, x, mode);
    x = ops::relu(tape, x);
    x = s.attn.forward(tape, x);
    if (trace) trace->push_back(tape.value(x).shape());
  }
  x = project_.forward(tape, x);
  x = project_bn_.forward(tape, x, mode);
  x = ops::relu(tape, x);
  if (trace) trace->push_back(tape.value(x).shape());
  x = ops::global_avg_pool(tape, x);
  if (trace) trace->push_back(tape.value(x).shape());
  return x;
}

ParamBreakdown ftt_param_count(const FTTConfig& cfg, std::size_t input_size) {
  cfg.validate();
  ParamBreakdown out;
  std::size_t hw = input_size;
  std::size_t c_in = cfg.in_channels;
  const char* ordinal[] = {"1st", "2nd", "3rd"};
  for (std::size_t i = 0; i < cfg.m; ++i) {
    const std::size_t c = cfg.stage_widths[i];
    out.rows.push_back({dims3(hw, hw, c_in), "3x3 DConv",
                        SeparableConvLayer<float>::count(c_in, c), c, "2"});
    hw = same_out(hw, 2);
    out.rows.push_back({dims3(hw, hw, c), "BN", BatchNormLayer<float>::count(c), c, "-"});
    out.rows.push_back({dims3(hw, hw, c), "ReLU", 0, c, "-"});
    const std::string stage = i < 3 ? ordinal[i] : std::to_string(i + 1) + "th";
    out.rows.push_back({dims3(hw, hw, c), stage + " Stage self-attention",
                        SelfAttention<float>::count(c, cfg.b), c, "-"});
    c_in = c;
  }
  const std::size_t o = cfg.out_width;
  out.rows.push_back({dims3(hw, hw, c_in), "1x1 Conv", Conv1x1Layer<float>::count(c_in, o, false),
                      o, "1"});
  out.rows.push_back({dims3(hw, hw, o), "BN", BatchNormLayer<float>::count(o), o, "-"});
  out.rows.push_back({dims3(hw, hw, o), "ReLU", 0, o, "-"});
  out.rows.push_back({dims3(hw, hw, o), "GAP", 0, o, "-"});
  return out;
}

template struct SelfAttention<float>;
template struct SelfAttention<double>;
template class FTT<float>;
template class FTT<double>;
template AttentionTrace<float> self_attention_forward(const Tensor<float>&,
                                                      const SelfAttention<float>&);
template AttentionTrace<double> self_attention_forward(const Tensor<double>&,
                                                       const SelfAttention<double>&);

}  // namespace fdft
