#include "fdft/model.hpp"

#include <random>
#include <set>

#include "json.hpp"

namespace fdft {

using nlohmann::json;

void BackboneConfig::validate() const {
  if (kind != "toy") throw ConfigError("unsupported backbone kind '" + kind + "'");
  if (widths.empty() || widths.size() != strides.size()) {
    throw ConfigError("backbone: need one stride per stage width");
  }
  for (auto s : strides) kernels::require_stride("backbone", s);
  for (auto w : widths)
    if (w == 0) throw ConfigError("backbone: widths must be positive");
}

// ---------------------------------------------------------------------------

template <class T>
std::unique_ptr<ToyBackbone<T>> ToyBackbone<T>::create(ParamStore<T>& store,
                                                       const std::string& prefix,
                                                       const BackboneConfig& cfg,
                                                       BatchNormConfig bn) {
  cfg.validate();
  auto b = std::unique_ptr<ToyBackbone>(new ToyBackbone());
  b->cfg_ = cfg;
  std::size_t c_in = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::string sp = prefix + ".stage" + std::to_string(i + 1);
    b->stages_.emplace_back(
        SeparableConvLayer<T>::create(store, sp + ".conv", c_in, cfg.widths[i], cfg.strides[i]),
        BatchNormLayer<T>::create(store, sp + ".bn", cfg.widths[i], bn));
    c_in = cfg.widths[i];
  }
  return b;
}

template <class T>
typename Tape<T>::Var ToyBackbone<T>::forward(Tape<T>& tape, typename Tape<T>::Var x,
                                              Mode mode) const {
  require_dim("backbone", "c", tape.value(x).shape().c, cfg_.in_channels);
  for (const auto& [conv, bn] : stages_) {
    x = ops::relu(tape, bn.forward(tape, conv.forward(tape, x), mode));
  }
  return x;
}

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
  if (block.stride != 1) throw ConfigError("fine-tuning blocks must use stride 1");
  ftt.validate();
  backbone.validate();
  if (input_size == 0 || input_size % (std::size_t{1} << ftt.m) != 0) {
    throw ConfigError("input size " + std::to_string(input_size) + " is not divisible by 2^m");
  }
}

namespace {

json backbone_json(const BackboneConfig& b) {
  return json{{"kind", b.kind},
              {"widths", b.widths},
              {"strides", b.strides},
              {"in_channels", b.in_channels}};
}

BackboneConfig backbone_from(const json& j) {
  BackboneConfig b;
  b.kind = j.at("kind").get<std::string>();
  b.widths = j.at("widths").get<std::vector<std::size_t>>();
  b.strides = j.at("strides").get<std::vector<std::size_t>>();
  b.in_channels = j.at("in_channels").get<std::size_t>();
  return b;
}

json parse_config(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config header is not valid JSON: ") + e.what(), 0);
  }
}

template <class T>
NamedTensor to_named(const Parameter<T>& p) {
  NamedTensor t;
  t.name = p.name;
  for (auto d : p.dims) t.dims.push_back(static_cast<std::uint32_t>(d));
  t.data.assign(p.value.data().begin(), p.value.data().end());
  return t;
}

template <class T>
void copy_into(Parameter<T>& p, const NamedTensor& t) {
  std::vector<std::size_t> dims(t.dims.begin(), t.dims.end());
  if (dims != p.dims) {
    throw FormatError("tensor '" + t.name + "' has dims incompatible with the model", 0);
  }
  for (std::size_t i = 0; i < t.data.size(); ++i) p.value[i] = static_cast<T>(t.data[i]);
}

}  // namespace

std::string ModelConfig::to_json() const {
  json j{{"format", "fdftnet"},
         {"m", ftt.m},
         {"b", ftt.b},
         {"stage_widths", ftt.stage_widths},
         {"ftt_out", ftt.out_width},
         {"n_blocks", n_blocks},
         {"block", {{"expand", block.expand}, {"se_reduce", block.se_reduce}, {"out", block.out}}},
         {"backbone", backbone_json(backbone)},
         {"input_size", input_size},
         {"bn_eps", bn.eps},
         {"bn_momentum", bn.momentum},
         {"use_ftt", use_ftt},
         {"zero_head", zero_head},
         {"seed", seed}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const json j = parse_config(text);
  try {
    if (j.at("format") != "fdftnet") throw FormatError("config is not an FDFtNet model", 0);
    ModelConfig c;
    c.ftt.m = j.at("m").get<std::size_t>();
    c.ftt.b = j.at("b").get<std::size_t>();
    c.ftt.stage_widths = j.at("stage_widths").get<std::vector<std::size_t>>();
    c.ftt.out_width = j.at("ftt_out").get<std::size_t>();
    c.n_blocks = j.at("n_blocks").get<std::size_t>();
    const json& b = j.at("block");
    c.block.expand = b.at("expand").get<std::size_t>();
    c.block.se_reduce = b.at("se_reduce").get<std::size_t>();
    c.block.out = b.at("out").get<std::size_t>();
    c.backbone = backbone_from(j.at("backbone"));
    c.input_size = j.at("input_size").get<std::size_t>();
    c.bn.eps = j.at("bn_eps").get<double>();
    c.bn.momentum = j.at("bn_momentum").get<double>();
    c.use_ftt = j.at("use_ftt").get<bool>();
    c.zero_head = j.at("zero_head").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("config header: ") + e.what(), 0);
  }
}

// ---------------------------------------------------------------------------

template <class T>
std::unique_ptr<FDFtNetModel<T>> FDFtNetModel<T>::assemble(const ModelConfig& cfg) {
  cfg.validate();
  auto m = std::unique_ptr<FDFtNetModel>(new FDFtNetModel());
  m->cfg_ = cfg;
  m->backbone_ = ToyBackbone<T>::create(m->store_, "backbone", cfg.backbone, cfg.bn);
  if (cfg.use_ftt) m->ftt_ = FTT<T>::create(m->store_, "ftt", cfg.ftt, cfg.bn);
  MBBlockConfig bc = cfg.block;
  for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
    bc.c_in = i == 0 ? m->backbone_->out_channels() : bc.out;
    m->blocks_.push_back(MBBlockV3<T>::create(m->store_, "mbblock" + std::to_string(i + 1), bc,
                                              cfg.bn));
  }
  m->head_ = DenseLayer<T>::create(m->store_, "head", cfg.ftt.out_width + bc.out, 1);
  std::mt19937_64 rng(cfg.seed);
  he_uniform_init(m->store_, rng,
                  cfg.zero_head ? std::vector<std::string>{"head."} : std::vector<std::string>{});
  m->freeze_backbone(true);
  return m;
}

template <class T>
typename Tape<T>::Var FDFtNetModel<T>::forward(Tape<T>& tape, typename Tape<T>::Var batch,
                                               Mode mode) const {
  const Shape s = tape.value(batch).shape();
  require_dim("model", "h", s.h, cfg_.input_size);
  require_dim("model", "w", s.w, cfg_.input_size);
  auto feat = backbone_->forward(tape, batch, mode);
  for (const auto& b : blocks_) feat = b.forward(tape, feat, mode);
  auto v2 = ops::global_avg_pool(tape, feat);
  auto v1 = cfg_.use_ftt
                ? ftt_.forward(tape, batch, mode)
                : tape.constant(Tensor<T>(Shape{s.n, 1, 1, cfg_.ftt.out_width}));
  return head_.forward(tape, ops::concat_channels(tape, v1, v2));
}

template <class T>
void FDFtNetModel<T>::freeze_backbone(bool frozen) {
  store_.set_trainable("backbone.", !frozen);
  frozen_ = frozen;
}

template <class T>
std::vector<double> FDFtNetModel<T>::predict_proba(const Tensor<T>& batch) const {
  Tape<T> tape;
  const Tensor<T>& z = tape.value(forward(tape, tape.constant(batch), Mode::Infer));
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = kernels::sigmoid(static_cast<double>(z[i]));
  return p;
}

template <class T>
std::uint32_t FDFtNetModel<T>::backbone_checksum() const {
  return params_checksum(store_, "backbone.");
}

template <class T>
std::size_t FDFtNetModel<T>::trainable_param_count() const {
  std::size_t n = 0;
  for (const auto& p : store_) {
    bool counted = p.trainable;
    if (p.kind == ParamKind::State) {
      const auto dot = p.name.rfind('.');
      const auto* gamma = store_.find(p.name.substr(0, dot) + ".gamma");
      counted = gamma && gamma->trainable;
    }
    if (counted) n += p.numel();
  }
  return n;
}

template <class T>
std::size_t FDFtNetModel<T>::backbone_param_count() const {
  return store_.numel_with_prefix("backbone.");
}

template <class T>
WeightsFile FDFtNetModel<T>::to_weights() const {
  json j = json::parse(cfg_.to_json());
  j["backbone_frozen"] = frozen_;
  std::vector<std::string> frozen;
  for (const auto& p : store_)
    if (p.kind == ParamKind::Weight && !p.trainable) frozen.push_back(p.name);
  j["frozen"] = frozen;
  WeightsFile f;
  f.config_json = j.dump();
  for (const auto& p : store_) f.tensors.push_back(to_named(p));
  return f;
}

template <class T>
std::unique_ptr<FDFtNetModel<T>> FDFtNetModel<T>::from_weights(const WeightsFile& file) {
  const ModelConfig cfg = ModelConfig::from_json(file.config_json);
  auto m = assemble(cfg);
  const json j = parse_config(file.config_json);
  std::set<std::string> expected;
  for (auto& p : m->store_) {
    const NamedTensor* t = file.find(p.name);
    if (!t) throw FormatError("missing tensor '" + p.name + "'", 0);
    copy_into(p, *t);
    expected.insert(p.name);
  }
  for (const auto& t : file.tensors) {
    if (!expected.contains(t.name)) throw FormatError("unexpected tensor '" + t.name + "'", 0);
  }
  m->freeze_backbone(j.value("backbone_frozen", true));
  const auto frozen = j.value("frozen", std::vector<std::string>{});
  const std::set<std::string> frozen_set(frozen.begin(), frozen.end());
  for (auto& p : m->store_)
    if (p.kind == ParamKind::Weight) p.trainable = !frozen_set.contains(p.name);
  return m;
}

template <class T>
void FDFtNetModel<T>::save(const std::filesystem::path& path) const {
  write_weights(path, to_weights());
}

template <class T>
std::unique_ptr<FDFtNetModel<T>> FDFtNetModel<T>::load(const std::filesystem::path& path) {
  return from_weights(read_weights(path));
}

BackboneConfig backbone_config(const WeightsFile& file) {
  const json j = parse_config(file.config_json);
  if (j.value("format", "") != "backbone") {
    throw FormatError("file does not hold backbone weights", 0);
  }
  try {
    BackboneConfig bc = backbone_from(j.at("backbone"));
    bc.validate();
    return bc;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed backbone config: ") + e.what(), 0);
  }
}

template <class T>
void FDFtNetModel<T>::load_backbone(const WeightsFile& file) {
  const BackboneConfig bc = backbone_config(file);
  if (bc.widths != cfg_.backbone.widths || bc.strides != cfg_.backbone.strides ||
      bc.in_channels != cfg_.backbone.in_channels || bc.kind != cfg_.backbone.kind) {
    throw ConfigError("incompatible backbone: file has " + backbone_json(bc).dump() +
                      ", model expects " + backbone_json(cfg_.backbone).dump());
  }
  for (auto& p : store_) {
    if (!p.name.starts_with("backbone.")) continue;
    const NamedTensor* t = file.find(p.name);
    if (!t) throw FormatError("backbone file lacks tensor '" + p.name + "'", 0);
    copy_into(p, *t);
  }
}

// ---------------------------------------------------------------------------

template <class T>
std::unique_ptr<BackboneClassifier<T>> BackboneClassifier<T>::create(const BackboneConfig& cfg,
                                                                     BatchNormConfig bn,
                                                                     std::uint64_t seed) {
  auto m = std::unique_ptr<BackboneClassifier>(new BackboneClassifier());
  m->cfg_ = cfg;
  m->bn_ = bn;
  m->backbone_ = ToyBackbone<T>::create(m->store_, "backbone", cfg, bn);
  m->head_ = DenseLayer<T>::create(m->store_, "pretrain_head", cfg.out_channels(), 1);
  std::mt19937_64 rng(seed);
  he_uniform_init(m->store_, rng);
  return m;
}

template <class T>
typename Tape<T>::Var BackboneClassifier<T>::forward(Tape<T>& tape, typename Tape<T>::Var batch,
                                                     Mode mode) const {
  auto feat = ops::global_avg_pool(tape, backbone_->forward(tape, batch, mode));
  return head_.forward(tape, feat);
}

template <class T>
WeightsFile BackboneClassifier<T>::backbone_weights() const {
  json j{{"format", "backbone"},
         {"backbone", backbone_json(cfg_)},
         {"bn_eps", bn_.eps},
         {"bn_momentum", bn_.momentum}};
  WeightsFile f;
  f.config_json = j.dump();
  for (const auto& p : store_)
    if (p.name.starts_with("backbone.")) f.tensors.push_back(to_named(p));
  return f;
}

template <class T>
void BackboneClassifier<T>::save_backbone(const std::filesystem::path& path) const {
  write_weights(path, backbone_weights());
}

// ---------------------------------------------------------------------------

ParamBreakdown model_param_count(const ModelConfig& cfg) {
  cfg.validate();
  ParamBreakdown out;
  if (cfg.use_ftt) {
    for (auto row : ftt_param_count(cfg.ftt, cfg.input_size).rows) {
      row.operation = "FTT " + row.operation;
      out.rows.push_back(row);
    }
  }
  MBBlockConfig bc = cfg.block;
  std::size_t spatial = cfg.input_size;
  for (auto s : cfg.backbone.strides) spatial = same_out(spatial, s);
  for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
    bc.c_in = i == 0 ? cfg.backbone.out_channels() : bc.out;
    for (auto row : mbblock_param_count(bc, spatial).rows) {
      row.operation = "MBblockV3 #" + std::to_string(i + 1) + " " + row.operation;
      out.rows.push_back(row);
    }
  }
  const std::size_t in = cfg.ftt.out_width + bc.out;
  out.rows.push_back({"1x1x" + std::to_string(in), "Dense head", DenseLayer<float>::count(in, 1),
                      1, "-"});
  return out;
}

template <class T>
std::vector<Tensor<T>> snapshot(const ParamStore<T>& store) {
  std::vector<Tensor<T>> out;
  out.reserve(store.size());
  for (const auto& p : store) out.push_back(p.value);
  return out;
}

template <class T>
void restore(ParamStore<T>& store, const std::vector<Tensor<T>>& values) {
  if (values.size() != store.size()) throw StateError("restore: snapshot does not match store");
  std::size_t i = 0;
  for (auto& p : store) p.value = values[i++];
}

template <class T>
std::uint32_t params_checksum(const ParamStore<T>& store, const std::string& prefix) {
  std::vector<std::uint8_t> bytes;
  for (const auto& p : store) {
    if (!p.name.starts_with(prefix)) continue;
    const auto* b = reinterpret_cast<const std::uint8_t*>(p.value.ptr());
    bytes.insert(bytes.end(), b, b + p.value.size() * sizeof(T));
  }
  return crc32(bytes);
}

template class ToyBackbone<float>;
template class ToyBackbone<double>;
template class FDFtNetModel<float>;
template class FDFtNetModel<double>;
template class BackboneClassifier<float>;
template class BackboneClassifier<double>;
template std::vector<Tensor<float>> snapshot(const ParamStore<float>&);
template std::vector<Tensor<double>> snapshot(const ParamStore<double>&);
template void restore(ParamStore<float>&, const std::vector<Tensor<float>>&);
template void restore(ParamStore<double>&, const std::vector<Tensor<double>>&);
template std::uint32_t params_checksum(const ParamStore<float>&, const std::string&);
template std::uint32_t params_checksum(const ParamStore<double>&, const std::string&);

}  // namespace fdft
