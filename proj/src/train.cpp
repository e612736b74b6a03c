#include "fdft/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#ifdef __GLIBC__
#include <malloc.h>
#endif
#if defined(__SSE__)
#include <xmmintrin.h>
#endif
#if defined(__SSE3__)
#include <pmmintrin.h>
#endif

#include "fdft/error.hpp"

namespace fdft {

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
  if (patience == 0) throw ConfigError("patience must be >= 1");
  augmentation.cutout.validate();
}

TrainConfig TrainConfig::profile(const std::string& name) {
  TrainConfig c;
  if (name == "desk") return c;
  if (name == "paper") {
    c.batch_size = 128;
    c.max_epochs = 300;
    return c;
  }
  throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
}

double cosine_lr(std::size_t epoch, std::size_t max_epochs, double lr0) {
  if (max_epochs == 0 || epoch > max_epochs) {
    throw ConfigError("cosine_lr: need 0 <= epoch <= max_epochs");
  }
  if (epoch == max_epochs) return 0.0;
  const double t = static_cast<double>(epoch) / static_cast<double>(max_epochs);
  return lr0 * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

template <class T>
void sgd_momentum_step(std::span<T> p, std::span<const T> g, std::span<T> v, double lr,
                       double momentum) {
  if (p.size() != g.size() || p.size() != v.size()) {
    throw DimensionError("sgd_momentum_step: parameter, gradient and velocity sizes differ");
  }
  const T mu = static_cast<T>(momentum);
  const T eta = static_cast<T>(lr);
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = mu * v[i] - eta * g[i];
    p[i] += v[i];
  }
}

template <class T>
SgdMomentum<T>::SgdMomentum(ParamStore<T>& params, double momentum)
    : params_(&params), momentum_(momentum) {
  for (const auto& p : params) velocity_.emplace_back(p.value.shape());
}

template <class T>
void SgdMomentum<T>::step(double lr) {
  std::size_t i = 0;
  for (auto& p : *params_) {
    Tensor<T>& v = velocity_[i++];
    if (!p.trainable || p.kind != ParamKind::Weight) continue;
    if (p.grad.size() != p.value.size()) {
      throw DimensionError("sgd: gradient of '" + p.name + "' has the wrong size");
    }
    sgd_momentum_step<T>(p.value.data(), p.grad.data(), v.data(), lr, momentum_);
  }
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auroc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pairs = 0.0;  // counted in halves so every partial sum is exact
  double reals_below = 0.0;
  double n_real = 0.0;
  double n_fake = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double reals = 0.0;
    double fakes = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? fakes : reals) += 1.0;
      ++j;
    }
    pairs += 2.0 * fakes * reals_below + fakes * reals;
    reals_below += reals;
    n_real += reals;
    n_fake += fakes;
    i = j;
  }
  if (n_real == 0.0 || n_fake == 0.0) {
    throw MetricError("AUROC is undefined unless both classes are present");
  }
  return pairs / (2.0 * n_fake * n_real);
}

double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
  if (scores.size() != labels.size()) throw DimensionError("accuracy: scores and labels differ in length");
  if (scores.empty()) throw MetricError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    hits += static_cast<std::size_t>((scores[i] >= threshold) == (labels[i] == 1));
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

namespace {

template <class T>
Tensor<T> stack(const std::vector<Tensor<float>>& images) {
  const Shape& s = images.front().shape();
  Tensor<T> out(Shape{images.size(), s.h, s.w, s.c});
  T* dst = out.ptr();
  for (const auto& img : images) {
    if (img.shape() != s) throw DimensionError("batch images differ in shape");
    dst = std::copy(img.data().begin(), img.data().end(), dst);
  }
  return out;
}

std::vector<int> labels_of(const LabeledDataset& data, std::span<const std::size_t> indices) {
  std::vector<int> y;
  y.reserve(indices.size());
  for (auto i : indices) y.push_back(data.items[i].label);
  return y;
}

template <class T>
std::string first_nonfinite(const ParamStore<T>& params) {
  for (const auto& p : params) {
    if (!p.value.all_finite()) return p.name + " (value)";
    if (p.grad.size() == p.value.size() && !p.grad.all_finite()) return p.name + " (gradient)";
  }
  return "";
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr std::uint64_t kShuffleStream = ~std::uint64_t{0};

}  // namespace

template <class T>
Tensor<T> make_batch(const LabeledDataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DimensionError("make_batch: empty batch");
  std::vector<Tensor<float>> images;
  images.reserve(indices.size());
  for (auto i : indices) images.push_back(eval_pipeline(data.items.at(i).image));
  return stack<T>(images);
}

template <class T>
std::vector<double> predict_logits(const Network<T>& net, const LabeledDataset& data,
                                   std::size_t batch_size) {
  std::vector<double> logits;
  logits.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(start + batch_size, data.size()); ++i) idx.push_back(i);
    Tape<T> tape;
    auto out = net.forward(tape, tape.constant(make_batch<T>(data, idx)), Mode::Infer);
    for (T v : tape.value(out).data()) logits.push_back(static_cast<double>(v));
  }
  return logits;
}

template <class T>
Metrics evaluate(const Network<T>& net, const LabeledDataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw DatasetError("evaluate: empty dataset");
  const auto logits = predict_logits(net, data, batch_size);
  std::vector<int> labels;
  std::vector<double> probs;
  for (std::size_t i = 0; i < data.size(); ++i) {
    labels.push_back(data.items[i].label);
    probs.push_back(sigmoid(logits[i]));
  }
  Metrics m;
  m.acc = accuracy(probs, labels);
  m.loss = bce_loss(logits, labels);
  if (data.count(kReal) > 0 && data.count(kFake) > 0) m.auroc = auroc(probs, labels);
  return m;
}

template <class T>
TrainResult train_loop(Network<T>& net, const LabeledDataset& train, const LabeledDataset& val,
                       const TrainConfig& cfg,
                       const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (train.size() == 0 || val.size() == 0) throw DatasetError("train_loop: empty train or validation set");
  configure_runtime();

  std::ofstream csv;
  if (!cfg.history_csv.empty()) {
    csv.open(cfg.history_csv, std::ios::trunc);
    if (!csv) throw Error("cannot write history to '" + cfg.history_csv.string() + "'");
    csv << "epoch,lr,train_loss,val_loss,val_acc,val_auroc\n";
    csv.precision(17);
  }

  ParamStore<T>& params = net.params();
  SgdMomentum<T> opt(params, cfg.momentum);
  TrainResult result;
  std::vector<Tensor<T>> best = snapshot(params);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Tensor<float>> images;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = cosine_lr(epoch - 1, cfg.max_epochs, cfg.lr0);
    Rng shuffle_rng(stream_seed(cfg.seed, kShuffleStream, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start,
                                             std::min(cfg.batch_size, order.size() - start));
      images.clear();
      for (auto i : idx) {
        const ImageU8& img = train.items[i].image;
        if (cfg.augment) {
          Rng rng(stream_seed(cfg.seed, epoch, i));
          images.push_back(train_pipeline(img, cfg.augmentation, rng));
        } else {
          images.push_back(eval_pipeline(img));
        }
      }
      const std::vector<int> y = labels_of(train, idx);

      params.zero_grad();
      Tape<T> tape;
      auto logits = net.forward(tape, tape.constant(stack<T>(images)), Mode::Train);
      auto loss = ops::bce_with_logits(tape, logits, y);
      const double batch_loss = static_cast<double>(tape.value(loss)[0]);
      tape.backward(loss);
      if (!std::isfinite(batch_loss)) {
        const std::string bad = first_nonfinite(params);
        throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                           ": non-finite loss" + (bad.empty() ? "" : "; first non-finite parameter " + bad));
      }
      if (const std::string bad = first_nonfinite(params); !bad.empty()) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                           ": first non-finite parameter " + bad);
      }
      opt.step(lr);
      loss_sum += batch_loss * static_cast<double>(idx.size());
    }

    const Metrics vm = evaluate(net, val);
    EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(train.size()), vm.loss, vm.acc,
                    vm.auroc.value_or(std::numeric_limits<double>::quiet_NaN())};
    result.history.push_back(rec);
    if (csv) {
      csv << rec.epoch << ',' << rec.lr << ',' << rec.train_loss << ',' << rec.val_loss << ','
          << rec.val_acc << ',' << rec.val_auroc << '\n';
      csv.flush();
    }
    if (on_epoch) on_epoch(rec);

    if (rec.val_loss < result.best_val_loss - cfg.min_delta) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      best = snapshot(params);
    } else if (epoch - result.best_epoch >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  restore(params, best);
  return result;
}

template <class T>
std::unique_ptr<BackboneClassifier<T>> pretrain_backbone(
    const BackboneConfig& backbone, const LabeledDataset& train, const LabeledDataset& val,
    const TrainConfig& cfg, TrainResult* result,
    const std::function<void(const EpochRecord&)>& on_epoch) {
  auto net = BackboneClassifier<T>::create(backbone, BatchNormConfig{}, cfg.seed);
  TrainResult r = train_loop(*net, train, val, cfg, on_epoch);
  if (result) *result = std::move(r);
  return net;
}

template <class T>
std::unique_ptr<FDFtNetModel<T>> fine_tune(
    const WeightsFile& backbone_file, const LabeledDataset& finetune_set,
    const LabeledDataset& val_set, ModelConfig model_cfg, const TrainConfig& cfg,
    TrainResult* result, const std::function<void(const EpochRecord&)>& on_epoch) {
  model_cfg.backbone = backbone_config(backbone_file);
  auto model = FDFtNetModel<T>::assemble(model_cfg);
  model->load_backbone(backbone_file);
  model->freeze_backbone(true);
  TrainResult r = train_loop(*model, finetune_set, val_set, cfg, on_epoch);
  if (result) *result = std::move(r);
  return model;
}

void configure_runtime() {
#ifdef __GLIBC__
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
#if defined(__SSE__)
  _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
#endif
#if defined(__SSE3__)
  _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
#endif
}

#define FDFT_INSTANTIATE(T)                                                                    \
  template void sgd_momentum_step<T>(std::span<T>, std::span<const T>, std::span<T>, double,  \
                                     double);                                                  \
  template class SgdMomentum<T>;                                                               \
  template Tensor<T> make_batch<T>(const LabeledDataset&, std::span<const std::size_t>);       \
  template std::vector<double> predict_logits<T>(const Network<T>&, const LabeledDataset&,     \
                                                 std::size_t);                                 \
  template Metrics evaluate<T>(const Network<T>&, const LabeledDataset&, std::size_t);         \
  template TrainResult train_loop<T>(Network<T>&, const LabeledDataset&,                       \
                                     const LabeledDataset&, const TrainConfig&,                \
                                     const std::function<void(const EpochRecord&)>&);          \
  template std::unique_ptr<BackboneClassifier<T>> pretrain_backbone<T>(                        \
      const BackboneConfig&, const LabeledDataset&, const LabeledDataset&, const TrainConfig&, \
      TrainResult*, const std::function<void(const EpochRecord&)>&);                           \
  template std::unique_ptr<FDFtNetModel<T>> fine_tune<T>(                                      \
      const WeightsFile&, const LabeledDataset&, const LabeledDataset&, ModelConfig,           \
      const TrainConfig&, TrainResult*, const std::function<void(const EpochRecord&)>&);

FDFT_INSTANTIATE(float)
FDFT_INSTANTIATE(double)

}  // namespace fdft
