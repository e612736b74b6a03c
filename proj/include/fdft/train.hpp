#pragma once

// Optimization and evaluation: cosine schedule, SGD with momentum, the
// early-stopping training loop, fine-tuning, and ACC/AUROC metrics.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fdft/augment.hpp"
#include "fdft/dataset.hpp"
#include "fdft/model.hpp"

namespace fdft {

struct TrainConfig {
  double lr0 = 0.3;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 60;
  std::size_t patience = 20;
  /// Smallest decrease of the best validation loss that counts as progress.
  double min_delta = 1e-6;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentConfig augmentation;
  /// Per-epoch CSV; empty disables it.
  std::filesystem::path history_csv;

  void validate() const;
  /// "desk" (batch 32, 60 epochs) or "paper" (batch 128, 300 epochs).
  static TrainConfig profile(const std::string& name);
};

struct Metrics {
  double acc = 0.0;
  /// Empty when the set holds a single class.
  std::optional<double> auroc;
  double loss = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double val_auroc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

/// lr0 * (1 + cos(pi * epoch / max_epochs)) / 2.
double cosine_lr(std::size_t epoch, std::size_t max_epochs, double lr0);

/// v = momentum * v - lr * g; p = p + v.
template <class T>
void sgd_momentum_step(std::span<T> p, std::span<const T> g, std::span<T> v, double lr,
                       double momentum);

/// Holds one velocity buffer per parameter; frozen and State parameters are
/// never touched.
template <class T>
class SgdMomentum {
 public:
  SgdMomentum(ParamStore<T>& params, double momentum);
  void step(double lr);

 private:
  ParamStore<T>* params_;
  double momentum_;
  std::vector<Tensor<T>> velocity_;
};

/// Mann-Whitney AUROC with ties counted as one half. Label 1 is the positive
/// (fake) class. Throws MetricError unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);
/// Fraction of rows where (score >= threshold) matches label == 1.
double accuracy(std::span<const double> scores, std::span<const int> labels,
                double threshold = 0.5);

/// Stacks rescaled items into an (n, h, w, 3) batch.
template <class T>
Tensor<T> make_batch(const LabeledDataset& data, std::span<const std::size_t> indices);

/// Logits for every item, in dataset order, without augmentation.
template <class T>
std::vector<double> predict_logits(const Network<T>& net, const LabeledDataset& data,
                                   std::size_t batch_size = 64);

template <class T>
Metrics evaluate(const Network<T>& net, const LabeledDataset& data, std::size_t batch_size = 64);

/// Trains every trainable parameter of `net` and leaves it holding the
/// weights of the epoch with the lowest validation loss.
template <class T>
TrainResult train_loop(Network<T>& net, const LabeledDataset& train, const LabeledDataset& val,
                       const TrainConfig& cfg,
                       const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Pretrains a backbone with a temporary head.
template <class T>
std::unique_ptr<BackboneClassifier<T>> pretrain_backbone(
    const BackboneConfig& backbone, const LabeledDataset& train, const LabeledDataset& val,
    const TrainConfig& cfg, TrainResult* result = nullptr,
    const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Assembles a model around the stored backbone, freezes it, and trains the
/// remaining layers. `model_cfg.backbone` is replaced by the file's layout.
template <class T>
std::unique_ptr<FDFtNetModel<T>> fine_tune(
    const WeightsFile& backbone_file, const LabeledDataset& finetune_set,
    const LabeledDataset& val_set, ModelConfig model_cfg, const TrainConfig& cfg,
    TrainResult* result = nullptr, const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Process setup for training on the calling thread: large activation
/// buffers stay in the heap instead of being unmapped after every batch, and
/// subnormal floats flush to zero (near-zero losses otherwise produce
/// subnormal gradients that are orders of magnitude slower to process).
void configure_runtime();

}  // namespace fdft
