#pragma once

// FDFtNet assembly: a frozen backbone followed by N MBblockV3 blocks on one
// branch, the FTT stack on the raw image on the other, and a single-logit
// head over the concatenated pooled features.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "fdft/ftt.hpp"
#include "fdft/mbblock.hpp"
#include "fdft/weights.hpp"

namespace fdft {

/// Anything the trainer can optimize: a forward producing (n,1,1,1) logits
/// and the parameters it reads.
template <class T>
class Network {
 public:
  virtual ~Network() = default;
  virtual typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var batch,
                                        Mode mode) const = 0;
  virtual ParamStore<T>& params() = 0;
  virtual const ParamStore<T>& params() const = 0;
};

struct BackboneConfig {
  std::string kind = "toy";
  std::vector<std::size_t> widths{16, 32, 64, 128};
  std::vector<std::size_t> strides{2, 2, 2, 1};
  std::size_t in_channels = 3;

  std::size_t out_channels() const { return widths.empty() ? in_channels : widths.back(); }
  void validate() const;
};

/// Feature extractor (n, H, W, 3) -> (n, h, w, c_b) standing in for a
/// pretrained CNN with its classification layers removed.
template <class T>
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var x,
                                        Mode mode) const = 0;
  virtual std::size_t out_channels() const = 0;
  virtual const BackboneConfig& config() const = 0;
};

/// Stages of [separable conv 3x3 -> BN -> ReLU].
template <class T>
class ToyBackbone final : public Backbone<T> {
 public:
  static std::unique_ptr<ToyBackbone> create(ParamStore<T>& store, const std::string& prefix,
                                             const BackboneConfig& cfg, BatchNormConfig bn);

  typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var x,
                                Mode mode) const override;
  std::size_t out_channels() const override { return cfg_.out_channels(); }
  const BackboneConfig& config() const override { return cfg_; }

 private:
  BackboneConfig cfg_;
  std::vector<std::pair<SeparableConvLayer<T>, BatchNormLayer<T>>> stages_;
};

struct ModelConfig {
  FTTConfig ftt;
  std::size_t n_blocks = 4;
  /// Widths shared by every block; c_in is derived from the block position.
  MBBlockConfig block;
  BackboneConfig backbone;
  std::size_t input_size = 64;
  BatchNormConfig bn;
  /// false replaces the FTT branch by zeros (ablation).
  bool use_ftt = true;
  /// Zero-initialized head gives a neutral 0.5 output at initialization.
  bool zero_head = true;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

template <class T>
class FDFtNetModel final : public Network<T> {
 public:
  /// Builds and initializes a model; the backbone starts frozen.
  static std::unique_ptr<FDFtNetModel> assemble(const ModelConfig& cfg);

  typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var batch,
                                Mode mode) const override;
  ParamStore<T>& params() override { return store_; }
  const ParamStore<T>& params() const override { return store_; }

  /// Idempotent. Frozen backbone BN layers run on their moving statistics.
  void freeze_backbone(bool frozen);
  bool backbone_frozen() const noexcept { return frozen_; }

  /// sigmoid(logit) per batch row, in inference mode.
  std::vector<double> predict_proba(const Tensor<T>& batch) const;

  /// CRC-32 over the backbone's parameter bytes, including moving statistics.
  std::uint32_t backbone_checksum() const;
  std::size_t backbone_param_count() const;
  /// Parameters of trainable layers, counting BN at 4 per channel like the
  /// breakdown tables (moving statistics follow their layer's gamma).
  std::size_t trainable_param_count() const;

  const ModelConfig& config() const noexcept { return cfg_; }
  const FTT<T>& ftt() const noexcept { return ftt_; }
  const Backbone<T>& backbone() const noexcept { return *backbone_; }

  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<FDFtNetModel> load(const std::filesystem::path& path);
  WeightsFile to_weights() const;
  static std::unique_ptr<FDFtNetModel> from_weights(const WeightsFile& file);

  /// Copies backbone tensors from a file written by save_backbone().
  void load_backbone(const WeightsFile& file);

 private:
  FDFtNetModel() = default;

  ModelConfig cfg_;
  ParamStore<T> store_;
  std::unique_ptr<Backbone<T>> backbone_;
  FTT<T> ftt_;
  std::vector<MBBlockV3<T>> blocks_;
  DenseLayer<T> head_;
  bool frozen_ = false;
};

/// Backbone with a temporary GAP + dense head, used to pretrain the backbone.
template <class T>
class BackboneClassifier final : public Network<T> {
 public:
  static std::unique_ptr<BackboneClassifier> create(const BackboneConfig& cfg,
                                                    BatchNormConfig bn, std::uint64_t seed);

  typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var batch,
                                Mode mode) const override;
  ParamStore<T>& params() override { return store_; }
  const ParamStore<T>& params() const override { return store_; }

  /// Writes backbone tensors only; the temporary head is dropped.
  void save_backbone(const std::filesystem::path& path) const;
  WeightsFile backbone_weights() const;

 private:
  BackboneClassifier() = default;

  BackboneConfig cfg_;
  BatchNormConfig bn_;
  ParamStore<T> store_;
  std::unique_ptr<Backbone<T>> backbone_;
  DenseLayer<T> head_;
};

/// Backbone layout stored in a file written by save_backbone().
BackboneConfig backbone_config(const WeightsFile& file);

/// Breakdown of the complete model: FTT, N blocks and head.
ParamBreakdown model_param_count(const ModelConfig& cfg);

/// Snapshot of every parameter value (for best-epoch restoration).
template <class T>
std::vector<Tensor<T>> snapshot(const ParamStore<T>& store);
template <class T>
void restore(ParamStore<T>& store, const std::vector<Tensor<T>>& values);

/// CRC-32 over the raw bytes of every parameter whose name starts with `prefix`.
template <class T>
std::uint32_t params_checksum(const ParamStore<T>& store, const std::string& prefix);

extern template class ToyBackbone<float>;
extern template class ToyBackbone<double>;
extern template class FDFtNetModel<float>;
extern template class FDFtNetModel<double>;
extern template class BackboneClassifier<float>;
extern template class BackboneClassifier<double>;

}  // namespace fdft
