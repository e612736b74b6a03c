#pragma once

// Labeled image sets: directory ingestion, the synthetic real-vs-artifact
// task, and stratified splitting.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fdft/image.hpp"

namespace fdft {

inline constexpr int kReal = 0;
inline constexpr int kFake = 1;

struct Sample {
  ImageU8 image;  // stored as 8-bit; rescaled to [0, 1] by the pipelines
  int label = kReal;
  std::string path;
};

struct LabeledDataset {
  std::vector<Sample> items;
  std::string split = "all";

  std::size_t size() const noexcept { return items.size(); }
  std::size_t count(int label) const;
};

/// Reads <root>/real/*.ppm (label 0) and <root>/fake/*.ppm (label 1) in
/// lexicographic path order, resizing anything that is not size x size.
LabeledDataset load_dataset_dir(const std::filesystem::path& root, std::size_t size = 64);

struct SyntheticTaskConfig {
  std::size_t n_per_class = 100;
  std::uint64_t seed = 42;
  std::size_t blob_count = 6;
  double artifact_amplitude = 0.25;
  std::size_t artifact_period = 2;  // pixels
  double artifact_region = 0.5;     // fraction of the image area
  std::size_t image_size = 64;

  void validate() const;
};

/// Smooth random "real" images and "fake" images carrying an additive
/// checkerboard inside a random rectangle. When `out_root` is given, writes
/// real/ and fake/ PPM files plus manifest.csv (path,label,seed).
LabeledDataset generate_synthetic(const SyntheticTaskConfig& cfg,
                                  const std::optional<std::filesystem::path>& out_root = {});

/// One synthetic image; exposed for construction audits.
struct SyntheticImage {
  ImageU8 image;
  ImageU8 clean;  // the same image before the artifact was added
  std::size_t y0 = 0, y1 = 0, x0 = 0, x1 = 0;  // artifact rectangle (fakes only)
};
SyntheticImage synthesize(const SyntheticTaskConfig& cfg, int label, std::uint64_t seed);

struct Splits {
  LabeledDataset train, val, test, finetune;
};

/// Seeded, stratified partition into (train, val, test, finetune). Each
/// class is divided by largest remainder so per-split class counts are within
/// one item of the exact fractions.
Splits split(const LabeledDataset& data, const std::array<double, 4>& fractions,
             std::uint64_t seed);

}  // namespace fdft
