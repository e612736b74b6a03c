#pragma once

// Training-time augmentation. Every random decision is drawn from a
// caller-supplied engine, so a pipeline run is a pure function of
// (image, config, engine state).

#include <cstdint>
#include <random>
#include <vector>

#include "fdft/image.hpp"

namespace fdft {

using Rng = std::mt19937_64;

struct CutoutConfig {
  std::size_t base_size = 4;  // side of the unit square, in pixels
  std::size_t alpha = 3;      // masks per image
  std::size_t beta = 5;       // largest size multiplier
  /// Always use multiplier beta instead of sampling from {1..beta}.
  bool fixed_size = false;

  void validate() const;
};

struct AugmentConfig {
  int translate_px = 2;        // shifts drawn from [-translate_px, translate_px]
  double zoom_range = 0.2;     // zoom factor 1 + z, z in [-zoom_range, zoom_range]
  double rotate_range = 0.2;   // radians
  bool horizontal_flip = true;
  CutoutConfig cutout;
};

/// Axis-aligned square after clipping, half-open on both axes.
struct MaskRect {
  std::size_t y0, y1, x0, x1;
};

/// Zeroes cfg.alpha squares of side base_size * s at uniformly drawn centers,
/// clipped to the image. Masks may overlap. `img` is (1, h, w, c).
Tensor<float> cutout(const Tensor<float>& img, const CutoutConfig& cfg, Rng& rng,
                     std::vector<MaskRect>* masks = nullptr);

/// Moves content by (dx, dy) pixels; vacated pixels copy the nearest edge.
Tensor<float> translate(const Tensor<float>& img, int dx, int dy);
Tensor<float> random_translate(const Tensor<float>& img, int range_px, Rng& rng);

/// Zoom by 1 + z and rotate by theta radians about the image center, with
/// bilinear sampling and nearest padding outside the source.
Tensor<float> zoom_rotate(const Tensor<float>& img, double z, double theta);
Tensor<float> random_zoom_rotate(const Tensor<float>& img, double zoom_range,
                                 double rotate_range, Rng& rng);

/// Mirrors the width axis.
Tensor<float> horizontal_flip(const Tensor<float>& img);

/// Maps 8-bit values to [0, 1] by division by 255.
Tensor<float> rescale(const ImageU8& img);

/// rescale -> translate -> zoom/rotate -> flip (p = 0.5) -> cutout.
Tensor<float> train_pipeline(const ImageU8& img, const AugmentConfig& cfg, Rng& rng);
/// rescale only.
Tensor<float> eval_pipeline(const ImageU8& img);

/// Independent stream seed for one sample; a fixed mix of the three inputs.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t worker, std::uint64_t sample);

}  // namespace fdft
