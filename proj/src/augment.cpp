#include "fdft/augment.hpp"

#include <algorithm>
#include <cmath>

#include "fdft/error.hpp"

namespace fdft {

namespace {

long uniform_int(Rng& rng, long lo, long hi) {
  return std::uniform_int_distribution<long>(lo, hi)(rng);
}

double uniform_real(Rng& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void require_image(const char* op, const Tensor<float>& img) {
  if (img.shape().n != 1) {
    throw DimensionError(std::string(op) + ": expected a single (1, h, w, c) image, got " +
                         img.shape().str());
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

void CutoutConfig::validate() const {
  if (base_size < 1) throw ConfigError("cutout: base_size must be >= 1");
  if (beta < 1) throw ConfigError("cutout: beta must be >= 1");
}

Tensor<float> cutout(const Tensor<float>& img, const CutoutConfig& cfg, Rng& rng,
                     std::vector<MaskRect>* masks) {
  cfg.validate();
  require_image("cutout", img);
  Tensor<float> out = img;
  const Shape& s = img.shape();
  if (s.h == 0 || s.w == 0) return out;
  for (std::size_t it = 0; it < cfg.alpha; ++it) {
    const long mult = cfg.fixed_size ? static_cast<long>(cfg.beta)
                                     : uniform_int(rng, 1, static_cast<long>(cfg.beta));
    const long side = mult * static_cast<long>(cfg.base_size);
    const long cy = uniform_int(rng, 0, static_cast<long>(s.h) - 1);
    const long cx = uniform_int(rng, 0, static_cast<long>(s.w) - 1);
    const long top = cy - side / 2;
    const long left = cx - side / 2;
    MaskRect r{static_cast<std::size_t>(std::clamp(top, 0L, static_cast<long>(s.h))),
               static_cast<std::size_t>(std::clamp(top + side, 0L, static_cast<long>(s.h))),
               static_cast<std::size_t>(std::clamp(left, 0L, static_cast<long>(s.w))),
               static_cast<std::size_t>(std::clamp(left + side, 0L, static_cast<long>(s.w)))};
    for (std::size_t y = r.y0; y < r.y1; ++y) {
      float* row = out.ptr() + s.index(0, y, r.x0, 0);
      std::fill(row, row + (r.x1 - r.x0) * s.c, 0.0f);
    }
    if (masks) masks->push_back(r);
  }
  return out;
}

Tensor<float> translate(const Tensor<float>& img, int dx, int dy) {
  require_image("translate", img);
  const Shape& s = img.shape();
  Tensor<float> out(s);
  const long h = static_cast<long>(s.h);
  const long w = static_cast<long>(s.w);
  for (long y = 0; y < h; ++y) {
    const long sy = std::clamp(y - dy, 0L, h - 1);
    for (long x = 0; x < w; ++x) {
      const long sx = std::clamp(x - dx, 0L, w - 1);
      const float* src = img.ptr() + s.index(0, sy, sx, 0);
      std::copy(src, src + s.c, out.ptr() + s.index(0, y, x, 0));
    }
  }
  return out;
}

Tensor<float> random_translate(const Tensor<float>& img, int range_px, Rng& rng) {
  const int dx = static_cast<int>(uniform_int(rng, -range_px, range_px));
  const int dy = static_cast<int>(uniform_int(rng, -range_px, range_px));
  return translate(img, dx, dy);
}

Tensor<float> zoom_rotate(const Tensor<float>& img, double z, double theta) {
  require_image("zoom_rotate", img);
  if (1.0 + z <= 0.0) throw ConfigError("zoom_rotate: zoom factor must be positive");
  const Shape& s = img.shape();
  Tensor<float> out(s);
  if (s.h == 0 || s.w == 0) return out;
  const double cy = (static_cast<double>(s.h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(s.w) - 1.0) / 2.0;
  const double ct = std::cos(theta) / (1.0 + z);
  const double st = std::sin(theta) / (1.0 + z);
  const double ymax = static_cast<double>(s.h) - 1.0;
  const double xmax = static_cast<double>(s.w) - 1.0;
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      // Inverse map: output pixel -> source coordinates.
      const double u = static_cast<double>(x) - cx;
      const double v = static_cast<double>(y) - cy;
      const double sx = std::clamp(ct * u + st * v + cx, 0.0, xmax);
      const double sy = std::clamp(-st * u + ct * v + cy, 0.0, ymax);
      const auto x0 = static_cast<std::size_t>(sx);
      const auto y0 = static_cast<std::size_t>(sy);
      const std::size_t x1 = std::min(x0 + 1, s.w - 1);
      const std::size_t y1 = std::min(y0 + 1, s.h - 1);
      const double fx = sx - static_cast<double>(x0);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t ch = 0; ch < s.c; ++ch) {
        const double top = img.at(0, y0, x0, ch) * (1 - fx) + img.at(0, y0, x1, ch) * fx;
        const double bot = img.at(0, y1, x0, ch) * (1 - fx) + img.at(0, y1, x1, ch) * fx;
        out.at(0, y, x, ch) = static_cast<float>(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}

Tensor<float> random_zoom_rotate(const Tensor<float>& img, double zoom_range,
                                 double rotate_range, Rng& rng) {
  const double z = uniform_real(rng, -zoom_range, zoom_range);
  const double theta = uniform_real(rng, -rotate_range, rotate_range);
  return zoom_rotate(img, z, theta);
}

Tensor<float> horizontal_flip(const Tensor<float>& img) {
  require_image("horizontal_flip", img);
  const Shape& s = img.shape();
  Tensor<float> out(s);
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x) {
      const float* src = img.ptr() + s.index(0, y, s.w - 1 - x, 0);
      std::copy(src, src + s.c, out.ptr() + s.index(0, y, x, 0));
    }
  return out;
}

Tensor<float> rescale(const ImageU8& img) {
  Tensor<float> t(Shape{1, img.h, img.w, img.c});
  for (std::size_t i = 0; i < img.data.size(); ++i) t[i] = static_cast<float>(img.data[i]) / 255.0f;
  return t;
}

Tensor<float> train_pipeline(const ImageU8& img, const AugmentConfig& cfg, Rng& rng) {
  Tensor<float> t = rescale(img);
  if (cfg.translate_px > 0) t = random_translate(t, cfg.translate_px, rng);
  if (cfg.zoom_range > 0.0 || cfg.rotate_range > 0.0) {
    t = random_zoom_rotate(t, cfg.zoom_range, cfg.rotate_range, rng);
  }
  if (cfg.horizontal_flip && std::bernoulli_distribution(0.5)(rng)) t = horizontal_flip(t);
  if (cfg.cutout.alpha > 0) t = cutout(t, cfg.cutout, rng);
  return t;
}

Tensor<float> eval_pipeline(const ImageU8& img) { return rescale(img); }

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t worker, std::uint64_t sample) {
  return splitmix64(splitmix64(splitmix64(seed) ^ worker) ^ sample);
}

}  // namespace fdft
