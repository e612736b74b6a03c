#pragma once

// 8-bit RGB images, the binary PPM (P6) codec and bilinear resizing.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fdft/tensor.hpp"

namespace fdft {

/// Interleaved 8-bit pixels, row-major (h, w, c).
struct ImageU8 {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 3;
  std::vector<std::uint8_t> data;

  ImageU8() = default;
  ImageU8(std::size_t h_, std::size_t w_, std::size_t c_ = 3, std::uint8_t fill = 0)
      : h(h_), w(w_), c(c_), data(h_ * w_ * c_, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t ch) { return data[(y * w + x) * c + ch]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t ch) const {
    return data[(y * w + x) * c + ch];
  }
  bool operator==(const ImageU8&) const = default;
};

/// Serializes as "P6\n<w> <h>\n255\n" followed by the raw RGB bytes.
std::vector<std::uint8_t> encode_ppm(const ImageU8& img);
/// Accepts comments and arbitrary whitespace in the header. Rejects anything
/// other than P6 with maxval 255; truncation reports the byte offset.
ImageU8 decode_ppm(std::span<const std::uint8_t> bytes);

void save_ppm(const ImageU8& img, const std::filesystem::path& path);
ImageU8 load_ppm(const std::filesystem::path& path);

/// Values in [0, 255] as floats, shape (1, h, w, c).
Tensor<float> to_tensor(const ImageU8& img);
/// Rounds to nearest and clamps to [0, 255].
ImageU8 to_u8(const Tensor<float>& img);

/// Separable bilinear resampling with half-pixel centers and edge clamping.
/// Works per batch element of a (n, h, w, c) tensor.
Tensor<float> resize_bilinear(const Tensor<float>& img, std::size_t out_h, std::size_t out_w);

}  // namespace fdft
