#include "fdft/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "fdft/error.hpp"

namespace fdft {

namespace {

class HeaderReader {
 public:
  HeaderReader(std::span<const std::uint8_t> bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}

  // Skips whitespace and '#' comments running to the end of the line.
  void skip_space() {
    while (pos_ < bytes_.size()) {
      const auto ch = bytes_[pos_];
      if (ch == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else if (std::isspace(ch)) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > (1u << 24)) throw FormatError(std::string(what) + " too large", start);
      ++pos_;
    }
    if (pos_ == start) {
      if (pos_ >= bytes_.size()) throw FormatError(std::string("truncated header before ") + what, pos_);
      throw FormatError(std::string("expected ") + what, pos_);
    }
    return v;
  }

  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
};

}  // namespace

std::vector<std::uint8_t> encode_ppm(const ImageU8& img) {
  if (img.c != 3) throw DimensionError("encode_ppm: expected 3 channels, got " + std::to_string(img.c));
  const std::string header =
      "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.data.begin(), img.data.end());
  return out;
}

ImageU8 decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2) throw FormatError("truncated magic", bytes.size());
  if (bytes[0] != 'P' || bytes[1] != '6') {
    throw FormatError("bad magic '" + std::string(bytes.begin(), bytes.begin() + 2) +
                          "', expected 'P6'",
                      0);
  }
  HeaderReader r(bytes, 2);
  const std::size_t w = r.number("width");
  const std::size_t h = r.number("height");
  r.skip_space();
  const std::size_t maxval_at = r.pos();
  const std::size_t maxval = r.number("maxval");
  if (maxval != 255) {
    throw FormatError("unsupported maxval " + std::to_string(maxval) + ", expected 255",
                      maxval_at);
  }
  // Exactly one whitespace byte separates the header from the raster.
  std::size_t pos = r.pos();
  if (pos >= bytes.size()) throw FormatError("truncated header", pos);
  if (!std::isspace(bytes[pos])) throw FormatError("expected whitespace after maxval", pos);
  ++pos;
  ImageU8 img(h, w, 3);
  if (bytes.size() - pos < img.data.size()) {
    throw FormatError("truncated raster: need " + std::to_string(img.data.size()) +
                          " bytes, have " + std::to_string(bytes.size() - pos),
                      bytes.size());
  }
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), img.data.size(),
              img.data.begin());
  return img;
}

void save_ppm(const ImageU8& img, const std::filesystem::path& path) {
  const auto bytes = encode_ppm(img);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("failed writing '" + path.string() + "'");
}

ImageU8 load_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return decode_ppm(bytes);
}

Tensor<float> to_tensor(const ImageU8& img) {
  Tensor<float> t(Shape{1, img.h, img.w, img.c});
  for (std::size_t i = 0; i < img.data.size(); ++i) t[i] = static_cast<float>(img.data[i]);
  return t;
}

ImageU8 to_u8(const Tensor<float>& img) {
  const Shape& s = img.shape();
  if (s.n != 1) throw DimensionError("to_u8: expected a single image, got " + s.str());
  ImageU8 out(s.h, s.w, s.c);
  for (std::size_t i = 0; i < img.size(); ++i) {
    out.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(img[i]), 0L, 255L));
  }
  return out;
}

namespace {

struct Tap {
  std::size_t i0, i1;
  float w1;
};

// Source taps for each output coordinate: half-pixel centers, clamped edges.
std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> t(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    t[o] = {i0, i1, static_cast<float>(src - static_cast<double>(i0))};
  }
  return t;
}

}  // namespace

Tensor<float> resize_bilinear(const Tensor<float>& img, std::size_t out_h, std::size_t out_w) {
  const Shape& s = img.shape();
  if (s.h == 0 || s.w == 0 || out_h == 0 || out_w == 0) {
    throw DimensionError("resize_bilinear: sizes must be >= 1");
  }
  if (s.h == out_h && s.w == out_w) return img;
  const auto ty = taps(s.h, out_h);
  const auto tx = taps(s.w, out_w);
  // Horizontal pass then vertical pass.
  Tensor<float> mid(Shape{s.n, s.h, out_w, s.c});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        const Tap& t = tx[x];
        for (std::size_t ch = 0; ch < s.c; ++ch) {
          const float a = img.at(n, y, t.i0, ch);
          const float b = img.at(n, y, t.i1, ch);
          mid.at(n, y, x, ch) = a + t.w1 * (b - a);
        }
      }
  Tensor<float> out(Shape{s.n, out_h, out_w, s.c});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap& t = ty[y];
      for (std::size_t x = 0; x < out_w; ++x)
        for (std::size_t ch = 0; ch < s.c; ++ch) {
          const float a = mid.at(n, t.i0, x, ch);
          const float b = mid.at(n, t.i1, x, ch);
          out.at(n, y, x, ch) = a + t.w1 * (b - a);
        }
    }
  return out;
}

}  // namespace fdft
