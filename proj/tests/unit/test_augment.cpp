#include <cmath>
#include <random>

#include "../support/helpers.hpp"
#include "doctest.h"
#include "fdft/augment.hpp"

using namespace fdft;
using fdft::testing::random_tensor;

namespace {

float& px(Tensor<float>& t, std::size_t y, std::size_t x, std::size_t ch = 0) {
  const Shape& s = t.shape();
  return t[(y * s.w + x) * s.c + ch];
}

ImageU8 random_image(std::size_t h, std::size_t w, Rng& rng) {
  ImageU8 img(h, w);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(d(rng));
  return img;
}

// Point-symmetric about the image center: value(y, x) == value(h-1-y, w-1-x).
Tensor<float> point_symmetric(std::size_t n, Rng& rng) {
  auto t = random_tensor<float>({1, n, n, 3}, rng, 0.0, 1.0);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch) px(t, n - 1 - y, n - 1 - x, ch) = px(t, y, x, ch);
  return t;
}

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace

TEST_CASE("cutout with zero iterations leaves the image alone") {
  Rng rng(1);
  auto img = random_tensor<float>({1, 64, 64, 3}, rng, 0.0, 1.0);
  CutoutConfig cfg;
  cfg.alpha = 0;
  CHECK(cutout(img, cfg, rng) == img);
}

TEST_CASE("cutout zeroes exactly the sampled squares and respects the area bound") {
  Rng rng(2);
  const Tensor<float> ones({1, 64, 64, 3}, 1.0f);
  const CutoutConfig cfg;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<MaskRect> masks;
    auto out = cutout(ones, cfg, rng, &masks);
    REQUIRE(masks.size() == 3);
    std::size_t zeros = 0;
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        bool inside = false;
        for (const auto& m : masks) inside |= y >= m.y0 && y < m.y1 && x >= m.x0 && x < m.x1;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const float v = out[(y * 64 + x) * 3 + ch];
          CHECK(v == (inside ? 0.0f : 1.0f));
        }
        zeros += inside;
      }
    for (const auto& m : masks) {
      CHECK(m.y1 - m.y0 <= 20);
      CHECK(m.x1 - m.x0 <= 20);
      CHECK(m.y1 <= 64);
      CHECK(m.x1 <= 64);
    }
    CHECK(static_cast<double>(zeros) / (64.0 * 64.0) <= 3.0 * 400.0 / 4096.0);
  }
}

TEST_CASE("fixed-size cutout always uses the largest multiplier") {
  Rng rng(3);
  CutoutConfig cfg;
  cfg.fixed_size = true;
  const Tensor<float> ones({1, 64, 64, 1}, 1.0f);
  bool saw_full = false;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<MaskRect> masks;
    cutout(ones, cfg, rng, &masks);
    for (const auto& m : masks) {
      CHECK(m.y1 - m.y0 <= 20);
      saw_full |= (m.y1 - m.y0 == 20 && m.x1 - m.x0 == 20);
    }
  }
  CHECK(saw_full);
  CutoutConfig bad;
  bad.beta = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = CutoutConfig{};
  bad.base_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("translation with nearest padding") {
  Rng rng(4);
  auto img = random_tensor<float>({1, 32, 32, 3}, rng, 0.0, 1.0);
  CHECK(translate(img, 0, 0) == img);

  const Tensor<float> flat({1, 32, 32, 3}, 0.25f);
  for (int dx = -2; dx <= 2; ++dx)
    for (int dy = -2; dy <= 2; ++dy) CHECK(translate(flat, dx, dy) == flat);

  Tensor<float> dot({1, 32, 32, 1});
  px(dot, 10, 10) = 1.0f;
  auto moved = translate(dot, 2, 0);
  CHECK(px(moved, 10, 12) == 1.0f);
  float total = 0.0f;
  for (float v : moved.data()) total += v;
  CHECK(total == 1.0f);

  // Vacated columns copy the nearest edge.
  auto shifted = translate(img, 2, 0);
  for (std::size_t y = 0; y < 32; ++y) {
    CHECK(px(shifted, y, 0) == px(img, y, 0));
    CHECK(px(shifted, y, 1) == px(img, y, 0));
    CHECK(px(shifted, y, 2) == px(img, y, 0));
  }
  for (int i = 0; i < 20; ++i) CHECK(random_translate(flat, 2, rng) == flat);
}

TEST_CASE("zoom and rotation") {
  Rng rng(5);
  auto img = random_tensor<float>({1, 64, 64, 3}, rng, 0.0, 1.0);
  CHECK(max_abs_diff(zoom_rotate(img, 0.0, 0.0), img) <= 1e-6);

  const Tensor<float> flat({1, 64, 64, 3}, 0.6f);
  CHECK(max_abs_diff(zoom_rotate(flat, 0.15, -0.1), flat) <= 1e-6);
  for (int i = 0; i < 10; ++i) CHECK(max_abs_diff(random_zoom_rotate(flat, 0.2, 0.2, rng), flat) <= 1e-6);

  // Rotation about the center commutes with the 180-degree turn, so a
  // point-symmetric image stays point-symmetric for either sign of theta.
  auto sym = point_symmetric(64, rng);
  for (double theta : {0.2, -0.2, 0.13, -0.05}) {
    auto out = zoom_rotate(sym, 0.0, theta);
    Tensor<float> turned(out.shape());
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x)
        for (std::size_t ch = 0; ch < 3; ++ch) px(turned, 63 - y, 63 - x, ch) = px(out, y, x, ch);
    CHECK(max_abs_diff(out, turned) <= 1e-3);
  }
}

TEST_CASE("flip and rescale") {
  Rng rng(6);
  auto img = random_tensor<float>({1, 16, 24, 3}, rng, 0.0, 1.0);
  CHECK(horizontal_flip(horizontal_flip(img)) == img);
  CHECK(horizontal_flip(img) != img);
  Tensor<float> mirror({1, 8, 8, 1});
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 4; ++x) px(mirror, y, x) = px(mirror, y, 7 - x) = float(y * 4 + x);
  CHECK(horizontal_flip(mirror) == mirror);

  ImageU8 u(1, 2, 1);
  u.data = {0, 255};
  auto r = rescale(u);
  CHECK(r[0] == 0.0f);
  CHECK(r[1] == 1.0f);
  auto full = random_image(8, 8, rng);
  auto e = eval_pipeline(full);
  for (std::size_t i = 0; i < full.data.size(); ++i) CHECK(e[i] == static_cast<float>(full.data[i]) / 255.0f);
}

TEST_CASE("training pipeline is deterministic and range preserving") {
  Rng src(7);
  const auto img = random_image(64, 64, src);
  const AugmentConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng a(seed), b(seed);
    auto x = train_pipeline(img, cfg, a);
    auto y = train_pipeline(img, cfg, b);
    CHECK(x == y);
    CHECK(x.shape() == Shape{1, 64, 64, 3});
    for (float v : x.data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  AugmentConfig off;
  off.translate_px = 0;
  off.zoom_range = 0.0;
  off.rotate_range = 0.0;
  off.horizontal_flip = false;
  off.cutout.alpha = 0;
  Rng r(8);
  CHECK(max_abs_diff(train_pipeline(img, off, r), rescale(img)) <= 1e-6);
}

TEST_CASE("stream seeds separate workers and samples") {
  CHECK(stream_seed(1, 2, 3) == stream_seed(1, 2, 3));
  CHECK(stream_seed(1, 2, 3) != stream_seed(1, 3, 2));
  CHECK(stream_seed(1, 2, 3) != stream_seed(2, 2, 3));
  CHECK(stream_seed(1, 0, 0) != stream_seed(1, 0, 1));
}
