#include <cmath>
#include <random>

#include "../support/helpers.hpp"
#include "doctest.h"
#include "fdft/mbblock.hpp"

using namespace fdft;
using fdft::testing::random_tensor;

namespace {

std::size_t row_count(const ParamBreakdown& b, const std::string& op, std::size_t nth = 0) {
  for (const auto& r : b.rows)
    if (r.operation == op && nth-- == 0) return r.count;
  return static_cast<std::size_t>(-1);
}

MBBlockConfig small_block(std::size_t stride = 1) {
  MBBlockConfig c;
  c.c_in = 8;
  c.expand = 16;
  c.se_reduce = 4;
  c.out = 8;
  c.stride = stride;
  return c;
}

}  // namespace

TEST_CASE("squeeze-excitation with zero weights halves the input") {
  std::mt19937_64 rng(1);
  ParamStore<double> s;
  auto se = SEBlock<double>::create(s, "se", 576, 144);
  auto u = random_tensor<double>({2, 3, 3, 576}, rng, -4.0, 4.0);
  auto [y, gate] = se_block_forward(u, se);
  for (double g : gate.data()) CHECK(g == 0.5);
  for (std::size_t i = 0; i < u.size(); ++i) CHECK(y[i] == u[i] / 2);
}

TEST_CASE("squeeze-excitation gate stays in [0,1] and never amplifies") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    ParamStore<float> s;
    auto se = SEBlock<float>::create(s, "se", 576, 144);
    fdft::testing::fill_params(s, rng, -3.0, 3.0);
    auto u = random_tensor<float>({1, 4, 4, 576}, rng, -10.0, 10.0);
    auto [y, gate] = se_block_forward(u, se);
    for (float g : gate.data()) {
      CHECK(g >= 0.0f);
      CHECK(g <= 1.0f);
    }
    for (std::size_t i = 0; i < u.size(); ++i) CHECK(std::abs(y[i]) <= std::abs(u[i]));
  }
  ParamStore<float> s;
  auto se = SEBlock<float>::create(s, "se", 576, 144);
  CHECK(s.total_numel() == 2 * 82944);
  Tape<float> tape;
  CHECK_THROWS_AS(se.forward(tape, tape.constant(Tensor<float>({1, 2, 2, 64}))), DimensionError);
}

TEST_CASE("block parameter counts") {
  const auto b = mbblock_param_count(MBBlockConfig{});
  CHECK(row_count(b, "1x1 Conv", 0) == 128 * 576);
  CHECK(row_count(b, "BN", 0) == 4 * 576);
  CHECK(row_count(b, "3x3 DConv") == 5184);
  CHECK(row_count(b, "1x1 Conv", 1) == 82944);
  CHECK(row_count(b, "1x1 Conv", 2) == 82944);
  CHECK(row_count(b, "1x1 Conv", 3) == 73728);
  CHECK(row_count(b, "BN", 2) == 512);
  CHECK(b.total() == 323648);

  ParamStore<float> s;
  MBBlockV3<float>::create(s, "blk", MBBlockConfig{}, BatchNormConfig{});
  CHECK(s.total_numel() == 323648);

  MBBlockConfig wide;
  wide.c_in = 256;
  CHECK(mbblock_param_count(wide).total() == 323648 + 128 * 576);
}

TEST_CASE("stride one keeps the shape and adds the residual") {
  std::mt19937_64 rng(3);
  ParamStore<float> s;
  auto blk = MBBlockV3<float>::create(s, "blk", MBBlockConfig{}, BatchNormConfig{});
  fdft::testing::fill_params(s, rng, -0.1, 0.1);
  CHECK(blk.config().has_residual());
  Tape<float> tape;
  auto y = blk.forward(tape, tape.constant(random_tensor<float>({1, 8, 8, 128}, rng)), Mode::Infer);
  CHECK(tape.value(y).shape() == Shape{1, 8, 8, 128});
  CHECK(row_count(mbblock_param_count(MBBlockConfig{}), "Add") == 0);
}

TEST_CASE("stride two halves the grid and skips the residual") {
  std::mt19937_64 rng(4);
  MBBlockConfig cfg;
  cfg.stride = 2;
  CHECK_FALSE(cfg.has_residual());
  ParamStore<float> s;
  auto blk = MBBlockV3<float>::create(s, "blk", cfg, BatchNormConfig{});
  Tape<float> tape;
  auto y = blk.forward(tape, tape.constant(random_tensor<float>({1, 8, 8, 128}, rng)), Mode::Infer);
  CHECK(tape.value(y).shape() == Shape{1, 4, 4, 128});
  // Zero projection and zero BN output: without a residual the result is zero.
  for (auto& p : s)
    if (p.kind == ParamKind::Weight) p.value.fill(0.0f);
  Tape<float> t2;
  auto z = blk.forward(t2, t2.constant(random_tensor<float>({1, 8, 8, 128}, rng)), Mode::Infer);
  for (float v : t2.value(z).data()) CHECK(v == 0.0f);
  CHECK(mbblock_param_count(cfg).rows.back().operation != "Add");

  cfg.residual = Residual::Always;
  ParamStore<float> s2;
  CHECK_THROWS_AS(MBBlockV3<float>::create(s2, "bad", cfg, BatchNormConfig{}), ConfigError);
}

TEST_CASE("all-zero parameters make the block an identity") {
  std::mt19937_64 rng(5);
  ParamStore<double> s;
  auto blk = MBBlockV3<double>::create(s, "blk", MBBlockConfig{}, BatchNormConfig{});
  for (auto& p : s)
    if (p.kind == ParamKind::Weight) p.value.fill(0.0);
  const auto x = random_tensor<double>({2, 8, 8, 128}, rng, -3.0, 3.0);
  Tape<double> tape;
  auto y = blk.forward(tape, tape.constant(x), Mode::Infer);
  CHECK(tape.value(y) == x);
}

TEST_CASE("reduced-width block gradient check") {
  std::mt19937_64 rng(6);
  ParamStore<double> s;
  auto blk = MBBlockV3<double>::create(s, "blk", small_block(), BatchNormConfig{});
  fdft::testing::fill_params(s, rng, -0.8, 0.8);
  auto& x = fdft::testing::param_from(s, "x", random_tensor<double>({2, 4, 4, 8}, rng));
  for (Mode mode : {Mode::Infer, Mode::Train}) {
    auto r = finite_diff_check(s, [&](Tape<double>& t) { return blk.forward(t, t.param(x), mode); });
    INFO(r.worst_coord << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric);
    CHECK(r.coords_checked == s.trainable_numel());
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("full-width block gradient check on sampled coordinates") {
  std::mt19937_64 rng(7);
  ParamStore<double> s;
  auto blk = MBBlockV3<double>::create(s, "blk", MBBlockConfig{}, BatchNormConfig{});
  he_uniform_init(s, rng);
  const auto x = random_tensor<double>({1, 4, 4, 128}, rng);
  GradCheckOptions opt;
  opt.max_coords = 200;
  opt.seed = 7;
  auto r = finite_diff_check(s, [&](Tape<double>& t) { return blk.forward(t, t.constant(x), Mode::Infer); }, opt);
  INFO(r.worst_coord << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric);
  CHECK(r.coords_checked == 200);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("chained stride-one blocks preserve the shape") {
  std::mt19937_64 rng(8);
  for (std::size_t n : {1u, 2u, 5u}) {
    ParamStore<float> s;
    std::vector<MBBlockV3<float>> blocks;
    for (std::size_t i = 0; i < n; ++i)
      blocks.push_back(MBBlockV3<float>::create(s, "b" + std::to_string(i), MBBlockConfig{}, BatchNormConfig{}));
    fdft::testing::fill_params(s, rng, -0.05, 0.05);
    Tape<float> tape;
    auto y = tape.constant(random_tensor<float>({1, 8, 8, 128}, rng));
    for (const auto& b : blocks) y = b.forward(tape, y, Mode::Infer);
    CHECK(tape.value(y).shape() == Shape{1, 8, 8, 128});
  }
}
