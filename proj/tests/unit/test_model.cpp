#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "../support/helpers.hpp"
#include "doctest.h"
#include "fdft/model.hpp"
#include "fdft/train.hpp"

using namespace fdft;
using fdft::testing::random_tensor;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "fdft_test_model";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.input_size = 16;
  c.backbone.widths = {4, 8};
  c.backbone.strides = {2, 2};
  c.ftt.b = 2;
  c.ftt.stage_widths = {4, 8, 16};
  c.ftt.out_width = 16;
  c.block.expand = 16;
  c.block.se_reduce = 4;
  c.block.out = 8;
  c.n_blocks = 2;
  c.zero_head = false;
  c.seed = 3;
  return c;
}

// One SGD step on a random batch with random targets.
template <class T>
void train_step(FDFtNetModel<T>& model, SgdMomentum<T>& opt, std::mt19937_64& rng) {
  const std::size_t s = model.config().input_size;
  auto x = random_tensor<T>({4, s, s, 3}, rng, 0.0, 1.0);
  const std::vector<int> y{0, 1, 0, 1};
  model.params().zero_grad();
  Tape<T> tape;
  auto logits = model.forward(tape, tape.constant(x), Mode::Train);
  tape.backward(ops::bce_with_logits(tape, logits, y));
  opt.step(0.1);
}

}  // namespace

TEST_CASE("default model trainable parameter count") {
  auto m = FDFtNetModel<float>::assemble(ModelConfig{});
  CHECK(m->backbone_frozen());
  CHECK(m->trainable_param_count() == 1410615);
  CHECK(model_param_count(ModelConfig{}).total() == 1410615);

  ModelConfig two;
  two.n_blocks = 2;
  CHECK(model_param_count(ModelConfig{}).total() - model_param_count(two).total() == 2 * 323648);
  auto m2 = FDFtNetModel<float>::assemble(two);
  CHECK(m->trainable_param_count() - m2->trainable_param_count() == 2 * 323648);

  ModelConfig bad;
  bad.n_blocks = 0;
  CHECK_THROWS_AS(FDFtNetModel<float>::assemble(bad), ConfigError);
  bad = ModelConfig{};
  bad.ftt = FTTConfig::with_stages(0);
  CHECK_THROWS_AS(FDFtNetModel<float>::assemble(bad), ConfigError);
}

TEST_CASE("initialization is deterministic in the seed") {
  ModelConfig c;
  c.seed = 11;
  auto a = FDFtNetModel<float>::assemble(c);
  auto b = FDFtNetModel<float>::assemble(c);
  c.seed = 12;
  auto other = FDFtNetModel<float>::assemble(c);
  CHECK(snapshot(a->params()) == snapshot(b->params()));
  CHECK(snapshot(a->params()) != snapshot(other->params()));
  for (const auto& p : a->params())
    if (p.name.ends_with(".gamma") && p.name.find(".attn.") != std::string::npos) CHECK(p.value[0] == 0.0f);
}

TEST_CASE("neutral start: zero head gives probability one half") {
  std::mt19937_64 rng(1);
  auto m = FDFtNetModel<float>::assemble(ModelConfig{});
  auto x = random_tensor<float>({3, 64, 64, 3}, rng, 0.0, 1.0);
  Tape<float> tape;
  auto y = m->forward(tape, tape.constant(x), Mode::Infer);
  CHECK(tape.value(y).shape() == Shape{3, 1, 1, 1});
  for (double p : m->predict_proba(x)) CHECK(p == 0.5);
  Tape<float> bad;
  CHECK_THROWS_AS(m->forward(bad, bad.constant(Tensor<float>({1, 32, 32, 3})), Mode::Infer), DimensionError);
}

TEST_CASE("a frozen backbone is bitwise unchanged by training") {
  std::mt19937_64 rng(2);
  auto m = FDFtNetModel<float>::assemble(tiny_config());
  const auto before = m->backbone_checksum();
  const auto head_before = params_checksum(m->params(), "head.");
  SgdMomentum<float> opt(m->params(), 0.9);
  for (int step = 0; step < 10; ++step) train_step(*m, opt, rng);
  CHECK(m->backbone_checksum() == before);
  CHECK(params_checksum(m->params(), "head.") != head_before);
  for (const auto& p : m->params())
    if (p.name.starts_with("backbone.")) CHECK_FALSE(p.trainable);
}

TEST_CASE("an unfrozen backbone receives gradients") {
  std::mt19937_64 rng(3);
  auto m = FDFtNetModel<double>::assemble(tiny_config());
  m->freeze_backbone(false);
  auto x = random_tensor<double>({4, 16, 16, 3}, rng, 0.0, 1.0);
  const std::vector<int> y{1, 0, 1, 0};
  m->params().zero_grad();
  Tape<double> tape;
  tape.backward(ops::bce_with_logits(tape, m->forward(tape, tape.constant(x), Mode::Train), y));
  double norm = 0.0;
  for (const auto& p : m->params())
    if (p.name.starts_with("backbone.") && p.kind == ParamKind::Weight)
      for (double g : p.grad.data()) norm += g * g;
  CHECK(norm > 0.0);
}

TEST_CASE("freezing is idempotent") {
  auto once = FDFtNetModel<float>::assemble(tiny_config());
  auto twice = FDFtNetModel<float>::assemble(tiny_config());
  once->freeze_backbone(true);
  twice->freeze_backbone(true);
  twice->freeze_backbone(true);
  CHECK(once->trainable_param_count() == twice->trainable_param_count());
  for (auto a = once->params().begin(), b = twice->params().begin(); a != once->params().end(); ++a, ++b)
    CHECK(a->trainable == b->trainable);
  twice->freeze_backbone(false);
  CHECK(twice->trainable_param_count() == once->trainable_param_count() + once->backbone_param_count());
}

TEST_CASE("save, load and save again is byte-identical") {
  std::mt19937_64 rng(4);
  auto m = FDFtNetModel<float>::assemble(tiny_config());
  SgdMomentum<float> opt(m->params(), 0.9);
  for (int step = 0; step < 3; ++step) train_step(*m, opt, rng);
  const auto first = temp_file("first.fdwt");
  const auto second = temp_file("second.fdwt");
  m->save(first);
  auto loaded = FDFtNetModel<float>::load(first);
  loaded->save(second);
  CHECK(slurp(first) == slurp(second));
  CHECK(snapshot(loaded->params()) == snapshot(m->params()));
  CHECK(loaded->backbone_frozen());
  auto x = random_tensor<float>({2, 16, 16, 3}, rng, 0.0, 1.0);
  CHECK(loaded->predict_proba(x) == m->predict_proba(x));
}

TEST_CASE("a corrupted payload byte is reported") {
  auto m = FDFtNetModel<float>::assemble(tiny_config());
  const auto path = temp_file("corrupt.fdwt");
  m->save(path);
  auto bytes = slurp(path);
  bytes[bytes.size() / 2] ^= 0x5a;
  std::vector<std::uint8_t> raw(bytes.begin(), bytes.end());
  CHECK_THROWS_AS(decode_weights(raw), FormatError);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(FDFtNetModel<float>::load(path), FormatError);
}

TEST_CASE("weights file names the attention gammas") {
  auto m = FDFtNetModel<float>::assemble(ModelConfig{});
  const WeightsFile f = m->to_weights();
  const NamedTensor* g = f.find("ftt.stage1.attn.gamma");
  REQUIRE(g != nullptr);
  CHECK(g->dims == std::vector<std::uint32_t>{1});
  CHECK(f.find("__config__") == nullptr);
  CHECK_FALSE(f.config_json.empty());
}

TEST_CASE("disabling the FTT branch removes its parameters") {
  ModelConfig c;
  c.use_ftt = false;
  auto m = FDFtNetModel<float>::assemble(c);
  CHECK(m->params().numel_with_prefix("ftt.") == 0);
  CHECK(m->trainable_param_count() == 1410615 - 115318);
  std::mt19937_64 rng(5);
  for (double p : m->predict_proba(random_tensor<float>({2, 64, 64, 3}, rng, 0.0, 1.0))) CHECK(p == 0.5);
}

TEST_CASE("pretraining classifier saves a backbone the model can load") {
  auto clf = BackboneClassifier<float>::create(tiny_config().backbone, BatchNormConfig{}, 9);
  const WeightsFile bb = clf->backbone_weights();
  CHECK(backbone_config(bb).widths == tiny_config().backbone.widths);
  auto m = FDFtNetModel<float>::assemble(tiny_config());
  m->load_backbone(bb);
  for (const auto& t : bb.tensors) {
    const auto& p = m->params().at(t.name);
    for (std::size_t i = 0; i < t.data.size(); ++i) CHECK(p.value[i] == t.data[i]);
  }
  auto other = tiny_config();
  other.backbone.widths = {4, 16};
  auto mismatch = FDFtNetModel<float>::assemble(other);
  CHECK_THROWS(mismatch->load_backbone(bb));
  CHECK_THROWS_AS(backbone_config(m->to_weights()), FormatError);
}

TEST_CASE("assembled model gradient check with a two-stage toy backbone") {
  std::mt19937_64 rng(6);
  auto m = FDFtNetModel<double>::assemble(tiny_config());
  m->freeze_backbone(false);
  he_uniform_init(m->params(), rng);
  // A small head keeps logits near zero, as early in fine-tuning.
  std::uniform_real_distribution<double> small(-0.01, 0.01);
  for (auto& p : m->params()) {
    if (p.name.ends_with("attn.gamma")) p.value[0] = 0.6;
    if (p.name.starts_with("head."))
      for (std::size_t i = 0; i < p.numel(); ++i) p.value[i] = small(rng);
  }
  const auto x = random_tensor<double>({2, 16, 16, 3}, rng, 0.0, 1.0);
  for (Mode mode : {Mode::Infer, Mode::Train}) {
    auto r = finite_diff_check(m->params(), [&](Tape<double>& t) { return m->forward(t, t.constant(x), mode); });
    INFO(r.worst_coord << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric);
    CHECK(r.coords_checked == m->params().trainable_numel());
    CHECK(r.max_rel_error <= 1e-4);
  }
}
