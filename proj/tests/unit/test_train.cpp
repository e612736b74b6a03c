#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <numbers>
#include <random>

#include "doctest.h"
#include "fdft/train.hpp"

using namespace fdft;

namespace {

// 1x1 conv -> ReLU -> GAP -> dense: small enough to train in milliseconds.
class TinyNet final : public Network<float> {
 public:
  explicit TinyNet(std::uint64_t seed) {
    conv_ = Conv1x1Layer<float>::create(store_, "conv", 3, 4, true);
    head_ = DenseLayer<float>::create(store_, "head", 4, 1);
    std::mt19937_64 rng(seed);
    he_uniform_init(store_, rng);
  }
  Tape<float>::Var forward(Tape<float>& tape, Tape<float>::Var x, Mode) const override {
    return head_.forward(tape, ops::global_avg_pool(tape, ops::relu(tape, conv_.forward(tape, x))));
  }
  ParamStore<float>& params() override { return store_; }
  const ParamStore<float>& params() const override { return store_; }

 private:
  ParamStore<float> store_;
  Conv1x1Layer<float> conv_;
  DenseLayer<float> head_;
};

LabeledDataset tiny_data(std::size_t per_class, std::uint64_t seed) {
  SyntheticTaskConfig cfg;
  cfg.n_per_class = per_class;
  cfg.seed = seed;
  cfg.image_size = 16;
  cfg.artifact_amplitude = 0.5;
  return generate_synthetic(cfg, std::nullopt);
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig c;
  c.lr0 = 0.05;
  c.batch_size = 8;
  c.max_epochs = epochs;
  c.patience = epochs;
  c.seed = 5;
  return c;
}

double brute_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return num / pairs;
}

}  // namespace

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 60, 0.3) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(cosine_lr(60, 60, 0.3) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(std::abs(cosine_lr(60, 60, 0.3)) <= 1e-16);
  CHECK(cosine_lr(30, 60, 0.3) == doctest::Approx(0.15).epsilon(1e-15));
  for (std::size_t e = 1; e <= 300; ++e) CHECK(cosine_lr(e, 300, 0.3) <= cosine_lr(e - 1, 300, 0.3));
}

TEST_CASE("SGD with momentum") {
  std::vector<double> p{1.0}, g{1.0}, v{0.0};
  sgd_momentum_step<double>(p, g, v, 0.1, 0.9);
  sgd_momentum_step<double>(p, g, v, 0.1, 0.9);
  CHECK(p[0] == doctest::Approx(0.71).epsilon(1e-15));

  std::vector<double> q{2.0, -1.0}, gq{0.5, -0.25}, vq{0.0, 0.0};
  sgd_momentum_step<double>(q, gq, vq, 0.2, 0.0);
  CHECK(q[0] == doctest::Approx(1.9));
  CHECK(q[1] == doctest::Approx(-0.95));

  std::vector<double> r{3.0}, zero{0.0}, vr{0.0};
  sgd_momentum_step<double>(r, zero, vr, 0.3, 0.9);
  sgd_momentum_step<double>(r, zero, vr, 0.3, 0.9);
  CHECK(r[0] == 3.0);

  std::vector<double> wrong{0.0, 0.0};
  CHECK_THROWS_AS(sgd_momentum_step<double>(p, wrong, v, 0.1, 0.9), DimensionError);

  ParamStore<double> s;
  auto& a = s.add("a", {1}, 1.0);
  auto& frozen = s.add("b", {1}, 1.0);
  frozen.trainable = false;
  auto& state = s.add("c", {1}, 1.0, ParamKind::State);
  SgdMomentum<double> opt(s, 0.9);
  a.grad[0] = frozen.grad[0] = state.grad[0] = 1.0;
  opt.step(0.1);
  CHECK(a.value[0] == doctest::Approx(0.9));
  CHECK(frozen.value[0] == 1.0);
  CHECK(state.value[0] == 1.0);
}

TEST_CASE("binary cross-entropy") {
  const std::vector<double> zero{0.0, 0.0, 0.0};
  const std::vector<int> y{0, 1, 1};
  CHECK(bce_loss(zero, y) == doctest::Approx(std::numbers::ln2).epsilon(1e-12));

  const std::vector<double> confident{-50.0, 50.0, 50.0};
  const double floor = bce_loss(confident, y);
  CHECK(floor <= 1.7e-6);
  CHECK(floor == doctest::Approx(-std::log(1.0 - 1e-7)).epsilon(1e-6));

  const std::vector<double> wrong{50.0, -50.0, -50.0};
  CHECK(bce_loss(wrong, y) == doctest::Approx(-std::log(1e-7)).epsilon(1e-6));

  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(0.0, 2.0);
  std::vector<double> logits(20);
  std::vector<int> labels(20);
  for (std::size_t i = 0; i < 20; ++i) {
    logits[i] = d(rng);
    labels[i] = static_cast<int>(i % 2);
  }
  const double base = bce_loss(logits, labels);
  std::vector<std::size_t> perm(20);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> pl(20);
  std::vector<int> py(20);
  for (std::size_t i = 0; i < 20; ++i) {
    pl[i] = logits[perm[i]];
    py[i] = labels[perm[i]];
  }
  CHECK(bce_loss(pl, py) == doctest::Approx(base).epsilon(1e-14));

  Tape<double> tape;
  Tensor<double> z({20, 1, 1, 1}, logits);
  auto loss = ops::bce_with_logits(tape, tape.constant(z), labels);
  CHECK(tape.value(loss)[0] == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("AUROC examples and brute-force agreement") {
  const std::vector<double> s{0.1, 0.4, 0.3, 0.9};
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(auroc(s, y) == 0.75);
  const std::vector<double> sep{0.1, 0.2, 0.8, 0.9};
  CHECK(auroc(sep, y) == 1.0);
  const std::vector<double> tie{0.5, 0.5, 0.5, 0.5};
  CHECK(auroc(tie, y) == 0.5);
  const std::vector<int> one{1, 1, 1, 1};
  CHECK_THROWS_AS(auroc(s, one), MetricError);

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 60;
    std::vector<double> sc(n);
    std::vector<int> lb(n);
    for (std::size_t i = 0; i < n; ++i) {
      sc[i] = static_cast<double>(rng() % 7) / 7.0;  // plenty of ties
      lb[i] = static_cast<int>(rng() % 2);
    }
    lb[0] = 0;
    lb[1] = 1;
    CHECK(std::abs(auroc(sc, lb) - brute_auroc(sc, lb)) <= 1e-12);
  }

  CHECK(accuracy(sep, y) == 1.0);
  CHECK(accuracy(tie, y) == 0.5);  // 0.5 counts as fake
}

TEST_CASE("evaluation of a neutral model") {
  auto data = tiny_data(10, 3);
  TinyNet net(1);
  for (auto& p : net.params())
    if (p.name.starts_with("head.")) p.value.fill(0.0f);
  const Metrics m = evaluate(net, data);
  REQUIRE(m.auroc.has_value());
  CHECK(*m.auroc == 0.5);
  CHECK(m.acc == 0.5);
  CHECK(m.loss == doctest::Approx(std::numbers::ln2).epsilon(1e-6));

  TinyNet trained(2);
  const Metrics a = evaluate(trained, data);
  const Metrics b = evaluate(trained, data);
  CHECK(a.acc == b.acc);
  CHECK(*a.auroc == *b.auroc);
  CHECK(a.loss == b.loss);

  const auto logits = predict_logits(trained, data);
  std::vector<int> labels;
  for (const auto& it : data.items) labels.push_back(it.label);
  CHECK(std::abs(*a.auroc - brute_auroc(logits, labels)) <= 1e-12);
  double correct = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) correct += ((logits[i] >= 0.0) == (labels[i] == 1));
  CHECK(a.acc == doctest::Approx(correct / static_cast<double>(logits.size())));

  LabeledDataset reals;
  for (const auto& it : data.items)
    if (it.label == kReal) reals.items.push_back(it);
  const Metrics single = evaluate(trained, reals);
  CHECK_FALSE(single.auroc.has_value());
}

TEST_CASE("training history follows the schedule and is reproducible") {
  auto train = tiny_data(12, 4);
  auto val = tiny_data(6, 5);
  const auto dir = std::filesystem::temp_directory_path() / "fdft_test_train";
  std::filesystem::create_directories(dir);

  TrainConfig cfg = quick(6);
  cfg.history_csv = dir / "a.csv";
  TinyNet a(7);
  std::vector<std::size_t> seen;
  const TrainResult ra = train_loop<float>(a, train, val, cfg, [&](const EpochRecord& r) { seen.push_back(r.epoch); });
  cfg.history_csv = dir / "b.csv";
  TinyNet b(7);
  const TrainResult rb = train_loop<float>(b, train, val, cfg);

  REQUIRE(ra.history.size() == 6);
  CHECK(seen == std::vector<std::size_t>{1, 2, 3, 4, 5, 6});
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    CHECK(ra.history[i].epoch == i + 1);
    CHECK(ra.history[i].lr == cosine_lr(i, 6, cfg.lr0));
    CHECK(ra.history[i].train_loss == rb.history[i].train_loss);
    CHECK(ra.history[i].val_loss == rb.history[i].val_loss);
  }
  CHECK(snapshot(a.params()) == snapshot(b.params()));

  std::ifstream ca(dir / "a.csv"), cb(dir / "b.csv");
  std::string la((std::istreambuf_iterator<char>(ca)), {}), lb((std::istreambuf_iterator<char>(cb)), {});
  CHECK(la == lb);
  CHECK(la.starts_with("epoch,lr,train_loss,val_loss,val_acc,val_auroc\n"));
  CHECK(std::count(la.begin(), la.end(), '\n') == 7);

  // The returned weights are those of the best epoch.
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : ra.history) best = std::min(best, r.val_loss);
  CHECK(ra.best_val_loss == best);
  CHECK(evaluate(a, val).loss == doctest::Approx(best).epsilon(1e-12));

  TrainConfig other = quick(6);
  other.seed = 6;
  TinyNet c(7);
  const TrainResult rc = train_loop<float>(c, train, val, other);
  CHECK(rc.history[0].train_loss != ra.history[0].train_loss);
}

TEST_CASE("early stopping after patience epochs without improvement") {
  auto train = tiny_data(8, 6);
  auto val = tiny_data(4, 7);
  TrainConfig cfg = quick(40);
  cfg.lr0 = 1e-12;  // the validation loss cannot move by min_delta
  cfg.patience = 3;
  TinyNet net(8);
  const TrainResult r = train_loop<float>(net, train, val, cfg);
  CHECK(r.early_stopped);
  CHECK(r.best_epoch == 1);
  CHECK(r.history.size() == r.best_epoch + cfg.patience);
  CHECK(r.history.back().epoch == 4);

  cfg.patience = 100;
  TinyNet full(8);
  CHECK_FALSE(train_loop<float>(full, train, val, cfg).early_stopped);
}

TEST_CASE("divergence names the offending parameter") {
  auto train = tiny_data(4, 8);
  auto val = tiny_data(2, 9);
  TinyNet net(9);
  net.params().at("conv.w").value[2] = std::numeric_limits<float>::quiet_NaN();
  try {
    train_loop<float>(net, train, val, quick(2));
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("conv.w") != std::string::npos);
  }
}

TEST_CASE("configuration validation and profiles") {
  TrainConfig bad;
  bad.lr0 = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.patience = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  const auto desk = TrainConfig::profile("desk");
  CHECK(desk.batch_size == 32);
  CHECK(desk.max_epochs == 60);
  const auto paper = TrainConfig::profile("paper");
  CHECK(paper.batch_size == 128);
  CHECK(paper.max_epochs == 300);
  CHECK(paper.lr0 == 0.3);
  CHECK(paper.momentum == 0.9);
  CHECK(paper.patience == 20);
  CHECK_THROWS_AS(TrainConfig::profile("huge"), ConfigError);
}
