#include <cmath>
#include <random>

#include "../support/helpers.hpp"
#include "doctest.h"
#include "fdft/kernels.hpp"
#include "fdft/layers.hpp"

using namespace fdft;
using fdft::testing::param_from;
using fdft::testing::random_tensor;
using fdft::testing::tensor_of;

TEST_CASE("forward of simple graphs") {
  Tape<double> tape;
  auto y = ops::sigmoid(tape, tape.constant(Tensor<double>({1, 1, 1, 1})));
  CHECK(tape.value(y)[0] == 0.5);

  std::mt19937_64 rng(1);
  ParamStore<double> s;
  auto conv = Conv1x1Layer<double>::create(s, "c", 3, 4, false);
  conv.w->value = random_tensor<double>(conv.w->value.shape(), rng);
  Tape<double> t2;
  auto z = ops::relu(t2, conv.forward(t2, t2.constant(Tensor<double>({2, 3, 3, 3}))));
  for (double v : t2.value(z).data()) CHECK(v == 0.0);
}

TEST_CASE("square has gradient 2x and shared uses accumulate") {
  ParamStore<double> s;
  auto& x = s.add("x", {1}, 3.0);
  Tape<double> tape;
  auto v = tape.param(x);
  tape.backward(ops::mul(tape, v, v));
  CHECK(x.grad[0] == doctest::Approx(6.0));
  CHECK(x.grad.shape() == x.value.shape());
}

TEST_CASE("h_swish gradient on the interior branch") {
  ParamStore<double> s;
  auto& x = s.add("x", {1}, 1.0);
  Tape<double> tape;
  tape.backward(ops::h_swish(tape, tape.param(x)));
  CHECK(x.grad[0] == doctest::Approx(5.0 / 6.0));
}

TEST_CASE("h_swish at the breakpoints uses the interior one-sided slope") {
  const double e = 1e-7;
  for (double b : {-3.0, 3.0}) {
    // The function itself is continuous.
    CHECK(kernels::h_swish(b - e) == doctest::Approx(kernels::h_swish(b)).epsilon(1e-6));
    CHECK(kernels::h_swish(b + e) == doctest::Approx(kernels::h_swish(b)).epsilon(1e-6));
    const double left = (kernels::h_swish(b) - kernels::h_swish(b - e)) / e;
    const double right = (kernels::h_swish(b + e) - kernels::h_swish(b)) / e;
    const double interior = b > 0 ? left : right;
    CHECK(kernels::h_swish_grad(b) == doctest::Approx(interior).epsilon(1e-5));
  }
  CHECK(kernels::h_swish_grad(3.0) == doctest::Approx(1.5));
  CHECK(kernels::h_swish_grad(-3.0) == doctest::Approx(-0.5));
}

TEST_CASE("frozen parameters receive no gradient") {
  std::mt19937_64 rng(2);
  ParamStore<double> s;
  auto dense = DenseLayer<double>::create(s, "d", 4, 2);
  fdft::testing::fill_params(s, rng, -1.0, 1.0);
  s.set_trainable("d.", false);
  CHECK(s.trainable_numel() == 0);
  Tape<double> tape;
  auto x = tape.constant(random_tensor<double>({3, 1, 1, 4}, rng));
  auto y = dense.forward(tape, x);
  CHECK_FALSE(tape.requires_grad(y));
  tape.backward(ops::weighted_sum(tape, y, Tensor<double>(tape.value(y).shape(), 1.0)));
  for (const auto& p : s)
    for (double g : p.grad.data()) CHECK(g == 0.0);
}

TEST_CASE("backward misuse raises a state error") {
  Tape<double> tape;
  CHECK_THROWS_AS(tape.backward(Tape<double>::Var{3}), StateError);
  ParamStore<double> s;
  auto& x = s.add("x", {1}, 2.0);
  auto v = tape.param(x);
  auto y = ops::mul(tape, v, v);
  tape.backward(y);
  CHECK_THROWS_AS(tape.backward(y), StateError);
  CHECK_THROWS_AS(tape.constant(Tensor<double>({1, 1, 1, 1})), StateError);
}

TEST_CASE("finite-difference oracle") {
  std::mt19937_64 rng(3);
  ParamStore<double> s;
  auto dense = DenseLayer<double>::create(s, "d", 5, 3);
  fdft::testing::fill_params(s, rng, -1.0, 1.0);
  const auto x = random_tensor<double>({4, 1, 1, 5}, rng);
  auto r = finite_diff_check(s, [&](Tape<double>& t) { return dense.forward(t, t.constant(x)); });
  CHECK(r.coords_checked == 18);
  CHECK(r.max_rel_error <= 1e-6);

  ParamStore<double> empty;
  auto r0 = finite_diff_check(empty, [&](Tape<double>& t) { return ops::relu(t, t.constant(x)); });
  CHECK(r0.max_rel_error == 0.0);
  CHECK(r0.coords_checked == 0);
}

TEST_CASE("batch gradient is the sum of per-example gradients") {
  std::mt19937_64 rng(4);
  ParamStore<double> s;
  auto conv = Conv1x1Layer<double>::create(s, "c", 3, 6, true);
  auto dw = DepthwiseLayer<double>::create(s, "dw", 6, 1);
  auto head = DenseLayer<double>::create(s, "h", 6, 1);
  fdft::testing::fill_params(s, rng, -1.0, 1.0);
  const auto a = random_tensor<double>({1, 4, 4, 3}, rng);
  const auto b = random_tensor<double>({1, 4, 4, 3}, rng);
  Tensor<double> both({2, 4, 4, 3});
  std::copy(a.data().begin(), a.data().end(), both.ptr());
  std::copy(b.data().begin(), b.data().end(), both.ptr() + a.size());

  auto grads_for = [&](const Tensor<double>& input) {
    s.zero_grad();
    Tape<double> t;
    auto y = head.forward(t, ops::global_avg_pool(t, ops::h_swish(t, dw.forward(t, conv.forward(t, t.constant(input))))));
    t.backward(ops::weighted_sum(t, y, Tensor<double>(t.value(y).shape(), 1.0)));
    std::vector<Tensor<double>> out;
    for (const auto& p : s) out.push_back(p.grad);
    return out;
  };
  auto ga = grads_for(a);
  auto gb = grads_for(b);
  auto gab = grads_for(both);
  for (std::size_t k = 0; k < gab.size(); ++k)
    for (std::size_t i = 0; i < gab[k].size(); ++i) CHECK(gab[k][i] == doctest::Approx(ga[k][i] + gb[k][i]).epsilon(1e-12));
}

TEST_CASE("duplicate parameter names are rejected") {
  ParamStore<float> s;
  s.add("a", {2});
  CHECK_THROWS_AS(s.add("a", {2}), ConfigError);
}
