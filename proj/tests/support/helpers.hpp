#pragma once

#include <random>
#include <string>
#include <vector>

#include "fdft/autograd.hpp"

namespace fdft::testing {

template <class T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(d(rng));
  return t;
}

/// Registers a parameter holding `value`, with logical dims taken from its shape.
template <class T>
Parameter<T>& param_from(ParamStore<T>& store, const std::string& name, const Tensor<T>& value) {
  const Shape& s = value.shape();
  auto& p = store.add(name, {s.n, s.h, s.w, s.c});
  p.value = value;
  return p;
}

template <class T>
Tensor<T> tensor_of(Shape s, std::vector<T> values) {
  return Tensor<T>(s, std::move(values));
}

template <class T>
void fill_params(ParamStore<T>& store, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& p : store) {
    if (p.kind != ParamKind::Weight) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<T>(d(rng));
  }
}

}  // namespace fdft::testing
