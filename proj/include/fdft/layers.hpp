#pragma once

// Parameter-owning layer handles. A layer registers its parameters in a
// ParamStore under a name prefix and keeps non-owning pointers to them.

#include <random>
#include <string>

#include "fdft/autograd.hpp"

namespace fdft {

struct BatchNormConfig {
  double eps = 1e-3;
  double momentum = 0.99;
};

template <class T>
struct Conv1x1Layer {
  Parameter<T>* w = nullptr;
  Parameter<T>* b = nullptr;  // null for bias-free layers
  std::size_t stride = 1;

  static Conv1x1Layer create(ParamStore<T>& store, const std::string& prefix, std::size_t c_in,
                             std::size_t c_out, bool bias, std::size_t stride = 1);
  typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var x) const;

  static constexpr std::size_t count(std::size_t c_in, std::size_t c_out, bool bias) {
    return c_in * c_out + (bias ? c_out : 0);
  }
};

/// Depthwise 3x3 (carrying the stride) then a bias-free pointwise conv.
template <class T>
struct SeparableConvLayer {
  Parameter<T>* dw = nullptr;
  Parameter<T>* pw = nullptr;
  std::size_t stride = 1;

  static SeparableConvLayer create(ParamStore<T>& store, const std::string& prefix,
                                   std::size_t c_in, std::size_t c_out, std::size_t stride);
  typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var x) const;

  static constexpr std::size_t count(std::size_t c_in, std::size_t c_out) {
    return 9 * c_in + c_in * c_out;
  }
};

/// Bias-free depthwise 3x3 on its own.
template <class T>
struct DepthwiseLayer {
  Parameter<T>* k = nullptr;
  std::size_t stride = 1;

  static DepthwiseLayer create(ParamStore<T>& store, const std::string& prefix, std::size_t c,
                               std::size_t stride);
  typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var x) const;

  static constexpr std::size_t count(std::size_t c) { return 9 * c; }
};

/// Batch normalization. A layer whose gamma is frozen always runs on its
/// moving statistics, regardless of the requested mode.
template <class T>
struct BatchNormLayer {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  Parameter<T>* moving_mean = nullptr;
  Parameter<T>* moving_var = nullptr;
  BatchNormConfig cfg;

  static BatchNormLayer create(ParamStore<T>& store, const std::string& prefix, std::size_t c,
                               BatchNormConfig cfg);
  typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var x, Mode mode) const;

  /// gamma, beta, moving mean and moving variance.
  static constexpr std::size_t count(std::size_t c) { return 4 * c; }
};

template <class T>
struct DenseLayer {
  Parameter<T>* w = nullptr;
  Parameter<T>* b = nullptr;

  static DenseLayer create(ParamStore<T>& store, const std::string& prefix, std::size_t c_in,
                           std::size_t c_out);
  typename Tape<T>::Var forward(Tape<T>& tape, typename Tape<T>::Var x) const;

  static constexpr std::size_t count(std::size_t c_in, std::size_t c_out) {
    return c_in * c_out + c_out;
  }
};

/// He-uniform fan-in initialization of every Weight registered with a fan-in
/// (conv kernels and dense matrices), in registration order. Names starting
/// with any entry of `skip` are left untouched.
template <class T>
void he_uniform_init(ParamStore<T>& store, std::mt19937_64& rng,
                     const std::vector<std::string>& skip = {});

/// One row of a parameter-count breakdown.
struct ParamRow {
  std::string input;      // e.g. "64x64x3"
  std::string operation;  // e.g. "3x3 DConv"
  std::size_t count = 0;
  std::size_t out_dim = 0;
  std::string stride;     // "1", "2" or "-"
};

struct ParamBreakdown {
  std::vector<ParamRow> rows;
  std::size_t total() const;
};

}  // namespace fdft
