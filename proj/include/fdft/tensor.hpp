#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fdft/error.hpp"

namespace fdft {

/// Channels-last rank-4 shape (batch, height, width, channels).
struct Shape {
  std::size_t n = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;

  constexpr std::size_t numel() const noexcept { return n * h * w * c; }
  /// Number of spatial positions per batch element.
  constexpr std::size_t positions() const noexcept { return h * w; }

  constexpr std::size_t index(std::size_t in, std::size_t ih, std::size_t iw,
                              std::size_t ic) const noexcept {
    return ((in * h + ih) * w + iw) * c + ic;
  }

  /// Inverse of index().
  constexpr std::array<std::size_t, 4> coords(std::size_t flat) const noexcept {
    const std::size_t ic = flat % c;
    flat /= c;
    const std::size_t iw = flat % w;
    flat /= w;
    const std::size_t ih = flat % h;
    return {flat / h, ih, iw, ic};
  }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const;
};

/// Spatial size produced by a same-padded window op with the given stride.
constexpr std::size_t same_out(std::size_t in, std::size_t stride) noexcept {
  return (in + stride - 1) / stride;
}

/// Dense channels-last tensor owning contiguous row-major storage.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
    return data_[shape_.index(n, h, w, c)];
  }
  const T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return data_[shape_.index(n, h, w, c)];
  }

  /// Reinterprets the same storage under a shape with equal element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(T value);
  bool all_finite() const noexcept;

  /// Element-type conversion.
  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

/// Throws DimensionError naming `axis` when `got != want`.
void require_dim(const char* op, const char* axis, std::size_t got, std::size_t want);
void require_shape(const char* op, const Shape& got, const Shape& want);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace fdft
