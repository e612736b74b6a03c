#include "fdft/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace fdft {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) +
         "," + std::to_string(c) + ")";
}

void require_dim(const char* op, const char* axis, std::size_t got, std::size_t want) {
  if (got != want) {
    throw DimensionError(std::string(op) + ": axis '" + axis + "' has size " +
                         std::to_string(got) + ", expected " + std::to_string(want));
  }
}

void require_shape(const char* op, const Shape& got, const Shape& want) {
  require_dim(op, "n", got.n, want.n);
  require_dim(op, "h", got.h, want.h);
  require_dim(op, "w", got.w, want.w);
  require_dim(op, "c", got.c, want.c);
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw DimensionError("Tensor: data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_.str());
  }
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
  return Tensor(*this).reshaped(shape);
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
  if (shape.numel() != shape_.numel()) {
    throw DimensionError("reshape: " + shape_.str() + " -> " + shape.str() +
                         " changes the element count");
  }
  shape_ = shape;
  return std::move(*this);
}

template <class T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <class T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace fdft
