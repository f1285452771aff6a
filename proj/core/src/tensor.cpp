#include "spi/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "spi/errors.hpp"

namespace spi {

std::string to_string(const Shape& shape) {
  return "(" + std::to_string(shape.n) + "," + std::to_string(shape.c) + "," + std::to_string(shape.h) + "," +
         std::to_string(shape.w) + ")";
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(shape), data_(shape.size(), fill) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(data.begin(), data.end()) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(shape_));
  }
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool BasicTensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace spi
