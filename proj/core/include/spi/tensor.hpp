#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace spi {

// Extents in (batch, channels, height, width) order. Lower-rank tensors
// leave the leading extents at 1.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  [[nodiscard]] constexpr std::size_t size() const noexcept { return n * c * h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& shape);

// Cache-line aligned storage.
template <typename T, std::size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{Align})); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{Align}); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U, Align>&) noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

// Dense row-major NCHW storage. `float` for training and inference,
// `double` for gradient checks.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  // Throws ShapeError if data.size() != shape.size().
  BasicTensor(Shape shape, std::vector<T> data);

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] std::span<T> values() noexcept { return data_; }
  [[nodiscard]] std::span<const T> values() const noexcept { return data_; }
  [[nodiscard]] T* data() noexcept { return data_.data(); }
  [[nodiscard]] const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  [[nodiscard]] std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept { return data_[offset(n, c, h, w)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[offset(n, c, h, w)];
  }

  // View of one batch item as a contiguous c*h*w block.
  [[nodiscard]] std::span<T> item(std::size_t n) noexcept {
    const std::size_t stride = shape_.c * shape_.h * shape_.w;
    return std::span<T>(data_).subspan(n * stride, stride);
  }
  [[nodiscard]] std::span<const T> item(std::size_t n) const noexcept {
    const std::size_t stride = shape_.c * shape_.h * shape_.w;
    return std::span<const T>(data_).subspan(n * stride, stride);
  }

  void fill(T value);
  [[nodiscard]] bool all_finite() const noexcept;

  template <typename U>
  [[nodiscard]] BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_{0, 0, 0, 0};
  AlignedVector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace spi
