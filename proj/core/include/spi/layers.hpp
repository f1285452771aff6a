#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "spi/tensor.hpp"

namespace spi {

// Trainable parameters of one convolution. Weights are (out, in, k, k),
// bias is (out, 1, 1, 1); gradient and velocity buffers mirror those shapes.
template <typename T>
struct LayerParams {
  std::string name;
  BasicTensor<T> weights;
  BasicTensor<T> bias;
  BasicTensor<T> weight_grad;
  BasicTensor<T> bias_grad;
  BasicTensor<T> weight_velocity;
  BasicTensor<T> bias_velocity;

  LayerParams() = default;
  LayerParams(std::string layer_name, std::size_t out_channels, std::size_t in_channels, std::size_t kernel);

  [[nodiscard]] std::size_t out_channels() const noexcept { return weights.shape().n; }
  [[nodiscard]] std::size_t in_channels() const noexcept { return weights.shape().c; }
  [[nodiscard]] std::size_t kernel() const noexcept { return weights.shape().h; }

  void zero_grad();
  void zero_velocity();

  template <typename U>
  [[nodiscard]] LayerParams<U> cast() const {
    LayerParams<U> out;
    out.name = name;
    out.weights = weights.template cast<U>();
    out.bias = bias.template cast<U>();
    out.weight_grad = weight_grad.template cast<U>();
    out.bias_grad = bias_grad.template cast<U>();
    out.weight_velocity = weight_velocity.template cast<U>();
    out.bias_velocity = bias_velocity.template cast<U>();
    return out;
  }
};

// Output spatial extent of a convolution; throws ConfigError when < 1.
std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t pad);

// Cross-correlation (no kernel flip) with zero padding.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const LayerParams<T>& params, std::size_t stride, std::size_t pad);

// Accumulates weight/bias gradients into `params` and returns dL/d(input).
template <typename T>
BasicTensor<T> conv2d_backward(const BasicTensor<T>& input, LayerParams<T>& params, const BasicTensor<T>& output_grad,
                               std::size_t stride, std::size_t pad);

// 2x2 window, stride 2. Odd extents are padded bottom/right with -inf so the
// output is ceil(H/2) x ceil(W/2). Ties go to the first element in row-major
// order within the window.
template <typename T>
struct PoolResult {
  BasicTensor<T> output;
  std::vector<std::size_t> argmax;  // flat input offset per output element
  Shape input_shape;
};

template <typename T>
PoolResult<T> maxpool2d(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> maxpool2d_backward(const PoolResult<T>& forward, const BasicTensor<T>& output_grad);

inline constexpr double kLeakySlope = 0.1;

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& input, T slope = T(kLeakySlope));

template <typename T>
BasicTensor<T> leaky_relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& output_grad,
                                   T slope = T(kLeakySlope));

// Logistic function that never overflows: exp() is only taken of
// non-positive arguments.
double sigmoid(double x) noexcept;
float sigmoid(float x) noexcept;

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input);

}  // namespace spi
