#include "spi/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "spi/errors.hpp"

namespace spi {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutableMap = Eigen::Map<RowMatrix<T>>;

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, pad, out_h, out_w;

  [[nodiscard]] std::size_t patch_rows() const { return channels * kernel * kernel; }
  [[nodiscard]] std::size_t out_pixels() const { return out_h * out_w; }
  [[nodiscard]] bool is_pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

template <typename T>
ConvGeometry check_conv(const BasicTensor<T>& input, const LayerParams<T>& params, std::size_t stride,
                        std::size_t pad) {
  const Shape& in = input.shape();
  const Shape& ws = params.weights.shape();
  if (stride == 0) throw ConfigError("conv2d '" + params.name + "': stride must be positive");
  if (in.c != ws.c || ws.h != ws.w) {
    throw ShapeError("conv2d '" + params.name + "': input shape " + to_string(in) + " does not match weight shape " +
                     to_string(ws));
  }
  if (params.bias.size() != ws.n) {
    throw ShapeError("conv2d '" + params.name + "': bias shape " + to_string(params.bias.shape()) +
                     " does not match weight shape " + to_string(ws));
  }
  ConvGeometry g{in.c, in.h, in.w, ws.h, stride, pad, 0, 0};
  g.out_h = conv_output_extent(in.h, ws.h, stride, pad);
  g.out_w = conv_output_extent(in.w, ws.w, stride, pad);
  return g;
}

// Unfolds one image (c, h, w) into a (c*k*k) x (out_h*out_w) patch matrix.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const auto k = static_cast<std::ptrdiff_t>(g.kernel);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  const auto h = static_cast<std::ptrdiff_t>(g.height);
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = image + c * g.height * g.width;
    for (std::ptrdiff_t kh = 0; kh < k; ++kh) {
      for (std::ptrdiff_t kw = 0; kw < k; ++kw) {
        T* row = col + ((c * g.kernel + kh) * g.kernel + kw) * g.out_pixels();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride) + kh - pad;
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= h) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = plane + ih * w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride) + kw - pad;
            dst[ow] = (iw < 0 || iw >= w) ? T{0} : src[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_accumulate(const T* col, const ConvGeometry& g, T* image) {
  const auto k = static_cast<std::ptrdiff_t>(g.kernel);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  const auto h = static_cast<std::ptrdiff_t>(g.height);
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = image + c * g.height * g.width;
    for (std::ptrdiff_t kh = 0; kh < k; ++kh) {
      for (std::ptrdiff_t kw = 0; kw < k; ++kw) {
        const T* row = col + ((c * g.kernel + kh) * g.kernel + kw) * g.out_pixels();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride) + kh - pad;
          if (ih < 0 || ih >= h) continue;
          const T* src = row + oh * g.out_w;
          T* dst = plane + ih * w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride) + kw - pad;
            if (iw >= 0 && iw < w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
LayerParams<T>::LayerParams(std::string layer_name, std::size_t out_channels, std::size_t in_channels,
                            std::size_t kernel)
    : name(std::move(layer_name)),
      weights(Shape{out_channels, in_channels, kernel, kernel}),
      bias(Shape{out_channels, 1, 1, 1}),
      weight_grad(weights.shape()),
      bias_grad(bias.shape()),
      weight_velocity(weights.shape()),
      bias_velocity(bias.shape()) {}

template <typename T>
void LayerParams<T>::zero_grad() {
  weight_grad.fill(T{0});
  bias_grad.fill(T{0});
}

template <typename T>
void LayerParams<T>::zero_velocity() {
  weight_velocity.fill(T{0});
  bias_velocity.fill(T{0});
}

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0 || input + 2 * pad < kernel) {
    throw ConfigError("convolution output would be empty: input " + std::to_string(input) + ", kernel " +
                      std::to_string(kernel) + ", pad " + std::to_string(pad));
  }
  return (input + 2 * pad - kernel) / stride + 1;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const LayerParams<T>& params, std::size_t stride, std::size_t pad) {
  const ConvGeometry g = check_conv(input, params, stride, pad);
  const std::size_t out_c = params.out_channels();
  BasicTensor<T> output(Shape{input.shape().n, out_c, g.out_h, g.out_w});

  const ConstMap<T> weights(params.weights.data(), static_cast<Eigen::Index>(out_c),
                            static_cast<Eigen::Index>(g.patch_rows()));
  const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(params.bias.data(),
                                                                   static_cast<Eigen::Index>(out_c));
  AlignedVector<T> col(g.is_pointwise() ? 0 : g.patch_rows() * g.out_pixels());

  for (std::size_t n = 0; n < input.shape().n; ++n) {
    const T* patches = input.item(n).data();
    if (!g.is_pointwise()) {
      im2col(patches, g, col.data());
      patches = col.data();
    }
    const ConstMap<T> patch_matrix(patches, static_cast<Eigen::Index>(g.patch_rows()),
                                   static_cast<Eigen::Index>(g.out_pixels()));
    MutableMap<T> out(output.item(n).data(), static_cast<Eigen::Index>(out_c),
                      static_cast<Eigen::Index>(g.out_pixels()));
    out.noalias() = weights * patch_matrix;
    out.colwise() += bias;
  }
  return output;
}

template <typename T>
BasicTensor<T> conv2d_backward(const BasicTensor<T>& input, LayerParams<T>& params, const BasicTensor<T>& output_grad,
                               std::size_t stride, std::size_t pad) {
  const ConvGeometry g = check_conv(input, params, stride, pad);
  const std::size_t out_c = params.out_channels();
  const Shape expected{input.shape().n, out_c, g.out_h, g.out_w};
  if (output_grad.shape() != expected) {
    throw ShapeError("conv2d_backward '" + params.name + "': output gradient shape " + to_string(output_grad.shape()) +
                     " does not match conv output shape " + to_string(expected));
  }

  BasicTensor<T> input_grad(input.shape());
  const auto rows = static_cast<Eigen::Index>(g.patch_rows());
  const auto pixels = static_cast<Eigen::Index>(g.out_pixels());
  const ConstMap<T> weights(params.weights.data(), static_cast<Eigen::Index>(out_c), rows);
  MutableMap<T> weight_grad(params.weight_grad.data(), static_cast<Eigen::Index>(out_c), rows);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> bias_grad(params.bias_grad.data(), static_cast<Eigen::Index>(out_c));

  AlignedVector<T> col(g.is_pointwise() ? 0 : g.patch_rows() * g.out_pixels());
  AlignedVector<T> col_grad(g.is_pointwise() ? 0 : g.patch_rows() * g.out_pixels());

  for (std::size_t n = 0; n < input.shape().n; ++n) {
    const T* patches = input.item(n).data();
    if (!g.is_pointwise()) {
      im2col(patches, g, col.data());
      patches = col.data();
    }
    const ConstMap<T> patch_matrix(patches, rows, pixels);
    const ConstMap<T> grad(output_grad.item(n).data(), static_cast<Eigen::Index>(out_c), pixels);

    weight_grad.noalias() += grad * patch_matrix.transpose();
    bias_grad += grad.rowwise().sum();

    if (g.is_pointwise()) {
      MutableMap<T> in_grad(input_grad.item(n).data(), rows, pixels);
      in_grad.noalias() = weights.transpose() * grad;
    } else {
      MutableMap<T> patch_grad(col_grad.data(), rows, pixels);
      patch_grad.noalias() = weights.transpose() * grad;
      col2im_accumulate(col_grad.data(), g, input_grad.item(n).data());
    }
  }
  return input_grad;
}

template <typename T>
PoolResult<T> maxpool2d(const BasicTensor<T>& input) {
  const Shape& in = input.shape();
  if (in.h == 0 || in.w == 0) throw ShapeError("maxpool2d: empty input " + to_string(in));
  const std::size_t out_h = (in.h + 1) / 2;
  const std::size_t out_w = (in.w + 1) / 2;
  PoolResult<T> result{BasicTensor<T>(Shape{in.n, in.c, out_h, out_w}), {}, in};
  result.argmax.resize(result.output.size());

  std::size_t o = 0;
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t oh = 0; oh < out_h; ++oh) {
        for (std::size_t ow = 0; ow < out_w; ++ow, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_at = input.offset(n, c, 2 * oh, 2 * ow);
          bool seen = false;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            const std::size_t y = 2 * oh + dy;
            if (y >= in.h) continue;
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t x = 2 * ow + dx;
              if (x >= in.w) continue;
              const std::size_t at = input.offset(n, c, y, x);
              if (!seen || input[at] > best) {
                best = input[at];
                best_at = at;
                seen = true;
              }
            }
          }
          result.output[o] = best;
          result.argmax[o] = best_at;
        }
      }
    }
  }
  return result;
}

template <typename T>
BasicTensor<T> maxpool2d_backward(const PoolResult<T>& forward, const BasicTensor<T>& output_grad) {
  if (output_grad.shape() != forward.output.shape()) {
    throw ShapeError("maxpool2d_backward: gradient shape " + to_string(output_grad.shape()) +
                     " does not match pool output " + to_string(forward.output.shape()));
  }
  BasicTensor<T> input_grad(forward.input_shape);
  for (std::size_t i = 0; i < output_grad.size(); ++i) input_grad[forward.argmax[i]] += output_grad[i];
  return input_grad;
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& input, T slope) {
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? input[i] : slope * input[i];
  return out;
}

template <typename T>
BasicTensor<T> leaky_relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& output_grad, T slope) {
  if (input.shape() != output_grad.shape()) {
    throw ShapeError("leaky_relu_backward: gradient shape " + to_string(output_grad.shape()) +
                     " does not match input " + to_string(input.shape()));
  }
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? output_grad[i] : slope * output_grad[i];
  return out;
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

float sigmoid(float x) noexcept {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = sigmoid(input[i]);
  return out;
}

#define SPI_INSTANTIATE_LAYERS(T)                                                                              \
  template struct LayerParams<T>;                                                                              \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const LayerParams<T>&, std::size_t, std::size_t);      \
  template BasicTensor<T> conv2d_backward(const BasicTensor<T>&, LayerParams<T>&, const BasicTensor<T>&,       \
                                          std::size_t, std::size_t);                                           \
  template PoolResult<T> maxpool2d(const BasicTensor<T>&);                                                     \
  template BasicTensor<T> maxpool2d_backward(const PoolResult<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> leaky_relu(const BasicTensor<T>&, T);                                                \
  template BasicTensor<T> leaky_relu_backward(const BasicTensor<T>&, const BasicTensor<T>&, T);                \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);

SPI_INSTANTIATE_LAYERS(float)
SPI_INSTANTIATE_LAYERS(double)

#undef SPI_INSTANTIATE_LAYERS

}  // namespace spi
