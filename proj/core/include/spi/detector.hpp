#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "spi/layers.hpp"
#include "spi/tensor.hpp"

namespace spi {

// Staged-downsampling backbone: each stage is conv3x3(stride 1, pad 1) ->
// leaky ReLU -> 2x2 max pool; a 1x1 head maps the last stage to five
// channels (tx, ty, tw, th, to) on an S x S grid, S = input_size / 2^stages.
struct DetectorConfig {
  int input_size = 128;
  int stages = 5;
  std::vector<int> channels = {4, 8, 16, 32, 32};
  double lambda_coord = 5.0;
  double lambda_obj = 1.0;
  double lambda_noobj = 0.5;
  double decision_threshold = 0.24;

  // Throws ConfigError if input_size is not divisible by 2^stages or the
  // channel plan does not have one positive width per stage.
  void validate() const;
  [[nodiscard]] int grid() const;

  // Full-size input used by the original detector: 416 px, five stages.
  static DetectorConfig full_scale();

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

inline constexpr std::size_t kHeadChannels = 5;
inline constexpr std::size_t kInputChannels = 3;

// Ground-truth box in normalized image coordinates (x along width).
struct BoxAnnotation {
  double cx = 0.5;
  double cy = 0.5;
  double w = 1.0;
  double h = 1.0;

  // Throws AnnotationError outside 0 <= cx,cy <= 1, 0 < w,h <= 1.
  void validate() const;
  friend bool operator==(const BoxAnnotation&, const BoxAnnotation&) = default;
};

struct CellPrediction {
  double tx = 0.0;
  double ty = 0.0;
  double tw = 0.0;
  double th = 0.0;
  double to = 0.0;
};

// Raw head outputs for one image, cells stored row-major (row = y).
struct GridPrediction {
  int grid = 0;
  std::vector<CellPrediction> cells;

  GridPrediction() = default;
  explicit GridPrediction(int s) : grid(s), cells(static_cast<std::size_t>(s) * s) {}

  CellPrediction& cell(int row, int col) { return cells[static_cast<std::size_t>(row) * grid + col]; }
  [[nodiscard]] const CellPrediction& cell(int row, int col) const {
    return cells[static_cast<std::size_t>(row) * grid + col];
  }
  [[nodiscard]] double max_objectness() const;
};

// Activations kept from a forward pass for the matching backward pass.
template <typename T>
struct ForwardTrace {
  std::vector<BasicTensor<T>> stage_inputs;
  std::vector<BasicTensor<T>> conv_outputs;
  std::vector<PoolResult<T>> pools;
  BasicTensor<T> head_input;
  BasicTensor<T> head_output;
};

template <typename T>
class Network {
 public:
  Network() = default;
  // Weights uniform in +-sqrt(2 / fan_in), biases zero; deterministic in seed.
  Network(const DetectorConfig& config, std::uint64_t seed);

  [[nodiscard]] const DetectorConfig& config() const noexcept { return config_; }
  [[nodiscard]] std::vector<LayerParams<T>>& layers() noexcept { return layers_; }
  [[nodiscard]] const std::vector<LayerParams<T>>& layers() const noexcept { return layers_; }

  // images: (batch, 3, N, N) -> head output (batch, 5, S, S). Read-only on
  // the parameters, so concurrent calls on a shared network are safe.
  [[nodiscard]] BasicTensor<T> infer(const BasicTensor<T>& images) const;
  [[nodiscard]] BasicTensor<T> forward(const BasicTensor<T>& images, ForwardTrace<T>& trace) const;
  // Accumulates parameter gradients; returns dL/d(images).
  BasicTensor<T> backward(const ForwardTrace<T>& trace, const BasicTensor<T>& head_grad);

  void zero_grad();

  template <typename U>
  [[nodiscard]] Network<U> cast() const {
    Network<U> out;
    out.config_ = config_;
    for (const auto& layer : layers_) out.layers_.push_back(layer.template cast<U>());
    return out;
  }

  // Wraps already-shaped parameters (checkpoint loading). Throws
  // CheckpointMismatchError if the shapes disagree with the config.
  static Network from_layers(const DetectorConfig& config, std::vector<LayerParams<T>> layers);

 private:
  template <typename U>
  friend class Network;

  void check_input(const BasicTensor<T>& images) const;

  DetectorConfig config_;
  std::vector<LayerParams<T>> layers_;
};

extern template class Network<float>;
extern template class Network<double>;

struct Model {
  DetectorConfig config;
  Network<float> network;
  long iteration = 0;
  std::uint64_t seed = 0;
};

Model build_model(const DetectorConfig& config, std::uint64_t seed);

// Extracts per-image predictions from a (batch, 5, S, S) head tensor.
template <typename T>
GridPrediction grid_prediction(const BasicTensor<T>& head_output, std::size_t item);

// image: (1, 3, N, N) with N = config.input_size; throws ShapeError otherwise.
GridPrediction forward_detect(const Model& model, const Tensor& image);

struct LossResult {
  double loss = 0.0;
  GridPrediction grad;  // dL/d(raw head outputs)
};

// Single-class grid loss. The responsible cell is the one containing the
// box centre:
//   lambda_coord * [(s(tx)-x)^2 + (s(ty)-y)^2 + (tw-ln w)^2 + (th-ln h)^2]
//   + lambda_obj * (s(to)-1)^2 at that cell
//   + lambda_noobj * sum over the other cells of s(to)^2
// With no truth only the lambda_noobj term over every cell remains.
LossResult detection_loss(const GridPrediction& pred, const std::optional<BoxAnnotation>& truth,
                          const DetectorConfig& config);

struct Detection {
  int row = 0;
  int col = 0;
  BoxAnnotation box;
  double objectness = 0.0;
};

struct Decision {
  bool single_hit = false;
  std::vector<Detection> detections;  // objectness descending
};

// A pattern is a single hit iff some cell's sigmoid(to) is strictly greater
// than the threshold.
Decision decide(const GridPrediction& pred, double threshold);

// Box decoded from one cell: centre ((col + s(tx)) / S, (row + s(ty)) / S),
// extent (exp(tw), exp(th)).
BoxAnnotation decode_box(const GridPrediction& pred, int row, int col);

}  // namespace spi
