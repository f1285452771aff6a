#include "spi/detector.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "spi/errors.hpp"

namespace spi {

void DetectorConfig::validate() const {
  if (input_size <= 0) throw ConfigError("input_size must be positive");
  if (stages <= 0 || stages > 16) throw ConfigError("stages must lie in [1, 16]");
  const int factor = 1 << stages;
  if (input_size % factor != 0) {
    throw ConfigError("input_size " + std::to_string(input_size) + " is not divisible by 2^" +
                      std::to_string(stages) + " = " + std::to_string(factor));
  }
  if (channels.size() != static_cast<std::size_t>(stages)) {
    throw ConfigError("channel plan lists " + std::to_string(channels.size()) + " widths for " +
                      std::to_string(stages) + " stages");
  }
  for (int c : channels) {
    if (c <= 0) throw ConfigError("channel widths must be positive");
  }
  if (lambda_coord < 0 || lambda_obj < 0 || lambda_noobj < 0) throw ConfigError("loss weights must be non-negative");
  if (!(decision_threshold >= 0.0 && decision_threshold <= 1.0)) {
    throw ConfigError("decision_threshold must lie in [0, 1]");
  }
}

int DetectorConfig::grid() const { return input_size >> stages; }

DetectorConfig DetectorConfig::full_scale() {
  DetectorConfig c;
  c.input_size = 416;
  c.stages = 5;
  c.channels = {16, 32, 64, 128, 256};
  return c;
}

void BoxAnnotation::validate() const {
  const auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(cx) || !unit(cy)) throw AnnotationError("box centre must lie in [0, 1]");
  if (!(w > 0.0 && w <= 1.0) || !(h > 0.0 && h <= 1.0)) throw AnnotationError("box extent must lie in (0, 1]");
}

double GridPrediction::max_objectness() const {
  double best = 0.0;
  for (const CellPrediction& c : cells) best = std::max(best, sigmoid(c.to));
  return best;
}

template <typename T>
Network<T>::Network(const DetectorConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::size_t in = kInputChannels;
  for (int s = 0; s < config_.stages; ++s) {
    const auto out = static_cast<std::size_t>(config_.channels[static_cast<std::size_t>(s)]);
    layers_.emplace_back("stage" + std::to_string(s + 1), out, in, 3);
    in = out;
  }
  layers_.emplace_back("head", kHeadChannels, in, 1);

  for (LayerParams<T>& layer : layers_) {
    const double fan_in = static_cast<double>(layer.in_channels() * layer.kernel() * layer.kernel());
    const double bound = std::sqrt(2.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (T& w : layer.weights.values()) w = static_cast<T>(dist(rng));
  }
}

template <typename T>
Network<T> Network<T>::from_layers(const DetectorConfig& config, std::vector<LayerParams<T>> layers) {
  config.validate();
  Network<T> reference(config, 0);
  if (layers.size() != reference.layers_.size()) {
    throw CheckpointMismatchError("checkpoint has " + std::to_string(layers.size()) + " layers, config expects " +
                                  std::to_string(reference.layers_.size()));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerParams<T>& want = reference.layers_[i];
    const LayerParams<T>& got = layers[i];
    if (got.weights.shape() != want.weights.shape() || got.bias.shape() != want.bias.shape()) {
      throw CheckpointMismatchError("layer '" + want.name + "' expects weights " + to_string(want.weights.shape()) +
                                    " but checkpoint has " + to_string(got.weights.shape()));
    }
  }
  Network<T> net;
  net.config_ = config;
  net.layers_ = std::move(layers);
  return net;
}

template <typename T>
void Network<T>::check_input(const BasicTensor<T>& images) const {
  const Shape& s = images.shape();
  const auto n = static_cast<std::size_t>(config_.input_size);
  if (s.c != kInputChannels || s.h != n || s.w != n || s.n == 0) {
    throw ShapeError("detector expects images of shape (batch,3," + std::to_string(n) + "," + std::to_string(n) +
                     ") but got " + to_string(s));
  }
}

template <typename T>
BasicTensor<T> Network<T>::infer(const BasicTensor<T>& images) const {
  check_input(images);
  BasicTensor<T> x = images;
  for (int s = 0; s < config_.stages; ++s) {
    x = maxpool2d(leaky_relu(conv2d(x, layers_[static_cast<std::size_t>(s)], 1, 1))).output;
  }
  return conv2d(x, layers_.back(), 1, 0);
}

template <typename T>
BasicTensor<T> Network<T>::forward(const BasicTensor<T>& images, ForwardTrace<T>& trace) const {
  check_input(images);
  trace = ForwardTrace<T>{};
  BasicTensor<T> x = images;
  for (int s = 0; s < config_.stages; ++s) {
    trace.stage_inputs.push_back(x);
    trace.conv_outputs.push_back(conv2d(x, layers_[static_cast<std::size_t>(s)], 1, 1));
    trace.pools.push_back(maxpool2d(leaky_relu(trace.conv_outputs.back())));
    x = trace.pools.back().output;
  }
  trace.head_input = x;
  trace.head_output = conv2d(trace.head_input, layers_.back(), 1, 0);
  return trace.head_output;
}

template <typename T>
BasicTensor<T> Network<T>::backward(const ForwardTrace<T>& trace, const BasicTensor<T>& head_grad) {
  BasicTensor<T> grad = conv2d_backward(trace.head_input, layers_.back(), head_grad, 1, 0);
  for (int s = config_.stages - 1; s >= 0; --s) {
    const auto i = static_cast<std::size_t>(s);
    grad = maxpool2d_backward(trace.pools[i], grad);
    grad = leaky_relu_backward(trace.conv_outputs[i], grad);
    grad = conv2d_backward(trace.stage_inputs[i], layers_[i], grad, 1, 1);
  }
  return grad;
}

template <typename T>
void Network<T>::zero_grad() {
  for (LayerParams<T>& layer : layers_) layer.zero_grad();
}

template class Network<float>;
template class Network<double>;

Model build_model(const DetectorConfig& config, std::uint64_t seed) {
  return Model{config, Network<float>(config, seed), 0, seed};
}

template <typename T>
GridPrediction grid_prediction(const BasicTensor<T>& head_output, std::size_t item) {
  const Shape& s = head_output.shape();
  if (s.c != kHeadChannels || s.h != s.w || item >= s.n) {
    throw ShapeError("head output shape " + to_string(s) + " is not (batch,5,S,S)");
  }
  const int grid = static_cast<int>(s.h);
  GridPrediction pred(grid);
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      const auto y = static_cast<std::size_t>(r);
      const auto x = static_cast<std::size_t>(c);
      CellPrediction& cell = pred.cell(r, c);
      cell.tx = static_cast<double>(head_output.at(item, 0, y, x));
      cell.ty = static_cast<double>(head_output.at(item, 1, y, x));
      cell.tw = static_cast<double>(head_output.at(item, 2, y, x));
      cell.th = static_cast<double>(head_output.at(item, 3, y, x));
      cell.to = static_cast<double>(head_output.at(item, 4, y, x));
    }
  }
  return pred;
}

template GridPrediction grid_prediction(const BasicTensor<float>&, std::size_t);
template GridPrediction grid_prediction(const BasicTensor<double>&, std::size_t);

GridPrediction forward_detect(const Model& model, const Tensor& image) {
  if (image.shape().n != 1) throw ShapeError("forward_detect takes a single image, got " + to_string(image.shape()));
  return grid_prediction(model.network.infer(image), 0);
}

LossResult detection_loss(const GridPrediction& pred, const std::optional<BoxAnnotation>& truth,
                          const DetectorConfig& config) {
  const int grid = pred.grid;
  if (grid <= 0 || pred.cells.size() != static_cast<std::size_t>(grid) * grid) {
    throw ShapeError("grid prediction is not S x S");
  }
  int target_row = -1;
  int target_col = -1;
  if (truth) {
    truth->validate();
    target_col = std::min(static_cast<int>(std::floor(truth->cx * grid)), grid - 1);
    target_row = std::min(static_cast<int>(std::floor(truth->cy * grid)), grid - 1);
  }

  LossResult result{0.0, GridPrediction(grid)};
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      const CellPrediction& p = pred.cell(r, c);
      CellPrediction& g = result.grad.cell(r, c);
      const double so = sigmoid(p.to);
      const double dso = so * (1.0 - so);
      if (r == target_row && c == target_col) {
        const double x_hat = truth->cx * grid - c;
        const double y_hat = truth->cy * grid - r;
        const double w_hat = std::log(truth->w);
        const double h_hat = std::log(truth->h);
        const double sx = sigmoid(p.tx);
        const double sy = sigmoid(p.ty);
        const double ex = sx - x_hat;
        const double ey = sy - y_hat;
        const double ew = p.tw - w_hat;
        const double eh = p.th - h_hat;
        const double eo = so - 1.0;
        result.loss += config.lambda_coord * (ex * ex + ey * ey + ew * ew + eh * eh) + config.lambda_obj * eo * eo;
        g.tx = config.lambda_coord * 2.0 * ex * sx * (1.0 - sx);
        g.ty = config.lambda_coord * 2.0 * ey * sy * (1.0 - sy);
        g.tw = config.lambda_coord * 2.0 * ew;
        g.th = config.lambda_coord * 2.0 * eh;
        g.to = config.lambda_obj * 2.0 * eo * dso;
      } else {
        result.loss += config.lambda_noobj * so * so;
        g.to = config.lambda_noobj * 2.0 * so * dso;
      }
    }
  }
  return result;
}

BoxAnnotation decode_box(const GridPrediction& pred, int row, int col) {
  const CellPrediction& c = pred.cell(row, col);
  const double s = pred.grid;
  return BoxAnnotation{(col + sigmoid(c.tx)) / s, (row + sigmoid(c.ty)) / s, std::exp(c.tw), std::exp(c.th)};
}

Decision decide(const GridPrediction& pred, double threshold) {
  Decision decision;
  for (int r = 0; r < pred.grid; ++r) {
    for (int c = 0; c < pred.grid; ++c) {
      const double objectness = sigmoid(pred.cell(r, c).to);
      if (objectness > threshold) decision.detections.push_back(Detection{r, c, decode_box(pred, r, c), objectness});
    }
  }
  std::stable_sort(decision.detections.begin(), decision.detections.end(),
                   [](const Detection& a, const Detection& b) { return a.objectness > b.objectness; });
  decision.single_hit = !decision.detections.empty();
  return decision;
}

}  // namespace spi
