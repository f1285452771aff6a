#include "spi/optim.hpp"

#include <cmath>
#include <string>

#include "spi/errors.hpp"

namespace spi {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
    if (!(lr_schedule[i].learning_rate >= 0.0)) throw ConfigError("scheduled learning rate must be non-negative");
    if (i > 0 && lr_schedule[i].iteration <= lr_schedule[i - 1].iteration) {
      throw ConfigError("lr_schedule iterations must be strictly increasing");
    }
  }
}

double OptimizerConfig::rate_at(long iteration) const {
  double rate = learning_rate;
  for (const RateChange& change : lr_schedule) {
    if (change.iteration > iteration) break;
    rate = change.learning_rate;
  }
  return rate;
}

template <typename T>
void sgd_step(std::span<LayerParams<T>> layers, const OptimizerConfig& config, long iteration) {
  for (const LayerParams<T>& layer : layers) {
    if (!layer.weight_grad.all_finite() || !layer.bias_grad.all_finite()) {
      throw NumericError("non-finite gradient in layer '" + layer.name + "' at iteration " +
                         std::to_string(iteration));
    }
  }
  const T lr = static_cast<T>(config.rate_at(iteration));
  const T momentum = static_cast<T>(config.momentum);
  const T decay = static_cast<T>(config.weight_decay);

  for (LayerParams<T>& layer : layers) {
    for (std::size_t i = 0; i < layer.weights.size(); ++i) {
      T& v = layer.weight_velocity[i];
      v = momentum * v + layer.weight_grad[i] + decay * layer.weights[i];
      layer.weights[i] -= lr * v;
    }
    for (std::size_t i = 0; i < layer.bias.size(); ++i) {
      T& v = layer.bias_velocity[i];
      v = momentum * v + layer.bias_grad[i];
      layer.bias[i] -= lr * v;
    }
    layer.zero_grad();
  }
}

template void sgd_step<float>(std::span<LayerParams<float>>, const OptimizerConfig&, long);
template void sgd_step<double>(std::span<LayerParams<double>>, const OptimizerConfig&, long);

}  // namespace spi
