#pragma once

#include <span>
#include <utility>
#include <vector>

#include "spi/layers.hpp"

namespace spi {

struct RateChange {
  long iteration = 0;
  double learning_rate = 0.0;
  friend bool operator==(const RateChange&, const RateChange&) = default;
};

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // From `iteration` onward the rate becomes `learning_rate`.
  std::vector<RateChange> lr_schedule;

  // Throws ConfigError on a non-positive rate, momentum outside [0,1),
  // negative decay, or a schedule that is not strictly increasing.
  void validate() const;
  [[nodiscard]] double rate_at(long iteration) const;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

// Momentum SGD:
//   v <- momentum * v + grad + weight_decay * w
//   w <- w - lr(iteration) * v
// Biases are not decayed. Gradients are zeroed afterwards. If any gradient
// is non-finite the step is aborted before touching any parameter and a
// NumericError naming the layer is thrown.
template <typename T>
void sgd_step(std::span<LayerParams<T>> layers, const OptimizerConfig& config, long iteration);

}  // namespace spi
