#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bams/tensor.hpp"

namespace bams {

// RMSprop: v <- rho*v + (1-rho)*g^2, p <- p - lr*g/(sqrt(v) + eps).
// Accumulators are keyed by parameter order, built on first step.
class Rmsprop {
 public:
  Rmsprop(double learning_rate = 1e-3, double smoothing = 0.97, double epsilon = 1e-8)
      : lr_(learning_rate), rho_(smoothing), eps_(epsilon) {
    if (!(rho_ > 0.0 && rho_ < 1.0)) throw ConfigError("smoothing must lie in (0, 1)");
    if (!(eps_ > 0.0)) throw ConfigError("epsilon must be positive");
  }

  // Applies one update to every named parameter from its accumulated
  // gradient. Throws TrainAbort naming the parameter on a NaN gradient.
  void step(std::vector<std::pair<std::string, Tensor>>& params);

  double learning_rate() const { return lr_; }
  const std::vector<double>& accumulator(size_t param_index) const { return accum_[param_index]; }

 private:
  double lr_, rho_, eps_;
  std::vector<std::vector<double>> accum_;
};

}  // namespace bams
