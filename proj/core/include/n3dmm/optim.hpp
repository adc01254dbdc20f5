#pragma once

#include <vector>

#include "n3dmm/tensor.hpp"

namespace n3dmm::nn {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Classic L2 coupling: weight_decay * param is added to the gradient.
  double weight_decay = 5e-5;
  // Multiplies the learning rate at each end_epoch().
  double lr_decay = 0.99;
};

struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  long step = 0;
  double learning_rate = 0.0;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options = {});

  // One update from the parameters' accumulated gradients (missing gradients
  // count as zero).
  void step();
  void zero_grad();
  void end_epoch() { state_.learning_rate *= options_.lr_decay; }

  double learning_rate() const { return state_.learning_rate; }
  const OptimizerState& state() const { return state_; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  OptimizerState state_;
};

}  // namespace n3dmm::nn
