#pragma once

#include <vector>

#include "mrkd/autodiff/layers.hpp"

namespace mrkd::ad {

/// 0.5 * base_lr * (1 + cos(pi * epoch / total_epochs)), epoch in [0, total].
double cosine_lr(double base_lr, int epoch, int total_epochs);

struct OptimizerState {
  double base_lr = 0.001;
  double momentum = 0.9;
  int epoch = 0;
  int total_epochs = 1;

  double lr() const { return cosine_lr(base_lr, epoch, total_epochs); }
};

/// SGD with heavy-ball momentum: v <- mu v + g; theta <- theta - lr v.
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Parameter<T>> params, OptimizerState state);

  void zero_grad();
  /// One update at the learning rate of the current epoch.
  void step();
  void advance_epoch() { ++state_.epoch; }

  OptimizerState& state() { return state_; }
  const OptimizerState& state() const { return state_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  std::vector<Tensor<T>>& velocity() { return velocity_; }
  const std::vector<Tensor<T>>& velocity() const { return velocity_; }

 private:
  std::vector<Parameter<T>> params_;
  std::vector<Tensor<T>> velocity_;
  OptimizerState state_;
};

}  // namespace mrkd::ad
