#include "mrkd/autodiff/optim.hpp"

#include <cmath>
#include <numbers>

namespace mrkd::ad {

double cosine_lr(double base_lr, int epoch, int total_epochs) {
  if (total_epochs <= 0) fail(ErrorKind::kParameter, "cosine_lr: total_epochs must be >= 1");
  if (epoch < 0 || epoch > total_epochs) {
    fail(ErrorKind::kParameter, "cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                                    std::to_string(total_epochs) + "]");
  }
  if (epoch == total_epochs) return 0.0;
  return 0.5 * base_lr *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total_epochs)));
}

template <typename T>
Sgd<T>::Sgd(std::vector<Parameter<T>> params, OptimizerState state)
    : params_(std::move(params)), state_(state) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.var.shape());
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

template <typename T>
void Sgd<T>::step() {
  const auto lr = static_cast<T>(state_.lr());
  const auto mu = static_cast<T>(state_.momentum);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var<T>& var = params_[i].var;
    if (var.grad().empty()) continue;
    auto& value = var.mutable_value();
    const auto& grad = var.grad();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      v[j] = mu * v[j] + grad[j];
      value[j] -= lr * v[j];
    }
  }
}

template class Sgd<float>;
template class Sgd<double>;

}  // namespace mrkd::ad
