#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mrkd/autodiff/ops.hpp"

namespace mrkd::ad {

template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
};

template <typename T>
struct Buffer {
  std::string name;
  Tensor<T>* tensor;
};

/// He (fan-in) normal initialisation.
template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::mt19937_64& rng)
      : weight_(he_normal<T>(Shape{out_channels, in_channels, kernel, kernel},
                             in_channels * kernel * kernel, rng),
                true),
        options_{stride, Padding::kSame} {}

  Var<T> operator()(const Var<T>& x) const { return conv2d<T>(x, weight_, std::nullopt, options_); }

  Var<T>& weight() { return weight_; }
  void collect(const std::string& prefix, std::vector<Parameter<T>>& out) const {
    out.push_back({prefix + ".weight", weight_});
  }

 private:
  Var<T> weight_;
  Conv2dOptions options_;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels)
      : gamma_(Tensor<T>(Shape{channels}, T{1}), true),
        beta_(Tensor<T>(Shape{channels}, T{0}), true),
        stats_(channels) {}

  Var<T> operator()(const Var<T>& x, bool training) {
    return batch_norm<T>(x, gamma_, beta_, stats_, training);
  }

  Var<T>& gamma() { return gamma_; }
  Var<T>& beta() { return beta_; }
  BatchNormStats<T>& stats() { return stats_; }

  void collect(const std::string& prefix, std::vector<Parameter<T>>& out) const {
    out.push_back({prefix + ".gamma", gamma_});
    out.push_back({prefix + ".beta", beta_});
  }
  void collect_buffers(const std::string& prefix, std::vector<Buffer<T>>& out) {
    out.push_back({prefix + ".running_mean", &stats_.running_mean});
    out.push_back({prefix + ".running_var", &stats_.running_var});
  }

 private:
  Var<T> gamma_;
  Var<T> beta_;
  BatchNormStats<T> stats_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, std::mt19937_64& rng)
      : weight_(he_normal<T>(Shape{out_features, in_features}, in_features, rng), true),
        bias_(Tensor<T>(Shape{out_features}, T{0}), true) {}

  Var<T> operator()(const Var<T>& x) const { return linear<T>(x, weight_, bias_); }

  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }
  void collect(const std::string& prefix, std::vector<Parameter<T>>& out) const {
    out.push_back({prefix + ".weight", weight_});
    out.push_back({prefix + ".bias", bias_});
  }

 private:
  Var<T> weight_;
  Var<T> bias_;
};

}  // namespace mrkd::ad
