#pragma once

#include <cstddef>
#include <optional>

#include "mrkd/autodiff/graph.hpp"

namespace mrkd::ad {

enum class Padding { kSame, kValid };

struct Conv2dOptions {
  std::size_t stride = 1;
  Padding padding = Padding::kSame;  // kSame pads (k - 1) / 2 on each side
};

/// x: N x C x H x W, weight: O x C x KH x KW, bias: O or std::nullopt.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const std::optional<Var<T>>& bias,
              Conv2dOptions options = {});

template <typename T>
Var<T> relu(const Var<T>& x);

/// Non-overlapping windows when stride == kernel; output sizes are floored.
template <typename T>
Var<T> max_pool2d(const Var<T>& x, std::size_t kernel, std::size_t stride);

/// N x C x H x W -> N x C
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

/// Running statistics of one batch-norm layer. Updated in place by
/// batch_norm in training mode (unbiased variance, exponential average).
template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
};

/// Per-channel normalisation of N x C x H x W (or N x C) input. Training mode
/// normalises with batch statistics and updates `stats`; eval mode uses the
/// running statistics.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats,
                  bool training);

/// x: N x F, weight: M x F, bias: M.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Elementwise sum of two same-shape tensors (residual connections, loss terms).
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& x, T factor);

/// Row-wise softmax of logits / temperature for an N x M input, with
/// max subtraction.
template <typename T>
Var<T> soften(const Var<T>& logits, T temperature);

/// Sum of all elements weighted by `weights` (same shape); a scalar probe used
/// by the gradient checks.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights);

}  // namespace mrkd::ad
