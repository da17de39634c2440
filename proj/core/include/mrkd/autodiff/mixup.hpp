#pragma once

#include <cstdint>
#include <vector>

#include "mrkd/autodiff/tensor.hpp"

namespace mrkd::ad {

struct MixupDraw {
  double lambda = 1.0;
  std::vector<std::size_t> permutation;
};

/// lambda ~ Beta(alpha, alpha) and a uniform permutation, both from `seed`.
MixupDraw draw_mixup(std::size_t batch, double alpha, std::uint64_t seed);

/// rows[i] <- lambda * rows[i] + (1 - lambda) * rows[perm[i]] along dim 0.
template <typename T>
Tensor<T> apply_mixup(const Tensor<T>& rows, const MixupDraw& draw);

template <typename T>
struct MixedBatch {
  Tensor<T> inputs;
  Tensor<T> targets;
  MixupDraw draw;
};

template <typename T>
MixedBatch<T> mixup(const Tensor<T>& inputs, const Tensor<T>& targets, double alpha, std::uint64_t seed);

}  // namespace mrkd::ad
