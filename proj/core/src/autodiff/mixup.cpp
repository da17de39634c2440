#include "mrkd/autodiff/mixup.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace mrkd::ad {

MixupDraw draw_mixup(std::size_t batch, double alpha, std::uint64_t seed) {
  if (!(alpha > 0)) fail(ErrorKind::kParameter, "mixup: alpha must be > 0");
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double a = gamma(rng);
  const double b = gamma(rng);
  MixupDraw draw;
  draw.lambda = (a + b) > 0 ? a / (a + b) : 0.5;
  draw.permutation.resize(batch);
  std::iota(draw.permutation.begin(), draw.permutation.end(), std::size_t{0});
  std::shuffle(draw.permutation.begin(), draw.permutation.end(), rng);
  return draw;
}

template <typename T>
Tensor<T> apply_mixup(const Tensor<T>& rows, const MixupDraw& draw) {
  if (rows.rank() == 0 || rows.dim(0) != draw.permutation.size()) {
    fail(ErrorKind::kShape, "mixup: batch of " + shape_str(rows.shape()) + " does not match permutation of " +
                                std::to_string(draw.permutation.size()));
  }
  if (draw.lambda == 1.0) return rows;
  const std::size_t n = rows.dim(0);
  const std::size_t stride = rows.size() / n;
  const auto lam = static_cast<T>(draw.lambda);
  const auto rest = static_cast<T>(1.0 - draw.lambda);
  Tensor<T> out(rows.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* a = rows.data() + i * stride;
    const T* b = rows.data() + draw.permutation[i] * stride;
    T* dst = out.data() + i * stride;
    for (std::size_t j = 0; j < stride; ++j) dst[j] = lam * a[j] + rest * b[j];
  }
  return out;
}

template <typename T>
MixedBatch<T> mixup(const Tensor<T>& inputs, const Tensor<T>& targets, double alpha, std::uint64_t seed) {
  if (inputs.rank() == 0 || inputs.dim(0) < 2) fail(ErrorKind::kInvalidInput, "mixup: batch size must be >= 2");
  MixedBatch<T> out;
  out.draw = draw_mixup(inputs.dim(0), alpha, seed);
  out.inputs = apply_mixup(inputs, out.draw);
  out.targets = apply_mixup(targets, out.draw);
  return out;
}

template Tensor<float> apply_mixup<float>(const Tensor<float>&, const MixupDraw&);
template Tensor<double> apply_mixup<double>(const Tensor<double>&, const MixupDraw&);
template MixedBatch<float> mixup<float>(const Tensor<float>&, const Tensor<float>&, double, std::uint64_t);
template MixedBatch<double> mixup<double>(const Tensor<double>&, const Tensor<double>&, double, std::uint64_t);

}  // namespace mrkd::ad
