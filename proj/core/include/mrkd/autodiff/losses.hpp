#pragma once

#include "mrkd/autodiff/ops.hpp"

namespace mrkd::ad {

inline constexpr double kProbFloor = 1e-12;

/// -(1/N) sum_i sum_c targets[i,c] * log(max(probs[i,c], 1e-12)).
/// Both arguments must be N x M with rows summing to 1 within 1e-4.
template <typename T>
Var<T> cross_entropy(const Var<T>& probs, const Tensor<T>& targets);

enum class KlDirection {
  kForward,  // KL(student || teacher), the printed form
  kReverse,  // KL(teacher || student)
};

/// Mean over rows of the KL divergence between a student distribution (tracked)
/// and a fixed teacher distribution. Evaluated as the generalised divergence
/// sum p log(p/q) - p + q, which equals KL for normalised rows and is
/// termwise nonnegative.
template <typename T>
Var<T> kl_to_teacher(const Var<T>& student, const Tensor<T>& teacher,
                     KlDirection direction = KlDirection::kForward);

/// Loss terms of one training batch. l_d is the value computed by the
/// graph's add node, so l_d == l_ce + l_kl in the storage type.
template <typename T>
struct LossValues {
  T l_ce = 0;
  T l_kl = 0;
  T l_d = 0;
};

struct DistillLossOptions {
  double temperature = 2.0;
  KlDirection direction = KlDirection::kForward;
  bool t2_scaling = false;  // multiply L_kl by T^2
};

template <typename T>
struct DistillLoss {
  Var<T> total;
  LossValues<T> values;
};

/// L_ce on softmax(logits) against `targets`.
template <typename T>
DistillLoss<T> single_branch_loss(const Var<T>& logits, const Tensor<T>& targets);

/// L_d = L_ce(softmax(logits), targets) + L_kl(soften(logits, T), teacher).
template <typename T>
DistillLoss<T> distillation_loss(const Var<T>& logits, const Tensor<T>& targets,
                                 const Tensor<T>& teacher, const DistillLossOptions& options);

/// Value-only row-wise softmax, for inference paths.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits, T temperature = T(1));

}  // namespace mrkd::ad
