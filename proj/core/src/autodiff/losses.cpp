#include "mrkd/autodiff/losses.hpp"

#include <algorithm>
#include <cmath>

namespace mrkd::ad {
namespace {

template <typename T>
void check_rows(const Tensor<T>& t, const char* op, const char* what) {
  const std::size_t n = t.dim(0), m = t.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < m; ++j) sum += t[i * m + j];
    if (std::abs(sum - 1.0) > 1e-4) {
      fail(ErrorKind::kInvalidDistribution, std::string(op) + ": " + what + " row " +
                                                std::to_string(i) + " sums to " + std::to_string(sum));
    }
  }
}

template <typename T>
void check_pair(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != 2 || a != b) {
    fail(ErrorKind::kShape, std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                                shape_str(b));
  }
}

template <typename T>
T clamp_prob(T p) {
  return std::max(p, static_cast<T>(kProbFloor));
}

}  // namespace

template <typename T>
Var<T> cross_entropy(const Var<T>& probs, const Tensor<T>& targets) {
  check_pair<T>(probs.shape(), targets.shape(), "cross_entropy");
  check_rows(probs.value(), "cross_entropy", "probability");
  check_rows(targets, "cross_entropy", "target");
  const std::size_t n = probs.shape()[0];
  const auto& p = probs.value();
  T acc{0};
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (targets[i] != T{0}) acc -= targets[i] * std::log(clamp_prob(p[i]));
  }
  const T inv_n = T{1} / static_cast<T>(n);
  return make_result<T>(Tensor<T>(Shape{1}, acc * inv_n), {probs}, "cross_entropy",
                        [targets, inv_n](Node<T>& self) {
    Node<T>& pn = *self.parents[0];
    if (!pn.requires_grad) return;
    auto& gp = pn.grad_buffer();
    const T g = self.grad[0] * inv_n;
    for (std::size_t i = 0; i < gp.size(); ++i) {
      const T pi = pn.value[i];
      if (pi >= static_cast<T>(kProbFloor)) gp[i] -= g * targets[i] / pi;
    }
  });
}

template <typename T>
Var<T> kl_to_teacher(const Var<T>& student, const Tensor<T>& teacher, KlDirection direction) {
  check_pair<T>(student.shape(), teacher.shape(), "kl_to_teacher");
  const std::size_t n = student.shape()[0];
  const auto& s = student.value();
  T acc{0};
  for (std::size_t i = 0; i < s.size(); ++i) {
    const T ls = std::log(clamp_prob(s[i]));
    const T lt = std::log(clamp_prob(teacher[i]));
    if (direction == KlDirection::kForward) {
      acc += s[i] * (ls - lt) - s[i] + teacher[i];
    } else {
      acc += teacher[i] * (lt - ls) - teacher[i] + s[i];
    }
  }
  const T inv_n = T{1} / static_cast<T>(n);
  return make_result<T>(Tensor<T>(Shape{1}, acc * inv_n), {student}, "kl_to_teacher",
                        [teacher, inv_n, direction](Node<T>& self) {
    Node<T>& sn = *self.parents[0];
    if (!sn.requires_grad) return;
    auto& gs = sn.grad_buffer();
    const T g = self.grad[0] * inv_n;
    const T floor = static_cast<T>(kProbFloor);
    for (std::size_t i = 0; i < gs.size(); ++i) {
      const T si = sn.value[i];
      const bool live = si >= floor;
      if (direction == KlDirection::kForward) {
        // d/ds [s log max(s, eps) - s log t - s + t]
        const T d = std::log(clamp_prob(si)) - std::log(clamp_prob(teacher[i])) + (live ? T{0} : T{-1});
        gs[i] += g * d;
      } else {
        // d/ds [-t log max(s, eps) + s]
        gs[i] += g * ((live ? -teacher[i] / si : T{0}) + T{1});
      }
    }
  });
}

template <typename T>
DistillLoss<T> single_branch_loss(const Var<T>& logits, const Tensor<T>& targets) {
  Var<T> ce = cross_entropy(soften(logits, T{1}), targets);
  DistillLoss<T> out{ce, {}};
  out.values.l_ce = ce.value()[0];
  out.values.l_kl = T{0};
  out.values.l_d = ce.value()[0];
  return out;
}

template <typename T>
DistillLoss<T> distillation_loss(const Var<T>& logits, const Tensor<T>& targets,
                                 const Tensor<T>& teacher, const DistillLossOptions& options) {
  const auto temperature = static_cast<T>(options.temperature);
  Var<T> ce = cross_entropy(soften(logits, T{1}), targets);
  Var<T> kl = kl_to_teacher(soften(logits, temperature), teacher, options.direction);
  if (options.t2_scaling) kl = scale(kl, temperature * temperature);
  Var<T> total = add(ce, kl);
  DistillLoss<T> out{total, {}};
  out.values.l_ce = ce.value()[0];
  out.values.l_kl = kl.value()[0];
  out.values.l_d = total.value()[0];
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits, T temperature) {
  return soften(Var<T>(logits, false), temperature).value();
}

#define MRKD_INSTANTIATE_LOSSES(T)                                                                   \
  template Var<T> cross_entropy<T>(const Var<T>&, const Tensor<T>&);                                 \
  template Var<T> kl_to_teacher<T>(const Var<T>&, const Tensor<T>&, KlDirection);                    \
  template DistillLoss<T> single_branch_loss<T>(const Var<T>&, const Tensor<T>&);                    \
  template DistillLoss<T> distillation_loss<T>(const Var<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                               const DistillLossOptions&);                           \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&, T);

MRKD_INSTANTIATE_LOSSES(float)
MRKD_INSTANTIATE_LOSSES(double)

}  // namespace mrkd::ad
