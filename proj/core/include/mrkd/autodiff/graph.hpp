#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "mrkd/autodiff/tensor.hpp"

namespace mrkd::ad {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

/// Handle to a node of the tape. Cheap to copy; copies alias the same node.
template <typename T>
class Var {
 public:
  Var() : node_(std::make_shared<Node<T>>()) {}
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T{0});
  }

  /// Copy of the value with no history.
  Var detach() const { return Var(node_->value, false); }

 private:
  std::shared_ptr<Node<T>> node_;
};

void check_finite(std::span<const float> values, const char* op);
void check_finite(std::span<const double> values, const char* op);

/// While alive, ops run on this thread record no history.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(enabled()) { enabled() = false; }
  ~NoGradGuard() { enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }

 private:
  bool previous_;
};

/// Creates the output node of an op. History is kept only if a parent
/// requires grad and recording is enabled.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, const char* op,
                   std::function<void(Node<T>&)> backward) {
  check_finite(value.values(), op);
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  if (NoGradGuard::enabled()) {
    for (const auto& p : parents) node->requires_grad = node->requires_grad || p.requires_grad();
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

/// Reverse sweep from a scalar root. The tape is consumed: closures and parent
/// links are released as they are visited.
template <typename T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1) {
    fail(ErrorKind::kShape, "backward: root must be a scalar, got " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;

  // `order` owns every visited node so that clearing parent links below
  // cannot free a node that is still waiting for its turn.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      std::shared_ptr<Node<T>> parent = top.first->parents[top.second++];
      if (parent->requires_grad && seen.insert(parent.get()).second) stack.emplace_back(std::move(parent), 0);
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = it->get();
    if (node->backward) {
      node->grad_buffer();
      node->backward(*node);
      node->backward = nullptr;
    }
    node->parents.clear();
  }
}

}  // namespace mrkd::ad
