#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "maskcond/tensor.hpp"

namespace maskcond {

/// One vertex of the dynamic computation graph. Interior nodes keep their
/// parents alive until the graph is dropped; leaves with `requires_grad`
/// are trainable parameters.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Tensor value);
  static Var leaf(Tensor value);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad_buffer() { return node_->grad_buffer(); }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  /// Scalar value of a one-element var.
  double item() const;

 private:
  std::shared_ptr<Node> node_;
};

/// Builds a graph node. If gradient tracking is off or no parent requires
/// gradients the parents and backward function are dropped.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

/// Reverse sweep from a scalar root; leaves accumulate into their grad.
void backward(const Var& root);

bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace maskcond
