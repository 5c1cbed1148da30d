#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "mdn/tensor.hpp"

namespace mdn {

struct Node;

// Handle to a value in the computation graph. Cheap to copy.
//
// Nodes are numbered in creation order. An op's inputs always exist before the
// op runs, so descending sequence numbers are a reverse topological order and
// backward() never needs an explicit sort of the edges.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  // Graph leaf. requires_grad marks it as something we want d(loss)/d(leaf) for.
  static Var leaf(Tensor value, bool requires_grad = false);
  static Var leaf(std::shared_ptr<const Tensor> value, bool requires_grad);

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

  // Gradient accumulated by backward(); empty tensor if none reached this node.
  const Tensor& grad() const;
  bool has_grad() const;

  uint64_t id() const;
  explicit operator bool() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using BackwardFn = std::function<void(const Tensor& grad_out)>;

struct Node {
  std::shared_ptr<const Tensor> value;
  Tensor grad;
  bool requires_grad = false;
  uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  // Adds g into this node's gradient buffer, allocating it on first use.
  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
};

// Creates an op output. When none of the inputs requires a gradient the node is
// detached: no closure, no references to its inputs, so intermediate values are
// released as soon as callers drop them (inference runs in bounded memory).
Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward);

// Reverse-mode sweep from a scalar loss. Each reachable node's backward runs
// exactly once, after all of its consumers. Gradients of fan-out nodes sum.
void backward(const Var& loss);

// Number of nodes visited by the last backward() on this thread.
size_t last_backward_node_count();

}  // namespace mdn
