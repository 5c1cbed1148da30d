#include "mdn/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

#include "mdn/errors.hpp"

namespace mdn {
namespace {

std::atomic<uint64_t> g_next_seq{1};
thread_local size_t t_last_visit_count = 0;

std::shared_ptr<Node> new_node(std::shared_ptr<const Tensor> value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}

const Tensor& empty_tensor() {
  static const Tensor t;
  return t;
}

}  // namespace

Var Var::leaf(Tensor value, bool requires_grad) {
  return Var(new_node(std::make_shared<const Tensor>(std::move(value)), requires_grad));
}

Var Var::leaf(std::shared_ptr<const Tensor> value, bool requires_grad) {
  return Var(new_node(std::move(value), requires_grad));
}

const Tensor& Var::value() const { return *node_->value; }
bool Var::requires_grad() const { return node_->requires_grad; }
const Tensor& Var::grad() const { return node_->grad.empty() ? empty_tensor() : node_->grad; }
bool Var::has_grad() const { return !node_->grad.empty(); }
uint64_t Var::id() const { return node_->seq; }

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value->shape());
  return grad;
}

void Node::accumulate(const Tensor& g) {
  if (grad.empty()) {
    if (g.shape() != value->shape()) {
      throw InvalidInput("gradient shape " + g.shape().str() + " does not match value " +
                         value->shape().str());
    }
    grad = g;
  } else {
    grad.add_(g);
  }
}

Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  bool needs = std::any_of(inputs.begin(), inputs.end(),
                           [](const Var& v) { return v.requires_grad(); });
  auto node = new_node(std::make_shared<const Tensor>(std::move(value)), needs);
  if (needs) {
    node->inputs.reserve(inputs.size());
    for (auto& v : inputs) node->inputs.push_back(v.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (!loss) throw InvalidInput("backward: null loss");
  if (loss.value().numel() != 1) {
    throw InvalidInput("backward: loss must be scalar, got " + loss.shape().str());
  }
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.node().get()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad) continue;
    order.push_back(n);
    for (auto& in : n->inputs) {
      if (seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->seq > b->seq; });

  loss.node()->accumulate(Tensor::scalar(1.0f));
  for (Node* n : order) {
    if (n->backward && !n->grad.empty()) n->backward(n->grad);
  }
  t_last_visit_count = order.size();
}

size_t last_backward_node_count() { return t_last_visit_count; }

}  // namespace mdn
