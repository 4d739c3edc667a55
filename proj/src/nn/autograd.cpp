#include "turbdet/nn/autograd.hpp"

#include <unordered_set>

#include "turbdet/core/error.hpp"

namespace turbdet::nn {

Tensor& Node::ensure_grad() {
  if (!grad.defined()) grad = Tensor::zeros(value.shape());
  return grad;
}

Var::Var(Tensor t, bool requires_grad) {
  n_ = std::make_shared<Node>();
  n_->value = std::move(t);
  n_->requires_grad = requires_grad;
}

Var Var::param(Tensor t, std::string name) {
  Var v(std::move(t), true);
  v.n_->name = std::move(name);
  return v;
}

void Var::zero_grad() {
  if (n_ && n_->grad.defined()) n_->grad.zero();
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn,
            std::string name) {
  Var out(std::move(value), false);
  Node& n = *out.node();
  n.name = std::move(name);
  bool needs = false;
  for (const auto& p : parents) {
    if (p.defined() && p.requires_grad()) needs = true;
  }
  n.requires_grad = needs;
  if (needs) {
    n.parents.reserve(parents.size());
    for (const auto& p : parents)
      if (p.defined()) n.parents.push_back(p.node());
    n.backward_fn = std::move(backward_fn);
  }
  return out;
}

void backward(const Var& root) {
  if (!root.defined()) throw ModelError("backward: undefined root");
  if (root.numel() != 1) throw ModelError("backward: root must be scalar");

  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    size_t next_child;
  };
  std::vector<Frame> stack;
  Node* r = root.node().get();
  if (!r->requires_grad) return;
  stack.push_back({r, 0});
  visited.insert(r);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.node->parents.size()) {
      Node* child = f.node->parents[f.next_child++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad().fill(1.0f);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

}  // namespace turbdet::nn
