#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "catsg/core/errors.hpp"
#include "catsg/core/tensor.hpp"

namespace catsg {

// Dynamic reverse-mode autodiff over Tensor<S>. A graph is built per forward
// pass; backward() walks it once and the graph is dropped with the root.
template <class S>
struct Node {
  Tensor<S> val;
  Tensor<S> grad;  // allocated on first accumulation
  bool needs_grad = false;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backprop;

  explicit Node(Tensor<S> v) : val(std::move(v)) {}

  Tensor<S>& grad_buf() {
    if (grad.v.empty()) grad = Tensor<S>(val.shape);
    return grad;
  }
};

template <class S>
using Var = std::shared_ptr<Node<S>>;

using VarF = Var<float>;
using VarD = Var<double>;

// Tracking is globally toggled (sampling and target computation run untracked).
inline bool& grad_tracking_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool grad_tracking() { return grad_tracking_flag(); }

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_tracking_flag()) { grad_tracking_flag() = false; }
  ~NoGradGuard() { grad_tracking_flag() = prev; }
};

template <class S>
Var<S> leaf(Tensor<S> t, bool needs_grad = false) {
  auto n = std::make_shared<Node<S>>(std::move(t));
  n->needs_grad = needs_grad && grad_tracking();
  return n;
}

template <class S>
Var<S> constant(Tensor<S> t) {
  return leaf(std::move(t), false);
}

template <class S>
Var<S> detach(const Var<S>& x) {
  return constant(Tensor<S>(x->val));
}

// Wire an op node: value plus (if tracking is on and any parent wants
// gradients) the backward closure.
template <class S>
Var<S> make_op(Tensor<S> value, std::vector<Var<S>> parents,
               std::function<void(Node<S>&)> backprop) {
  auto n = std::make_shared<Node<S>>(std::move(value));
  if (grad_tracking()) {
    for (const auto& p : parents)
      if (p->needs_grad) {
        n->needs_grad = true;
        break;
      }
    if (n->needs_grad) {
      n->parents = std::move(parents);
      n->backprop = std::move(backprop);
    }
  }
  return n;
}

template <class S>
void accumulate(Var<S> const& target, const Tensor<S>& g) {
  if (!target->needs_grad) return;
  Tensor<S>& buf = target->grad_buf();
  for (size_t i = 0; i < buf.v.size(); ++i) buf.v[i] += g.v[i];
}

// Reverse pass from a scalar root. Gradients accumulate into node.grad of
// every reachable node with needs_grad set.
template <class S>
void backward(const Var<S>& root) {
  CATSG_CHECK(root->val.numel() == 1, NumericError,
              "backward() expects a scalar loss");
  if (!root->needs_grad) return;

  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<S>* p = node->parents[next++].get();
      if (p->needs_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buf().v[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backprop && !n->grad.v.empty()) n->backprop(*n);
  }
}

template <class S>
void zero_grad(const Var<S>& v) {
  v->grad = Tensor<S>();
}

}  // namespace catsg
