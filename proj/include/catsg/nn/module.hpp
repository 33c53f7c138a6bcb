#pragma once

#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "catsg/core/errors.hpp"
#include "catsg/nn/graph.hpp"

namespace catsg {

// Trainable leaf. Unlike leaf(), the flag ignores the ambient no-grad state:
// a model built inside a NoGradGuard still owns trainable parameters, the
// guard only suppresses graph construction around ops.
template <class S>
Var<S> param(Tensor<S> t) {
  auto n = std::make_shared<Node<S>>(std::move(t));
  n->needs_grad = true;
  return n;
}

// Flat registry of named parameters in construction order. The order is the
// serialization contract: checkpoints store tensors keyed by these names, and
// the optimizer walks the same sequence.
template <class S>
class ParamStore {
 public:
  Var<S> add(const std::string& name, Tensor<S> init) {
    CATSG_CHECK(taken_.insert(name).second, IoError,
                "duplicate parameter name: " + name);
    entries_.emplace_back(name, param(std::move(init)));
    return entries_.back().second;
  }

  const std::vector<std::pair<std::string, Var<S>>>& entries() const {
    return entries_;
  }

  Var<S> find(const std::string& name) const {
    for (const auto& [n, v] : entries_)
      if (n == name) return v;
    throw IoError("unknown parameter: " + name);
  }

  size_t count() const { return entries_.size(); }

  size_t numel() const {
    size_t n = 0;
    for (const auto& [name, v] : entries_) n += v->val.numel();
    return n;
  }

  void zero_grads() const {
    for (const auto& [name, v] : entries_) zero_grad(v);
  }

 private:
  std::vector<std::pair<std::string, Var<S>>> entries_;
  std::unordered_set<std::string> taken_;
};

}  // namespace catsg
