#pragma once

#include <cmath>
#include <vector>

#include "catsg/nn/module.hpp"

namespace catsg {

// Adam with bias correction and no weight decay. Moment buffers follow the
// parameter registration order; per-element math runs in double regardless
// of the parameter scalar type.
template <class S>
class Adam {
 public:
  Adam(const ParamStore<S>& ps, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, v] : ps.entries()) {
      m_.emplace_back(v->val.numel(), 0.0);
      v_.emplace_back(v->val.numel(), 0.0);
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long steps_taken() const { return step_; }

  // applies one update from the accumulated gradients; parameters with no
  // gradient this round (never touched by the loss) are left alone
  void step(const ParamStore<S>& ps) {
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    const auto& entries = ps.entries();
    for (size_t p = 0; p < entries.size(); ++p) {
      auto& var = entries[p].second;
      if (var->grad.numel() == 0) continue;
      auto& m = m_[p];
      auto& v = v_[p];
      for (size_t i = 0; i < m.size(); ++i) {
        double g = static_cast<double>(var->grad.v[i]);
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        double update = lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        var->val.v[i] = static_cast<S>(static_cast<double>(var->val.v[i]) - update);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace catsg
