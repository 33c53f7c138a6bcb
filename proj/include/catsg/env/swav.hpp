#pragma once

#include "catsg/env/envinfer.hpp"
#include "catsg/env/sinkhorn.hpp"

namespace catsg {

// Swapped prediction: each view predicts the other view's balanced
// assignment. Targets come from Sinkhorn on the detached scores, so only the
// log-softmax side carries gradients.
template <class S>
Var<S> swapped_loss(const EnvInfer<S>& infer, const EnvBank<S>& bank,
                    const Var<S>& x1, const Var<S>& c1, const Var<S>& x2,
                    const Var<S>& c2, const SinkhornConfig& cfg) {
  if (x1->val.dim(0) == 1)
    warn("swapped_loss: batch of one, balanced assignment is degenerate");
  auto o1 = infer.forward(x1, c1, bank);
  auto o2 = infer.forward(x2, c2, bank);
  Tensor<S> t1 = sinkhorn_targets(o1.s->val, cfg, infer.tau);
  Tensor<S> t2 = sinkhorn_targets(o2.s->val, cfg, infer.tau);
  return add(cross_entropy_rows(t2, log_softmax_rows(o1.s)),
             cross_entropy_rows(t1, log_softmax_rows(o2.s)));
}

}  // namespace catsg
