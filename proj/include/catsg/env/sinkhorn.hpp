#pragma once

#include <cmath>
#include <vector>

#include "catsg/core/errors.hpp"
#include "catsg/core/tensor.hpp"

namespace catsg {

struct SinkhornConfig {
  double reg = 0.05;  // entropic regularization (not the stiffness decay rate)
  int iters = 3;
};

// Balanced soft assignments from scaled scores s: N×K. The kernel is built
// from the pre-temperature geometry, Q ∝ exp(s·τ/η), then columns and rows
// are alternately normalized (columns to N/K, rows to 1, rows last) so the
// result is row-stochastic with near-uniform column usage. Plain tensors in
// and out: targets never carry gradients.
template <class S>
Tensor<S> sinkhorn_targets(const Tensor<S>& s, const SinkhornConfig& cfg,
                           double tau = 0.1) {
  CATSG_CHECK(cfg.iters >= 1, ConfigError, "sinkhorn: iters must be >= 1");
  CATSG_CHECK(cfg.reg > 0.0, ConfigError, "sinkhorn: reg must be positive");
  CATSG_CHECK(s.rank() == 2, NumericError, "sinkhorn: scores must be N x K");
  CATSG_CHECK(s.all_finite(), NumericError, "sinkhorn: non-finite scores");
  const int N = s.dim(0), K = s.dim(1);

  // everything in double; exponentials are shifted by the global max
  std::vector<double> q(static_cast<size_t>(N) * K);
  double mx = -1e300;
  for (size_t i = 0; i < q.size(); ++i)
    mx = std::max(mx, static_cast<double>(s.v[i]) * tau / cfg.reg);
  for (size_t i = 0; i < q.size(); ++i)
    q[i] = std::exp(static_cast<double>(s.v[i]) * tau / cfg.reg - mx);

  const double col_target = static_cast<double>(N) / K;
  for (int it = 0; it < cfg.iters; ++it) {
    for (int k = 0; k < K; ++k) {
      double col = 0.0;
      for (int n = 0; n < N; ++n) col += q[static_cast<size_t>(n) * K + k];
      double f = col_target / col;
      for (int n = 0; n < N; ++n) q[static_cast<size_t>(n) * K + k] *= f;
    }
    for (int n = 0; n < N; ++n) {
      double row = 0.0;
      for (int k = 0; k < K; ++k) row += q[static_cast<size_t>(n) * K + k];
      double f = 1.0 / row;
      for (int k = 0; k < K; ++k) q[static_cast<size_t>(n) * K + k] *= f;
    }
  }

  Tensor<S> out({N, K});
  for (size_t i = 0; i < q.size(); ++i) out.v[i] = static_cast<S>(q[i]);
  return out;
}

}  // namespace catsg
