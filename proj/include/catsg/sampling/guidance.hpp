#pragma once

// Guided noise combination for backdoor-adjusted sampling:
//
//   eps_hat = (1 + omega) * sum_k w_k eps_env_k - omega * eps_base
//
// where eps_env_k conditions on (c, e_k) and eps_base on the null token.
// Reductions hold exactly: omega = 0 returns the plain mixture, K = 1 is
// standard classifier-free guidance, a one-hot w selects a single branch bit
// for bit.

#include <cmath>

#include "catsg/core/errors.hpp"
#include "catsg/core/tensor.hpp"

namespace catsg {

// eps_branches: [N*K, D, T] with branch index fastest; w: [N, K] rows on the
// probability simplex; eps_base: [N, D, T], required whenever omega != 0.
template <class S>
Tensor<S> backdoor_noise(const Tensor<S>& eps_branches, const Tensor<S>& w,
                         const Tensor<S>* eps_base, double omega) {
  CATSG_CHECK(w.rank() == 2, DataError, "backdoor_noise: w must be [N, K]");
  const int N = w.dim(0), K = w.dim(1);
  CATSG_CHECK(eps_branches.rank() == 3 && eps_branches.dim(0) == N * K,
              DataError, "backdoor_noise: branch stack must be [N*K, D, T]");
  for (int n = 0; n < N; ++n) {
    double acc = 0.0;
    for (int k = 0; k < K; ++k) {
      const double v = static_cast<double>(w.at(n, k));
      CATSG_CHECK(v >= 0.0, NumericError,
                  "backdoor_noise: negative mixture weight");
      acc += v;
    }
    CATSG_CHECK(std::abs(acc - 1.0) < 1e-4, NumericError,
                "backdoor_noise: weight row off the simplex");
  }

  const int D = eps_branches.dim(1), T = eps_branches.dim(2);
  const size_t plane = static_cast<size_t>(D) * T;
  Tensor<S> out({N, D, T});
  for (int n = 0; n < N; ++n) {
    S* dst = out.data() + static_cast<size_t>(n) * plane;
    for (int k = 0; k < K; ++k) {
      const S wk = w.at(n, k);
      const S* src =
          eps_branches.data() + (static_cast<size_t>(n) * K + k) * plane;
      for (size_t i = 0; i < plane; ++i) dst[i] += wk * src[i];
    }
  }
  if (omega == 0.0) return out;

  CATSG_CHECK(eps_base != nullptr, ConfigError,
              "backdoor_noise: omega != 0 needs the null-token branch");
  CATSG_CHECK(eps_base->rank() == 3 && eps_base->dim(0) == N &&
                  eps_base->dim(1) == D && eps_base->dim(2) == T,
              DataError, "backdoor_noise: eps_base must be [N, D, T]");
  const S up = static_cast<S>(1.0 + omega);
  const S down = static_cast<S>(omega);
  for (size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = up * out.data()[i] - down * eps_base->data()[i];
  return out;
}

}  // namespace catsg
