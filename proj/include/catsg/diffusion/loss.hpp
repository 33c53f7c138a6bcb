#pragma once

// Denoising losses. The mixture loss runs every environment branch of a
// sample through the denoiser in one stacked forward pass, mixes the branch
// predictions with fixed posterior weights, and penalizes the mixed
// prediction: || eps - sum_k w_k eps_hat(x_t, t, cond_k) ||^2, averaged over
// every element of the batch. The weighted sum sits inside the norm.
//
// Branch weights are plain tensors: they come from the posterior on the clean
// pair (x0, c) and are never part of the gradient path, never recomputed from
// the corrupted x_t.
//
// RNG draw order per call is part of the reproducibility contract:
//   1. one diffusion step per sample, 2. the noise tensor, 3. per-branch
//   dropout coins (skipped entirely when p_drop == 0, which keeps the
//   single-branch no-dropout path draw-for-draw identical to the plain
//   conditional loss below).

#include <cmath>
#include <vector>

#include "catsg/core/errors.hpp"
#include "catsg/core/rng.hpp"
#include "catsg/core/tensor.hpp"
#include "catsg/diffusion/model.hpp"
#include "catsg/diffusion/schedule.hpp"
#include "catsg/nn/ops.hpp"

namespace catsg {

// per-sample steps: x_t[n] = sqrt(ab[t_n]) x0[n] + sigma[t_n] eps[n]
template <class S>
Tensor<S> corrupt_batch(const Tensor<S>& x0, const std::vector<int>& tstep,
                        const Tensor<S>& eps, const DiffusionSchedule& sc) {
  const int N = x0.dim(0);
  CATSG_CHECK(static_cast<int>(tstep.size()) == N, DataError,
              "corrupt_batch: one step per sample required");
  CATSG_CHECK(x0.same_shape(eps), DataError,
              "corrupt_batch: x0/eps shape mismatch");
  const size_t plane = x0.numel() / static_cast<size_t>(N);
  Tensor<S> out(x0.shape);
  for (int n = 0; n < N; ++n) {
    sc.check_step(tstep[n]);
    const S a = static_cast<S>(std::sqrt(sc.alpha_bar[tstep[n]]));
    const S b = static_cast<S>(sc.sigma[tstep[n]]);
    const S* px = x0.data() + static_cast<size_t>(n) * plane;
    const S* pe = eps.data() + static_cast<size_t>(n) * plane;
    S* po = out.data() + static_cast<size_t>(n) * plane;
    for (size_t i = 0; i < plane; ++i) po[i] = a * px[i] + b * pe[i];
  }
  return out;
}

// tensor-level sample repetition (no gradient path needed for x_t)
template <class S>
Tensor<S> repeat_rows_tensor(const Tensor<S>& t, int K) {
  const int N = t.dim(0);
  const size_t row = t.numel() / static_cast<size_t>(N);
  std::vector<int> shp = t.shape;
  shp[0] = N * K;
  Tensor<S> out(shp);
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k)
      std::copy_n(t.data() + static_cast<size_t>(n) * row, row,
                  out.data() + (static_cast<size_t>(n) * K + k) * row);
  return out;
}

// Mixture weights for one batch, by ablation: the detached posterior for the
// standard model, uniform-random simplex rows for rand_env, a single
// all-ones branch when the bank is removed.
template <class S>
Tensor<S> branch_weights(const CatsgModel<S>& model, const Tensor<S>& x0_model,
                         const Tensor<S>& c_model, Rng& rng) {
  const int N = x0_model.dim(0);
  if (model.env_removed()) return Tensor<S>::full({N, 1}, S(1));
  const int K = model.arch.n_env;
  Tensor<S> w({N, K});
  if (model.arch.ablation == "rand_env") {
    for (int n = 0; n < N; ++n) {
      auto row = rng.simplex(K);
      for (int k = 0; k < K; ++k) w.at(n, k) = static_cast<S>(row[k]);
    }
    return w;
  }
  NoGradGuard ng;
  auto out = model.posterior(x0_model, c_model);
  return out.w->val;
}

// The stacked-branch mixture loss. `w` must have one row per sample on the
// probability simplex, with n_branches() columns.
template <class S>
Var<S> eps_mixture_loss(const CatsgModel<S>& model, const Tensor<S>& x0,
                        const Tensor<S>& c_model, const Tensor<S>& w,
                        double p_drop, Rng& rng) {
  const int N = x0.dim(0), T = x0.dim(2);
  const int K = model.n_branches();
  CATSG_CHECK(x0.rank() == 3 && x0.dim(1) == model.meta.D, DataError,
              "eps_mixture_loss: x0 must be [N, D, T]");
  CATSG_CHECK(w.rank() == 2 && w.dim(0) == N && w.dim(1) == K, DataError,
              "eps_mixture_loss: weight shape mismatch");
  CATSG_CHECK(p_drop >= 0.0 && p_drop < 1.0, ConfigError,
              "p_drop must lie in [0, 1)");
  for (int n = 0; n < N; ++n) {
    S acc = S(0);
    for (int k = 0; k < K; ++k) acc += w.at(n, k);
    CATSG_CHECK(std::abs(static_cast<double>(acc) - 1.0) < 1e-4, NumericError,
                "eps_mixture_loss: weight row off the simplex");
  }

  std::vector<int> tstep(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n)
    tstep[n] = 1 + static_cast<int>(rng.below(
                       static_cast<std::uint64_t>(model.arch.n_diff)));
  Tensor<S> eps = Tensor<S>::randn(x0.shape, rng);
  Tensor<S> x_t = corrupt_batch(x0, tstep, eps, model.schedule);

  std::vector<char> drop(static_cast<size_t>(N) * K, 0);
  bool any_drop = false;
  if (p_drop > 0.0) {
    for (auto& d : drop) {
      d = rng.uniform() < p_drop ? 1 : 0;
      any_drop = any_drop || d;
    }
  }

  std::vector<double> t_rep(static_cast<size_t>(N) * K);
  std::vector<int> env_idx(static_cast<size_t>(N) * K);
  const int null_idx = model.arch.n_env;  // row past the bank in the gather
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k) {
      const size_t i = static_cast<size_t>(n) * K + k;
      t_rep[i] = static_cast<double>(tstep[n]);
      env_idx[i] = drop[i] || model.env_removed() ? null_idx : k;
    }

  auto ctx = model.encode_context(c_model);
  Var<S> ctx_b = K == 1 ? ctx : repeat_samples(ctx, K);
  if (any_drop && model.enc_channels() > 0) {
    Tensor<S> mask({N * K, model.enc_channels(), T});
    for (int i = 0; i < N * K; ++i) {
      S v = drop[static_cast<size_t>(i)] ? S(0) : S(1);
      S* p = mask.data() +
             static_cast<size_t>(i) * model.enc_channels() * T;
      std::fill_n(p, static_cast<size_t>(model.enc_channels()) * T, v);
    }
    ctx_b = mul_const(ctx_b, std::move(mask));
  }

  auto env_rows = model.branch_env_rows(env_idx);
  auto x_in = constant(K == 1 ? std::move(x_t) : repeat_rows_tensor(x_t, K));
  auto eps_hat = model.denoise(x_in, t_rep, ctx_b, env_rows);
  auto mixed = mix_branches(eps_hat, w);
  return mse(constant(std::move(eps)), mixed);
}

// Plain conditional denoising loss: a single forward conditioned on the
// context and the first bank row, no branch machinery. The single-branch
// no-dropout mixture loss must reproduce this value bit for bit.
template <class S>
Var<S> ddpm_loss_plain(const CatsgModel<S>& model, const Tensor<S>& x0,
                       const Tensor<S>& c_model, Rng& rng) {
  const int N = x0.dim(0);
  std::vector<int> tstep(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n)
    tstep[n] = 1 + static_cast<int>(rng.below(
                       static_cast<std::uint64_t>(model.arch.n_diff)));
  Tensor<S> eps = Tensor<S>::randn(x0.shape, rng);
  Tensor<S> x_t = corrupt_batch(x0, tstep, eps, model.schedule);

  std::vector<double> td(tstep.begin(), tstep.end());
  auto ctx = model.encode_context(c_model);
  auto env_rows = model.branch_env_rows(std::vector<int>(N, 0));
  auto eps_hat = model.denoise(constant(std::move(x_t)), td, ctx, env_rows);
  return mse(constant(std::move(eps)), eps_hat);
}

}  // namespace catsg
