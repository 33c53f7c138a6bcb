#pragma once

// Reverse-process drivers. Both samplers consume a guided noise functor
// (state, diffusion time) -> eps and run gradient-free.
//
// DDPM: ancestral steps on a uniformly respaced effective schedule, posterior
// noise sqrt(beta_t) z, zero noise on the final step.
//
// DPM-Solver-2S: second-order exponential-integrator steps on a grid uniform
// in the half-log-SNR lambda, one midpoint evaluation per step, and a closing
// x0-prediction step at t = 1. Deterministic given the initial state.
//
// Interventional and counterfactual sampling share one loop and differ only
// in where the mixture weights come from: re-inferred from the current state
// every evaluation (stepwise responsibilities) versus abducted once from the
// factual pair and frozen. `posterior_evals` on the result records which
// happened. Observational sampling is the interventional path with omega 0.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "catsg/core/errors.hpp"
#include "catsg/core/rng.hpp"
#include "catsg/core/tensor.hpp"
#include "catsg/data/bundle.hpp"
#include "catsg/diffusion/model.hpp"
#include "catsg/diffusion/schedule.hpp"
#include "catsg/sampling/guidance.hpp"

namespace catsg {

template <class S>
using EpsFn = std::function<Tensor<S>(const Tensor<S>&, double)>;

struct SampleConfig {
  std::string mode = "int";      // obs | int | cf
  double omega = 1.0;
  int steps = 20;
  std::string sampler = "dpms2";  // ddpm | dpms2
  std::uint64_t seed = 0;
  // Few-step solvers can run away when the denoiser is evaluated far off the
  // data manifold: one bad eps estimate inflates the state, which makes the
  // next estimate worse. Clamping the state to a band that comfortably
  // contains the forward process (data in [-1, 1] plus unit noise) breaks
  // the feedback loop without touching in-range trajectories. 0 disables.
  double clip = 3.0;

  void validate(int n_diff) const {
    CATSG_CHECK(mode == "obs" || mode == "int" || mode == "cf", ConfigError,
                "sample mode must be obs, int, or cf");
    CATSG_CHECK(sampler == "ddpm" || sampler == "dpms2", ConfigError,
                "sampler must be ddpm or dpms2");
    CATSG_CHECK(steps >= 1, ConfigError, "steps must be >= 1");
    CATSG_CHECK(sampler != "ddpm" || steps <= n_diff, ConfigError,
                "ddpm cannot take more steps than the training schedule");
    CATSG_CHECK(std::isfinite(omega) && omega >= 0.0, ConfigError,
                "omega must be finite and non-negative");
    CATSG_CHECK(std::isfinite(clip) && clip >= 0.0, ConfigError,
                "clip must be finite and non-negative (0 disables)");
  }

  json to_json() const {
    return json{{"mode", mode},
                {"omega", omega},
                {"steps", steps},
                {"sampler", sampler},
                {"seed", seed},
                {"clip", clip}};
  }
};

// ---------------------------------------------------------------- ddpm

// One ancestral step: mu = (x - beta/sigma * eps) / sqrt(alpha), plus
// sqrt(beta) noise except at the final step.
template <class S>
Tensor<S> ddpm_step(const Tensor<S>& x_t, const Tensor<S>& eps_hat, int t,
                    const DiffusionSchedule& sc, Rng& rng) {
  sc.check_step(t);
  CATSG_CHECK(x_t.same_shape(eps_hat), DataError,
              "ddpm_step: state/noise shape mismatch");
  const S inv_sqrt_alpha = static_cast<S>(1.0 / std::sqrt(sc.alpha[t]));
  const S coef = static_cast<S>(sc.beta[t] / sc.sigma[t]);
  Tensor<S> out(x_t.shape);
  for (size_t i = 0; i < out.numel(); ++i)
    out.data()[i] =
        inv_sqrt_alpha * (x_t.data()[i] - coef * eps_hat.data()[i]);
  if (t > 1) {
    const S sd = static_cast<S>(std::sqrt(sc.beta[t]));
    for (size_t i = 0; i < out.numel(); ++i)
      out.data()[i] += sd * static_cast<S>(rng.normal());
  }
  return out;
}

// A subsampled schedule: keep n_keep steps placed uniformly in t (endpoints
// included), with effective betas rebuilt from consecutive alpha_bar ratios.
// orig_t maps an effective index back to the training-time step the network
// expects. Both vectors stay 1-indexed.
struct RespacedSchedule {
  DiffusionSchedule eff;
  std::vector<int> orig_t;
};

inline RespacedSchedule respace_uniform(const DiffusionSchedule& sc,
                                        int n_keep) {
  CATSG_CHECK(n_keep >= 1 && n_keep <= sc.n_steps, ConfigError,
              "respace: kept step count out of range");
  RespacedSchedule rs;
  rs.orig_t.assign(static_cast<size_t>(n_keep) + 1, 0);
  if (n_keep == 1) {
    rs.orig_t[1] = sc.n_steps;
  } else {
    for (int i = 1; i <= n_keep; ++i)
      rs.orig_t[i] = 1 + static_cast<int>(std::llround(
                             static_cast<double>(sc.n_steps - 1) * (i - 1) /
                             (n_keep - 1)));
  }
  auto& e = rs.eff;
  e.n_steps = n_keep;
  e.beta.assign(static_cast<size_t>(n_keep) + 1, 0.0);
  e.alpha = e.beta;
  e.alpha_bar = e.beta;
  e.sigma = e.beta;
  e.lambda = e.beta;
  double prev = 1.0;
  for (int i = 1; i <= n_keep; ++i) {
    const double ab = sc.alpha_bar[rs.orig_t[i]];
    e.beta[i] = 1.0 - ab / prev;
    e.alpha[i] = ab / prev;
    e.alpha_bar[i] = ab;
    e.sigma[i] = std::sqrt(1.0 - ab);
    e.lambda[i] = 0.5 * std::log(ab / (1.0 - ab));
    prev = ab;
  }
  return rs;
}

namespace detail {

template <class S>
void clamp_state(Tensor<S>& x, double clip) {
  if (clip <= 0.0) return;
  const S hi = static_cast<S>(clip);
  for (size_t i = 0; i < x.numel(); ++i)
    x.data()[i] = std::min(hi, std::max(-hi, x.data()[i]));
}

}  // namespace detail

template <class S>
Tensor<S> sample_ddpm(const EpsFn<S>& eps_fn, Tensor<S> x,
                      const RespacedSchedule& rs, Rng& rng,
                      double clip = 0.0) {
  for (int i = rs.eff.n_steps; i >= 1; --i) {
    Tensor<S> eps = eps_fn(x, static_cast<double>(rs.orig_t[i]));
    x = ddpm_step(x, eps, i, rs.eff, rng);
    detail::clamp_state(x, clip);
  }
  return x;
}

// ---------------------------------------------------------------- dpm-2s

// One second-order step from lam_from to lam_to (> lam_from):
//   u      = sqrt(a_s)/sqrt(a_i) x - sigma_s (e^{h/2} - 1) eps(x,  t_i)
//   x_next = sqrt(a_n)/sqrt(a_i) x - sigma_n (e^h     - 1) eps(u, t_s)
// with the midpoint at lam_s = lam_from + h/2 and alpha_bar values taken
// from the closed-form inverse of lambda.
template <class S>
Tensor<S> dpm_solver_2s_step(const Tensor<S>& x, double lam_from,
                             double lam_to, const DiffusionSchedule& sc,
                             const EpsFn<S>& eps_fn) {
  CATSG_CHECK(lam_to > lam_from, ConfigError,
              "dpm solver: lambda grid must be strictly increasing");
  const double h = lam_to - lam_from;
  const double lam_s = lam_from + 0.5 * h;
  const double t_i = sc.t_of_lambda(lam_from);
  const double t_s = sc.t_of_lambda(lam_s);
  const double a_i = DiffusionSchedule::alpha_bar_of_lambda(lam_from);
  const double a_s = DiffusionSchedule::alpha_bar_of_lambda(lam_s);
  const double a_n = DiffusionSchedule::alpha_bar_of_lambda(lam_to);

  const S ru = static_cast<S>(std::sqrt(a_s) / std::sqrt(a_i));
  const S cu = static_cast<S>(std::sqrt(1.0 - a_s) * std::expm1(0.5 * h));
  Tensor<S> eps_i = eps_fn(x, t_i);
  Tensor<S> u(x.shape);
  for (size_t j = 0; j < u.numel(); ++j)
    u.data()[j] = ru * x.data()[j] - cu * eps_i.data()[j];

  const S rx = static_cast<S>(std::sqrt(a_n) / std::sqrt(a_i));
  const S cx = static_cast<S>(std::sqrt(1.0 - a_n) * std::expm1(h));
  Tensor<S> eps_s = eps_fn(u, t_s);
  Tensor<S> out(x.shape);
  for (size_t j = 0; j < out.numel(); ++j)
    out.data()[j] = rx * x.data()[j] - cx * eps_s.data()[j];
  return out;
}

// n_steps outer steps on a uniform lambda grid from t = n_diff down to t = 1,
// then the closing x0 prediction: (x - sigma_1 eps(x, 1)) / sqrt(alpha_bar_1).
template <class S>
Tensor<S> sample_dpm_2s(const EpsFn<S>& eps_fn, Tensor<S> x,
                        const DiffusionSchedule& sc, int n_steps,
                        double clip = 0.0) {
  CATSG_CHECK(n_steps >= 1, ConfigError, "dpm solver needs at least one step");
  const double lam_lo = sc.lambda[sc.n_steps];
  const double lam_hi = sc.lambda[1];
  for (int i = 0; i < n_steps; ++i) {
    const double from = lam_lo + (lam_hi - lam_lo) * i / n_steps;
    const double to = lam_lo + (lam_hi - lam_lo) * (i + 1) / n_steps;
    x = dpm_solver_2s_step(x, from, to, sc, eps_fn);
    detail::clamp_state(x, clip);
  }
  Tensor<S> eps1 = eps_fn(x, 1.0);
  const S inv = static_cast<S>(1.0 / std::sqrt(sc.alpha_bar[1]));
  const S sg = static_cast<S>(sc.sigma[1]);
  for (size_t j = 0; j < x.numel(); ++j)
    x.data()[j] = inv * (x.data()[j] - sg * eps1.data()[j]);
  detail::clamp_state(x, clip);
  return x;
}

// ---------------------------------------------------------------- guided eps

// Evaluates every environment branch (and, when omega != 0, the null-token
// branch) of the denoiser in one stacked forward and combines them with
// backdoor_noise. Context and environment rows are assembled once; only the
// state changes between calls.
template <class S>
class GuidedEps {
 public:
  GuidedEps(const CatsgModel<S>& model, const Tensor<S>& c_model, double omega,
            std::function<Tensor<S>(const Tensor<S>&, double)> weights)
      : model_(model),
        omega_(omega),
        weights_(std::move(weights)),
        n_(c_model.dim(0)),
        k_(model.n_branches()) {
    NoGradGuard ng;
    const int T = model_.meta.T;
    const int enc = model_.enc_channels();
    const int rows = total_rows();
    Tensor<S> ctx_one = model_.encode_context(c_model)->val;
    Tensor<S> ctx_all({rows, enc, T});
    const size_t plane = static_cast<size_t>(enc) * T;
    std::vector<int> env_idx(static_cast<size_t>(rows));
    const int null_idx = model_.arch.n_env;
    for (int n = 0; n < n_; ++n)
      for (int k = 0; k < k_; ++k) {
        const size_t r = static_cast<size_t>(n) * k_ + k;
        std::copy_n(ctx_one.data() + static_cast<size_t>(n) * plane, plane,
                    ctx_all.data() + r * plane);
        env_idx[r] = model_.env_removed() ? null_idx : k;
      }
    // null-token rows: context channels stay zero, environment row is null
    for (int n = 0; n < n_ * base_rows(); ++n)
      env_idx[static_cast<size_t>(n_) * k_ + n] = null_idx;
    ctx_ = constant(std::move(ctx_all));
    env_ = model_.branch_env_rows(env_idx);
  }

  Tensor<S> operator()(const Tensor<S>& x_t, double t) {
    NoGradGuard ng;
    const int D = model_.meta.D, T = model_.meta.T;
    const int rows = total_rows();
    const size_t plane = static_cast<size_t>(D) * T;
    Tensor<S> x_all({rows, D, T});
    for (int n = 0; n < n_; ++n) {
      const S* src = x_t.data() + static_cast<size_t>(n) * plane;
      for (int k = 0; k < k_; ++k)
        std::copy_n(src, plane,
                    x_all.data() + (static_cast<size_t>(n) * k_ + k) * plane);
      if (base_rows())
        std::copy_n(src, plane,
                    x_all.data() + (static_cast<size_t>(n_) * k_ + n) * plane);
    }
    std::vector<double> tv(static_cast<size_t>(rows), t);
    Tensor<S> eps_all =
        model_.denoise(constant(std::move(x_all)), tv, ctx_, env_)->val;

    Tensor<S> eps_env({n_ * k_, D, T});
    std::copy_n(eps_all.data(), eps_env.numel(), eps_env.data());
    Tensor<S> eps_base;
    if (base_rows()) {
      eps_base = Tensor<S>({n_, D, T});
      std::copy_n(eps_all.data() + static_cast<size_t>(n_) * k_ * plane,
                  eps_base.numel(), eps_base.data());
    }
    w_last_ = weights_(x_t, t);
    return backdoor_noise(eps_env, w_last_,
                          base_rows() ? &eps_base : nullptr, omega_);
  }

  const Tensor<S>& last_weights() const { return w_last_; }

 private:
  int base_rows() const { return omega_ != 0.0 ? 1 : 0; }
  int total_rows() const { return n_ * (k_ + base_rows()); }

  const CatsgModel<S>& model_;
  double omega_;
  std::function<Tensor<S>(const Tensor<S>&, double)> weights_;
  int n_, k_;
  Var<S> ctx_, env_;
  Tensor<S> w_last_;
};

// ---------------------------------------------------------------- front ends

struct SampleResult {
  Tensor<float> x_norm;   // [N, D, T], normalized units
  Tensor<double> x;       // same series in data units
  Tensor<float> w_last;   // mixture weights used at the last evaluation
  int posterior_evals = 0;
};

namespace detail {

// weight provider per ablation; counts posterior evaluations through `evals`
template <class S>
std::function<Tensor<S>(const Tensor<S>&, double)> stepwise_weights(
    const CatsgModel<S>& model, const Tensor<S>& c_model, Rng& rng_w,
    int* evals) {
  if (model.env_removed())
    return [n = c_model.dim(0)](const Tensor<S>&, double) {
      return Tensor<S>::full({n, 1}, S(1));
    };
  if (model.arch.ablation == "rand_env")
    return [&rng_w, n = c_model.dim(0), k = model.arch.n_env](const Tensor<S>&,
                                                              double) {
      Tensor<S> w({n, k});
      for (int i = 0; i < n; ++i) {
        auto row = rng_w.simplex(k);
        for (int j = 0; j < k; ++j) w.at(i, j) = static_cast<S>(row[j]);
      }
      return w;
    };
  return [&model, c_model, evals](const Tensor<S>& x_t, double) {
    NoGradGuard ng;
    ++*evals;
    return model.posterior(x_t, c_model).w->val;
  };
}

template <class S>
SampleResult run_reverse(const CatsgModel<S>& model, GuidedEps<S>& guided,
                         int n, const SampleConfig& cfg, Rng& rng) {
  Tensor<S> x = Tensor<S>::randn({n, model.meta.D, model.meta.T}, rng);
  EpsFn<S> fn = [&guided](const Tensor<S>& s, double t) { return guided(s, t); };
  if (cfg.sampler == "ddpm") {
    auto rs = respace_uniform(model.schedule, cfg.steps);
    x = sample_ddpm(fn, std::move(x), rs, rng, cfg.clip);
  } else {
    x = sample_dpm_2s(fn, std::move(x), model.schedule, cfg.steps, cfg.clip);
  }
  SampleResult res;
  res.x_norm = model.x_from_model(x);
  res.x = denormalize(res.x_norm, model.meta, 0);
  res.w_last = guided.last_weights().template cast<float>();
  return res;
}

}  // namespace detail

// Backdoor-adjusted sampling: responsibilities re-inferred from the current
// model-space state at every denoiser evaluation.
template <class S>
SampleResult sample_interventional(const CatsgModel<S>& model,
                                   const Tensor<float>& c_norm,
                                   const SampleConfig& cfg) {
  cfg.validate(model.arch.n_diff);
  CATSG_CHECK(c_norm.rank() == 3 && c_norm.dim(1) == model.meta.D_c &&
                  c_norm.dim(2) == model.meta.T,
              DataError, "sample: context must be [N, D_c, T]");
  Tensor<S> c_model = model.c_to_model(c_norm);
  Rng rng = named_stream(cfg.seed, "sample");
  Rng rng_w = named_stream(cfg.seed, "sample.weights");
  int evals = 0;
  GuidedEps<S> guided(model, c_model, cfg.omega,
                      detail::stepwise_weights(model, c_model, rng_w, &evals));
  auto res = detail::run_reverse(model, guided, c_norm.dim(0), cfg, rng);
  res.posterior_evals = evals;
  return res;
}

// Observational sampling is the mixture alone: the interventional path with
// the guidance scale pinned to zero.
template <class S>
SampleResult sample_observational(const CatsgModel<S>& model,
                                  const Tensor<float>& c_norm,
                                  SampleConfig cfg) {
  cfg.omega = 0.0;
  return sample_interventional(model, c_norm, cfg);
}

// Counterfactual generation: abduct the environment posterior once from the
// factual pair, freeze it, condition on the edited context, and regenerate
// from fresh Gaussian noise.
template <class S>
SampleResult sample_counterfactual(const CatsgModel<S>& model,
                                   const Tensor<float>& x_fact_norm,
                                   const Tensor<float>& c_fact_norm,
                                   const Tensor<float>& c_prime_norm,
                                   const SampleConfig& cfg) {
  cfg.validate(model.arch.n_diff);
  const int n = x_fact_norm.dim(0);
  CATSG_CHECK(c_fact_norm.dim(0) == n && c_prime_norm.dim(0) == n &&
                  c_fact_norm.same_shape(c_prime_norm),
              DataError, "sample cf: factual and edited shapes disagree");
  Tensor<S> x_f = model.x_to_model(x_fact_norm);
  Tensor<S> c_f = model.c_to_model(c_fact_norm);
  Tensor<S> c_p = model.c_to_model(c_prime_norm);

  Rng rng = named_stream(cfg.seed, "sample");
  Rng rng_w = named_stream(cfg.seed, "sample.weights");
  int evals = 0;
  Tensor<S> w_frozen;
  if (model.env_removed()) {
    w_frozen = Tensor<S>::full({n, 1}, S(1));
  } else if (model.arch.ablation == "rand_env") {
    w_frozen = Tensor<S>({n, model.arch.n_env});
    for (int i = 0; i < n; ++i) {
      auto row = rng_w.simplex(model.arch.n_env);
      for (int j = 0; j < model.arch.n_env; ++j)
        w_frozen.at(i, j) = static_cast<S>(row[j]);
    }
  } else {
    NoGradGuard ng;
    ++evals;
    w_frozen = model.posterior(x_f, c_f).w->val;
  }

  GuidedEps<S> guided(
      model, c_p, cfg.omega,
      [w_frozen](const Tensor<S>&, double) { return w_frozen; });
  auto res = detail::run_reverse(model, guided, n, cfg, rng);
  res.posterior_evals = evals;
  return res;
}

}  // namespace catsg
