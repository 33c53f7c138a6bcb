#pragma once

// Two-phase training loop. A warmup phase shapes the environment machinery
// alone (swapped-prediction loss on two augmented views plus the bank
// orthogonality penalty); the joint phase adds the denoising mixture loss.
// Ablations switch individual terms off:
//   no_sw       drops the swapped loss everywhere
//   frozen_env  stops gradients into the bank and drops the orthogonality term
//   no_env      single null-environment branch, no swapped/orthogonality terms
//   rand_env    replaces posterior weights with uniform simplex draws
//
// Real-dataset runs keep the swapped loss out of the joint phase
// (sw_in_joint = false); synthetic runs keep it on.
//
// A non-finite total loss aborts with a diagnostic snapshot (recent loss
// history) written next to the run outputs when a run directory is set.

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "catsg/core/errors.hpp"
#include "catsg/core/rng.hpp"
#include "catsg/data/bundle.hpp"
#include "catsg/diffusion/loss.hpp"
#include "catsg/diffusion/model.hpp"
#include "catsg/env/augment.hpp"
#include "catsg/env/sinkhorn.hpp"
#include "catsg/env/swav.hpp"
#include "catsg/nn/adam.hpp"

namespace catsg {

struct TrainConfig {
  int steps = 2000;        // joint-phase optimizer steps
  int warmup_steps = 200;  // environment-only steps before the joint phase
  int batch = 64;
  double lr = 1e-3;
  double p_drop = 0.2;     // per-branch conditioning dropout
  double alpha_sw = 0.5;
  double beta_orth = 0.5;
  bool sw_in_joint = true;
  int checkpoint_every = 0;  // 0: only the final callback fires
  int log_every = 0;         // 0: silent
  std::uint64_t seed = 1;
  std::string run_dir;  // diagnostic snapshot location; empty: no snapshot

  json to_json() const {
    return json{{"steps", steps},
                {"warmup_steps", warmup_steps},
                {"batch", batch},
                {"lr", lr},
                {"p_drop", p_drop},
                {"alpha_sw", alpha_sw},
                {"beta_orth", beta_orth},
                {"sw_in_joint", sw_in_joint},
                {"checkpoint_every", checkpoint_every},
                {"log_every", log_every},
                {"seed", seed}};
  }

  static TrainConfig from_json(const json& j) {
    TrainConfig t;
    t.steps = j.value("steps", t.steps);
    t.warmup_steps = j.value("warmup_steps", t.warmup_steps);
    t.batch = j.value("batch", t.batch);
    t.lr = j.value("lr", t.lr);
    t.p_drop = j.value("p_drop", t.p_drop);
    t.alpha_sw = j.value("alpha_sw", t.alpha_sw);
    t.beta_orth = j.value("beta_orth", t.beta_orth);
    t.sw_in_joint = j.value("sw_in_joint", t.sw_in_joint);
    t.checkpoint_every = j.value("checkpoint_every", t.checkpoint_every);
    t.log_every = j.value("log_every", t.log_every);
    t.seed = j.value("seed", t.seed);
    return t;
  }

  void validate() const {
    CATSG_CHECK(steps >= 0 && warmup_steps >= 0, ConfigError,
                "step counts must be non-negative");
    CATSG_CHECK(batch >= 1, ConfigError, "batch must be >= 1");
    CATSG_CHECK(lr > 0.0, ConfigError, "lr must be positive");
    CATSG_CHECK(p_drop >= 0.0 && p_drop < 1.0, ConfigError,
                "p_drop must lie in [0, 1)");
  }
};

struct StepRecord {
  int step = 0;
  bool warmup = false;
  double total = 0.0, l_eps = 0.0, l_sw = 0.0, l_orth = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> history;
  int steps_done = 0;  // joint steps completed
};

template <class S>
class Trainer {
 public:
  Trainer(CatsgModel<S>& model, const Bundle& data, TrainConfig tc)
      : model_(model),
        tc_(std::move(tc)),
        opt_(model.params, tc_.lr),
        rng_batch_(named_stream(tc_.seed, "train.batch")),
        rng_noise_(named_stream(tc_.seed, "train.noise")),
        rng_aug_(named_stream(tc_.seed, "train.aug")),
        rng_weights_(named_stream(tc_.seed, "train.weights")) {
    tc_.validate();
    const SplitData& train = data.split("train");
    CATSG_CHECK(train.x.dim(0) >= 1, DataError, "train split is empty");
    x_ = model_.x_to_model(train.x);
    c_ = model_.c_to_model(train.c);
    x_std_ = channel_stds(x_, {});
    c_std_ = channel_stds(c_, model_.meta.context_kinds);
  }

  // swapped-prediction loss participates in this phase?
  bool sw_active(bool warmup) const {
    if (model_.env_removed() || model_.arch.ablation == "no_sw") return false;
    if (tc_.alpha_sw <= 0.0) return false;
    return warmup || tc_.sw_in_joint;
  }

  bool orth_active() const {
    return !model_.env_removed() && !model_.env_frozen() &&
           tc_.beta_orth > 0.0;
  }

  TrainResult run(const std::function<void(int)>& on_checkpoint = {}) {
    TrainResult res;
    const bool warmup_has_terms = sw_active(true) || orth_active();
    const int warmup = warmup_has_terms ? tc_.warmup_steps : 0;
    for (int step = 1; step <= warmup; ++step)
      res.history.push_back(one_step(step, true));
    for (int step = 1; step <= tc_.steps; ++step) {
      res.history.push_back(one_step(step, false));
      res.steps_done = step;
      if (on_checkpoint && tc_.checkpoint_every > 0 &&
          step % tc_.checkpoint_every == 0 && step != tc_.steps)
        on_checkpoint(step);
    }
    if (on_checkpoint) on_checkpoint(tc_.steps);
    return res;
  }

 private:
  StepRecord one_step(int step, bool warmup) {
    const int n_train = x_.dim(0);
    std::vector<int> idx(static_cast<size_t>(tc_.batch));
    for (auto& i : idx)
      i = static_cast<int>(
          rng_batch_.below(static_cast<std::uint64_t>(n_train)));
    Tensor<S> xb = take_rows(x_, idx);
    Tensor<S> cb = take_rows(c_, idx);

    StepRecord rec;
    rec.step = step;
    rec.warmup = warmup;

    Var<S> total;
    auto add_term = [&total](const Var<S>& term, double weight) {
      auto scaled = scale(term, weight);
      total = total ? add(total, scaled) : scaled;
    };

    if (sw_active(warmup)) {
      AugmentConfig acfg;
      auto v1 = augment(xb, cb, x_std_, c_std_, acfg, rng_aug_);
      auto v2 = augment(xb, cb, x_std_, c_std_, acfg, rng_aug_);
      EnvBank<S> b = model_.scoring_bank();
      auto l_sw = swapped_loss(model_.infer, b, constant(std::move(v1.x)),
                               constant(std::move(v1.c)),
                               constant(std::move(v2.x)),
                               constant(std::move(v2.c)), SinkhornConfig{});
      rec.l_sw = value_of(l_sw);
      add_term(l_sw, tc_.alpha_sw);
    }
    if (orth_active()) {
      auto l_orth = orthogonality_loss(model_.bank);
      rec.l_orth = value_of(l_orth);
      add_term(l_orth, tc_.beta_orth);
    }
    if (!warmup) {
      Tensor<S> w = branch_weights(model_, xb, cb, rng_weights_);
      auto l_eps =
          eps_mixture_loss(model_, xb, cb, w, tc_.p_drop, rng_noise_);
      rec.l_eps = value_of(l_eps);
      add_term(l_eps, 1.0);
    }
    CATSG_CHECK(total, ConfigError, "training step has no active loss terms");
    rec.total = value_of(total);

    if (!std::isfinite(rec.total)) abort_with_snapshot(rec);

    model_.params.zero_grads();
    backward(total);
    opt_.step(model_.params);

    if (tc_.log_every > 0 && step % tc_.log_every == 0)
      std::cerr << "[train] " << (warmup ? "warmup " : "joint ") << step
                << " total " << rec.total << " eps " << rec.l_eps << " sw "
                << rec.l_sw << " orth " << rec.l_orth << "\n";
    history_tail_.push_back(rec);
    if (history_tail_.size() > 20) history_tail_.erase(history_tail_.begin());
    return rec;
  }

  [[noreturn]] void abort_with_snapshot(const StepRecord& rec) {
    if (!tc_.run_dir.empty()) {
      json snap{{"step", rec.step},
                {"phase", rec.warmup ? "warmup" : "joint"},
                {"total", rec.total},
                {"l_eps", rec.l_eps},
                {"l_sw", rec.l_sw},
                {"l_orth", rec.l_orth}};
      json tail = json::array();
      for (const auto& r : history_tail_)
        tail.push_back(json{{"step", r.step},
                            {"warmup", r.warmup},
                            {"total", r.total}});
      snap["recent"] = std::move(tail);
      detail::write_file_atomic(
          std::filesystem::path(tc_.run_dir) / "diagnostic.json",
          snap.dump(2));
    }
    throw NumericError("training loss is not finite at " +
                       std::string(rec.warmup ? "warmup" : "joint") +
                       " step " + std::to_string(rec.step));
  }

  static double value_of(const Var<S>& v) {
    return static_cast<double>(v->val.data()[0]);
  }

  static Tensor<S> take_rows(const Tensor<S>& t, const std::vector<int>& idx) {
    const size_t row = t.numel() / static_cast<size_t>(t.dim(0));
    std::vector<int> shp = t.shape;
    shp[0] = static_cast<int>(idx.size());
    Tensor<S> out(shp);
    for (size_t i = 0; i < idx.size(); ++i)
      std::copy_n(t.data() + static_cast<size_t>(idx[i]) * row, row,
                  out.data() + i * row);
    return out;
  }

  // per-channel std across samples and time; categorical channels enter the
  // augmentations untouched, so their entry is forced to zero
  static std::vector<double> channel_stds(
      const Tensor<S>& t, const std::vector<std::string>& kinds) {
    const int N = t.dim(0), C = t.dim(1), T = t.dim(2);
    std::vector<double> out(static_cast<size_t>(C), 0.0);
    for (int ch = 0; ch < C; ++ch) {
      if (!kinds.empty() && kinds[static_cast<size_t>(ch)] == "cat") continue;
      double sum = 0.0, sq = 0.0;
      for (int n = 0; n < N; ++n)
        for (int tt = 0; tt < T; ++tt) {
          double v = static_cast<double>(t.at(n, ch, tt));
          sum += v;
          sq += v * v;
        }
      const double cnt = static_cast<double>(N) * T;
      double var = sq / cnt - (sum / cnt) * (sum / cnt);
      out[static_cast<size_t>(ch)] = var > 0.0 ? std::sqrt(var) : 0.0;
    }
    return out;
  }

  CatsgModel<S>& model_;
  TrainConfig tc_;
  Adam<S> opt_;
  Rng rng_batch_, rng_noise_, rng_aug_, rng_weights_;
  Tensor<S> x_, c_;
  std::vector<double> x_std_, c_std_;
  std::vector<StepRecord> history_tail_;
};

}  // namespace catsg
