#pragma once

// The full generator: a 1-D U-Net denoiser conditioned on encoded context
// channels plus one environment embedding per denoising branch, together with
// the environment posterior and bank it shares parameters with.
//
// Data convention: bundles store series min-max normalized to [0, 1]; the
// denoiser operates in "model space" [-1, 1] (v -> 2v - 1). Categorical
// context channels carry integer codes and skip both transforms: the posterior
// encoder reads the raw code value, the denoiser reads a learned embedding.
//
// The null token used for guidance dropout is a learned width-H environment
// row combined with zeroed context channels, passed through the same network
// weights as every conditional branch.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "catsg/core/errors.hpp"
#include "catsg/core/rng.hpp"
#include "catsg/core/tensor.hpp"
#include "catsg/data/bundle.hpp"
#include "catsg/diffusion/schedule.hpp"
#include "catsg/env/envinfer.hpp"
#include "catsg/nn/module.hpp"
#include "catsg/nn/ops.hpp"
#include "catsg/nn/unet.hpp"

namespace catsg {

inline const std::vector<std::string>& ablation_names() {
  static const std::vector<std::string> names = {"full", "rand_env", "no_sw",
                                                 "frozen_env", "no_env"};
  return names;
}

struct ArchConfig {
  int n_env = 4;       // K, environment bank size
  int width = 32;      // H: bank row width, posterior latent, U-Net base width
  int n_diff = 1000;   // diffusion steps
  double tau = 0.1;    // posterior score temperature
  int n_peaks = 4;     // spectral peak count in the posterior features
  int emb_dim = 4;     // categorical channel embedding width
  int gn_groups = 8;   // U-Net group-norm groups
  std::string ablation = "full";

  void validate() const {
    const auto& names = ablation_names();
    bool ok = false;
    for (const auto& n : names) ok = ok || n == ablation;
    CATSG_CHECK(ok, ConfigError, "unknown ablation '" + ablation + "'");
    CATSG_CHECK(n_env >= 1, ConfigError, "n_env must be >= 1");
    CATSG_CHECK(width >= 2, ConfigError, "width must be >= 2");
    CATSG_CHECK(n_diff >= 1, ConfigError, "n_diff must be >= 1");
    CATSG_CHECK(emb_dim >= 1, ConfigError, "emb_dim must be >= 1");
  }

  json to_json() const {
    return json{{"n_env", n_env},       {"width", width},
                {"n_diff", n_diff},     {"tau", tau},
                {"n_peaks", n_peaks},   {"emb_dim", emb_dim},
                {"gn_groups", gn_groups}, {"ablation", ablation}};
  }

  static ArchConfig from_json(const json& j) {
    ArchConfig a;
    a.n_env = j.at("n_env").get<int>();
    a.width = j.at("width").get<int>();
    a.n_diff = j.at("n_diff").get<int>();
    a.tau = j.at("tau").get<double>();
    a.n_peaks = j.at("n_peaks").get<int>();
    a.emb_dim = j.at("emb_dim").get<int>();
    a.gn_groups = j.at("gn_groups").get<int>();
    a.ablation = j.at("ablation").get<std::string>();
    a.validate();
    return a;
  }
};

template <class S>
class CatsgModel {
 public:
  ArchConfig arch;
  BundleMeta meta;
  ParamStore<S> params;
  DiffusionSchedule schedule;
  EnvInfer<S> infer;
  EnvBank<S> bank;

  CatsgModel(const ArchConfig& a, const BundleMeta& m, Rng& rng)
      : arch(checked(a)),
        meta(m),
        schedule(make_schedule(a.n_diff)),
        infer(params, "infer", m.D + m.D_c, a.width, rng, a.n_peaks, a.tau),
        bank(params, "bank", a.n_env, a.width, rng) {
    CATSG_CHECK(meta.D >= 1 && meta.D_c >= 0 && meta.T >= 4, ConfigError,
                "model needs D >= 1, D_c >= 0, T >= 4");
    null_env_ = params.add("null_env", Tensor<S>::randn({1, arch.width}, rng));
    enc_channels_ = 0;
    for (int ch = 0; ch < meta.D_c; ++ch) {
      if (context_kind(ch) == Kind::Cat) {
        int v = meta.vocab_sizes[ch];
        CATSG_CHECK(v >= 1, ConfigError, "categorical channel needs vocab");
        cat_tables_.push_back(params.add(
            "ctx_emb." + std::to_string(ch),
            Tensor<S>::randn({v, arch.emb_dim}, rng, static_cast<S>(0.02))));
        cat_table_of_.push_back(static_cast<int>(cat_tables_.size()) - 1);
        enc_channels_ += arch.emb_dim;
      } else {
        cat_table_of_.push_back(-1);
        enc_channels_ += 1;
      }
    }
    unet_ = std::make_unique<UNet1d<S>>(
        params, "unet", meta.D + enc_channels_ + arch.width, meta.D,
        arch.width, rng, arch.gn_groups);
  }

  CatsgModel(const CatsgModel&) = delete;
  CatsgModel& operator=(const CatsgModel&) = delete;

  int enc_channels() const { return enc_channels_; }
  const Var<S>& null_env() const { return null_env_; }
  UNet1d<S>& unet() { return *unet_; }
  bool env_frozen() const { return arch.ablation == "frozen_env"; }
  bool env_removed() const { return arch.ablation == "no_env"; }
  // branch count of the backdoor mixture
  int n_branches() const { return env_removed() ? 1 : arch.n_env; }

  // ---- data-space <-> model-space ----

  Tensor<S> x_to_model(const Tensor<float>& x) const {
    Tensor<S> out(x.shape);
    for (size_t i = 0; i < x.numel(); ++i)
      out.data()[i] = static_cast<S>(2.0f * x.data()[i] - 1.0f);
    return out;
  }

  Tensor<float> x_from_model(const Tensor<S>& x) const {
    Tensor<float> out(x.shape);
    for (size_t i = 0; i < x.numel(); ++i)
      out.data()[i] = 0.5f * (static_cast<float>(x.data()[i]) + 1.0f);
    return out;
  }

  Tensor<S> c_to_model(const Tensor<float>& c) const {
    CATSG_CHECK(c.rank() == 3 && c.dim(1) == meta.D_c, DataError,
                "context tensor must be [N, D_c, T]");
    const int N = c.dim(0), T = c.dim(2);
    Tensor<S> out(c.shape);
    for (int ch = 0; ch < meta.D_c; ++ch) {
      bool cat = context_kind(ch) == Kind::Cat;
      for (int n = 0; n < N; ++n)
        for (int t = 0; t < T; ++t) {
          float v = c.at(n, ch, t);
          out.at(n, ch, t) = static_cast<S>(cat ? v : 2.0f * v - 1.0f);
        }
    }
    return out;
  }

  // ---- conditioning ----

  // model-space context -> concatenated conditioning channels [N, enc, T]
  Var<S> encode_context(const Tensor<S>& c_model) const {
    const int N = c_model.dim(0), T = c_model.dim(2);
    CATSG_CHECK(c_model.dim(1) == meta.D_c, DataError,
                "encode_context: channel count mismatch");
    std::vector<Var<S>> parts;
    parts.reserve(static_cast<size_t>(meta.D_c));
    for (int ch = 0; ch < meta.D_c; ++ch) {
      if (context_kind(ch) == Kind::Cat) {
        std::vector<int> idx(static_cast<size_t>(N) * T);
        for (int n = 0; n < N; ++n)
          for (int t = 0; t < T; ++t)
            idx[static_cast<size_t>(n) * T + t] = static_cast<int>(
                std::lround(static_cast<double>(c_model.at(n, ch, t))));
        parts.push_back(embedding_time(cat_tables_[cat_table_of_[ch]], idx,
                                       N, T));
      } else {
        Tensor<S> one({N, 1, T});
        for (int n = 0; n < N; ++n)
          for (int t = 0; t < T; ++t) one.at(n, 0, t) = c_model.at(n, ch, t);
        parts.push_back(constant(std::move(one)));
      }
    }
    if (parts.empty()) return constant(Tensor<S>({N, 0, T}));
    return parts.size() == 1 ? parts[0] : concat_channels(parts);
  }

  // bank rows as used for conditioning; gradient-stopped when frozen
  Var<S> cond_bank_rows() const {
    return env_frozen() ? detach(bank.E) : bank.E;
  }

  // bank copy used for posterior scoring; gradient-stopped when frozen
  EnvBank<S> scoring_bank() const {
    EnvBank<S> b = bank;
    if (env_frozen()) b.E = detach(bank.E);
    return b;
  }

  // environment posterior from model-space (x, c)
  EnvInferOutput<S> posterior(const Tensor<S>& x_model,
                              const Tensor<S>& c_model) const {
    EnvBank<S> b = scoring_bank();
    return infer.forward(constant(Tensor<S>(x_model)),
                         constant(Tensor<S>(c_model)), b);
  }

  // per-branch environment rows: idx in [0, K) selects a bank row, idx == K
  // selects the learned null row (the extension keeps one gather for both)
  Var<S> branch_env_rows(const std::vector<int>& idx) const {
    auto ext = concat_rows(cond_bank_rows(), null_env_);
    return gather_rows(ext, idx);
  }

  // ---- denoiser ----

  // x_t:[B,D,T], ctx:[B,enc,T] (already dropout-masked), env:[B,H] -> eps
  Var<S> denoise(const Var<S>& x_t, const std::vector<double>& tsteps,
                 const Var<S>& ctx, const Var<S>& env_rows) const {
    const int T = x_t->val.dim(2);
    auto env_ch = repeat_time(env_rows, T);
    std::vector<Var<S>> chans;
    chans.push_back(x_t);
    if (ctx->val.dim(1) > 0) chans.push_back(ctx);
    chans.push_back(env_ch);
    return (*unet_)(chans.size() == 1 ? chans[0] : concat_channels(chans),
                    tsteps);
  }

 private:
  enum class Kind { Cont, Cat };

  static const ArchConfig& checked(const ArchConfig& a) {
    a.validate();
    return a;
  }

  Kind context_kind(int ch) const {
    if (meta.context_kinds.empty()) return Kind::Cont;
    return meta.context_kinds[static_cast<size_t>(ch)] == "cat" ? Kind::Cat
                                                                : Kind::Cont;
  }

  Var<S> null_env_;
  std::vector<Var<S>> cat_tables_;
  std::vector<int> cat_table_of_;  // per context channel, -1 for continuous
  int enc_channels_ = 0;
  std::unique_ptr<UNet1d<S>> unet_;
};

}  // namespace catsg
