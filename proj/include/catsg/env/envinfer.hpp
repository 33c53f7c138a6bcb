#pragma once

#include <string>

#include "catsg/nn/layers.hpp"
#include "catsg/nn/tcn.hpp"

namespace catsg {

// Learnable bank of K environment embeddings of width H. Stored rows are
// unconstrained; every consumer scores against an ℓ2-normalized copy.
template <class S>
struct EnvBank {
  Var<S> E;
  int K, H;

  EnvBank(ParamStore<S>& ps, const std::string& name, int k, int h, Rng& rng)
      : K(k), H(h) {
    CATSG_CHECK(k >= 1 && h >= 1, ConfigError,
                "environment bank needs K >= 1 and H >= 1");
    E = ps.add(name + ".E", Tensor<S>::randn({k, h}, rng));
  }

  Var<S> normalized() const { return l2_normalize_rows(E); }
};

// diversity pressure on the bank: squared distance of the normalized-row
// Gram matrix from the identity
template <class S>
Var<S> orthogonality_loss(const EnvBank<S>& bank) {
  return gram_orth_loss(bank.normalized());
}

template <class S>
struct EnvInferOutput {
  Var<S> h;  // N×H latents (pre-normalization)
  Var<S> s;  // N×K temperature-scaled cosine scores
  Var<S> w;  // N×K posterior weights, rows on the simplex
};

// Posterior over environments: a causal temporal encoder, pooled summary
// statistics, and a projection head scored against the bank.
template <class S>
struct EnvInfer {
  int width;  // H
  int k_p;
  double tau;
  Tcn<S> encoder;
  Conv1dLayer<S> attn_score;    // H -> 1 per-step score for attention pooling
  LayerNormLayer<S> feat_norm;  // over the 5H + k_p feature vector
  Mlp<S> proj;                  // 5H + k_p -> 2H -> H

  EnvInfer(ParamStore<S>& ps, const std::string& name, int in_channels, int h,
           Rng& rng, int k_p_in = 4, double tau_in = 0.1)
      : width(h),
        k_p(k_p_in),
        tau(tau_in),
        encoder(ps, name + ".tcn", in_channels, h, 3, rng),
        attn_score(ps, name + ".attn", h, 1, 1, rng),
        feat_norm(ps, name + ".featnorm", 5 * h + k_p_in),
        proj(ps, name + ".proj", 5 * h + k_p_in, 2 * h, h, rng) {
    CATSG_CHECK(tau_in > 0.0, ConfigError, "temperature must be positive");
  }

  // x: [N,D,T], c: [N,D_c,T], time-aligned -> [N,H,T]
  Var<S> encode(const Var<S>& x, const Var<S>& c) const {
    CATSG_CHECK(x->val.dim(0) == c->val.dim(0) &&
                    x->val.dim(2) == c->val.dim(2),
                DataError, "encode: series and context are not aligned");
    return encoder(concat_channels<S>({x, c}));
  }

  // summary per sample: mean/std/max per channel, attention pooling, and
  // spectral shape (per-channel centroid plus the k_p largest mean powers)
  Var<S> extract_features(const Var<S>& h_prime) const {
    const int N = h_prime->val.dim(0), T = h_prime->val.dim(2);
    if (T == 1) warn("extract_features: T=1, std features are all zero");
    auto mean = time_mean(h_prime);
    auto sd = time_std(h_prime);
    auto mx = time_max(h_prime);
    auto attw = reshape(softmax_rows(reshape(attn_score(h_prime), {N, T})),
                        {N, 1, T});
    auto pooled = weighted_time_sum(h_prime, attw);
    auto P = dft_power(h_prime);
    auto centroid = spectral_centroid(P);
    auto peaks = topk_mean_power(P, k_p);
    return concat_cols<S>({mean, sd, mx, pooled, centroid, peaks});
  }

  EnvInferOutput<S> forward(const Var<S>& x, const Var<S>& c,
                            const EnvBank<S>& bank) const {
    CATSG_CHECK(bank.H == width, ConfigError,
                "bank width does not match the encoder");
    auto feat = extract_features(encode(x, c));
    auto h = tanh_op(proj(feat_norm(feat)));
    auto s = scale(matmul_nt(l2_normalize_rows(h), bank.normalized()),
                   1.0 / tau);
    return {h, s, softmax_rows(s)};
  }
};

}  // namespace catsg
