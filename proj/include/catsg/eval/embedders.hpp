#pragma once

// Paired series/context embedders backing the joint Frechet distance.
// Two small temporal encoders map a series window and its context block to
// d_e-dimensional vectors. Training pulls matched (x, c) pairs together and
// pushes in-batch mismatches apart with a symmetric cross-entropy over
// cosine logits; embeddings are l2-normalized for that objective only and
// come out raw at inference time.

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "catsg/core/errors.hpp"
#include "catsg/core/rng.hpp"
#include "catsg/core/tensor.hpp"
#include "catsg/eval/metrics.hpp"
#include "catsg/nn/adam.hpp"
#include "catsg/nn/graph.hpp"
#include "catsg/nn/module.hpp"
#include "catsg/nn/ops.hpp"
#include "catsg/nn/tcn.hpp"

namespace catsg {

struct EmbedderConfig {
  int d_e = 32;
  int width = 16;
  int blocks = 2;
  int steps = 300;
  int batch = 64;
  double lr = 1e-3;
  double tau = 0.1;
  uint64_t seed = 1;

  void validate() const {
    CATSG_CHECK(d_e >= 1 && width >= 1 && blocks >= 1, ConfigError,
                "embedder dimensions must be positive");
    CATSG_CHECK(steps >= 1 && batch >= 2, ConfigError,
                "embedder training needs steps >= 1 and batch >= 2");
    CATSG_CHECK(lr > 0.0 && tau > 0.0, ConfigError,
                "embedder lr and temperature must be positive");
  }
};

struct EmbedderPair {
  EmbedderConfig cfg;
  ParamStore<float> params;
  std::unique_ptr<Tcn<float>> time_enc, meta_enc;
  std::unique_ptr<Linear<float>> time_head, meta_head;

  EmbedderPair(const EmbedderConfig& c, int d_x, int d_c, Rng& rng)
      : cfg(c) {
    cfg.validate();
    CATSG_CHECK(d_x >= 1 && d_c >= 1, DataError,
                "embedders need at least one channel per side");
    time_enc = std::make_unique<Tcn<float>>(params, "time", d_x, cfg.width,
                                            cfg.blocks, rng);
    time_head = std::make_unique<Linear<float>>(params, "time.head",
                                                cfg.width, cfg.d_e, rng);
    meta_enc = std::make_unique<Tcn<float>>(params, "meta", d_c, cfg.width,
                                            cfg.blocks, rng);
    meta_head = std::make_unique<Linear<float>>(params, "meta.head",
                                                cfg.width, cfg.d_e, rng);
  }

  Var<float> time_fwd(const Var<float>& x) const {
    return (*time_head)(time_mean((*time_enc)(x)));
  }
  Var<float> meta_fwd(const Var<float>& c) const {
    return (*meta_head)(time_mean((*meta_enc)(c)));
  }

  // raw [N, d_e] embeddings for metric use
  Tensor<float> embed_time(const Tensor<float>& x) const {
    NoGradGuard ng;
    return time_fwd(constant(x))->val;
  }
  Tensor<float> embed_meta(const Tensor<float>& c) const {
    NoGradGuard ng;
    return meta_fwd(constant(c))->val;
  }

  // z = [phi_time(x) | phi_meta(c)] rows, as a dense matrix for summaries
  Eigen::MatrixXd embed_joint(const Tensor<float>& x,
                              const Tensor<float>& c) const {
    CATSG_CHECK(x.rank() == 3 && c.rank() == 3 && x.dim(0) == c.dim(0),
                DataError, "embed_joint expects paired [N, ., T] tensors");
    const Tensor<float> zt = embed_time(x);
    const Tensor<float> zm = embed_meta(c);
    const int N = x.dim(0);
    Eigen::MatrixXd z(N, 2 * cfg.d_e);
    for (int n = 0; n < N; ++n) {
      for (int j = 0; j < cfg.d_e; ++j) {
        z(n, j) = zt.at(n, j);
        z(n, cfg.d_e + j) = zm.at(n, j);
      }
    }
    return z;
  }
};

namespace detail {

inline Tensor<float> rows_subset(const Tensor<float>& t,
                                 const std::vector<int>& idx) {
  std::vector<int> shape(t.rank() == 3
                             ? std::vector<int>{static_cast<int>(idx.size()),
                                                t.dim(1), t.dim(2)}
                             : std::vector<int>{static_cast<int>(idx.size()),
                                                t.dim(1)});
  Tensor<float> out(shape);
  const size_t row = t.numel() / static_cast<size_t>(t.dim(0));
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(t.data() + static_cast<size_t>(idx[i]) * row, row,
                out.data() + i * row);
  return out;
}

}  // namespace detail

// Fits a fresh embedder pair to matched (x, c) pairs. Deterministic for a
// fixed seed: parameter init and batch selection both derive from it.
inline std::unique_ptr<EmbedderPair> train_embedders(
    const Tensor<float>& x, const Tensor<float>& c,
    const EmbedderConfig& cfg = {}) {
  cfg.validate();
  CATSG_CHECK(x.rank() == 3 && c.rank() == 3, DataError,
              "train_embedders expects [N, D, T] and [N, D_c, T]");
  CATSG_CHECK(x.dim(0) == c.dim(0), DataError,
              "train_embedders: x and c pair counts differ");
  const int N = x.dim(0);
  CATSG_CHECK(N >= 2, DataError,
              "contrastive training needs at least 2 pairs");

  Rng rng_init = named_stream(cfg.seed, "embed.init");
  Rng rng_batch = named_stream(cfg.seed, "embed.batch");
  auto pair =
      std::make_unique<EmbedderPair>(cfg, x.dim(1), c.dim(1), rng_init);
  Adam<float> opt(pair->params, cfg.lr);

  const int B = std::min(cfg.batch, N);
  CATSG_CHECK(B >= 2, DataError, "contrastive batch must hold >= 2 pairs");
  Tensor<float> eye({B, B});
  for (int i = 0; i < B; ++i) eye.at(i, i) = 1.0f;

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<int> idx(static_cast<size_t>(B));
    for (auto& i : idx) i = static_cast<int>(rng_batch.below(N));
    auto xb = constant(detail::rows_subset(x, idx));
    auto cb = constant(detail::rows_subset(c, idx));
    auto zt = l2_normalize_rows(pair->time_fwd(xb));
    auto zm = l2_normalize_rows(pair->meta_fwd(cb));
    auto logits_tm = scale(matmul_nt(zt, zm), 1.0 / cfg.tau);
    auto logits_mt = scale(matmul_nt(zm, zt), 1.0 / cfg.tau);
    auto loss = scale(add(cross_entropy_rows(eye, log_softmax_rows(logits_tm)),
                          cross_entropy_rows(eye, log_softmax_rows(logits_mt))),
                      0.5);
    pair->params.zero_grads();
    backward(loss);
    opt.step(pair->params);
  }
  return pair;
}

// Joint Frechet distance between paired sets: raw joint embeddings on each
// side, Gaussian summaries, then the closed-form Gaussian transport cost.
inline double jftsd(const Tensor<float>& real_x, const Tensor<float>& real_c,
                    const Tensor<float>& gen_x, const Tensor<float>& gen_c,
                    const EmbedderPair& emb) {
  const GaussianSummary gr = gaussian_summary(emb.embed_joint(real_x, real_c));
  const GaussianSummary gg = gaussian_summary(emb.embed_joint(gen_x, gen_c));
  return frechet(gr, gg);
}

}  // namespace catsg
