#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "catsg/env/augment.hpp"
#include "catsg/env/envinfer.hpp"
#include "catsg/env/sinkhorn.hpp"
#include "catsg/env/swav.hpp"

using namespace catsg;

namespace {

// fixed point of the balancing iteration, used as the independent reference
template <class S>
Tensor<S> sinkhorn_converged(const Tensor<S>& s, double reg, double tau) {
  SinkhornConfig cfg;
  cfg.reg = reg;
  cfg.iters = 400;
  return sinkhorn_targets(s, cfg, tau);
}

double row_sum(const TensorD& q, int n) {
  double acc = 0;
  for (int k = 0; k < q.dim(1); ++k) acc += q.at(n, k);
  return acc;
}

double col_sum(const TensorD& q, int k) {
  double acc = 0;
  for (int n = 0; n < q.dim(0); ++n) acc += q.at(n, k);
  return acc;
}

}  // namespace

TEST_CASE("sinkhorn balances equal logits to uniform", "[envinfer]") {
  TensorD s({2, 2});
  SinkhornConfig cfg;
  auto q = sinkhorn_targets(s, cfg);
  for (size_t i = 0; i < q.v.size(); ++i)
    REQUIRE(q.v[i] == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("sinkhorn marginals converge on random logits", "[envinfer]") {
  SinkhornConfig cfg;
  cfg.iters = 100;
  for (int N : {8, 64})
    for (int K : {2, 8}) {
      Rng rng(static_cast<uint64_t>(N * 1000 + K));
      TensorD s = TensorD::randn({N, K}, rng, 2.0);
      auto q = sinkhorn_targets(s, cfg);
      for (int n = 0; n < N; ++n)
        REQUIRE(row_sum(q, n) == Catch::Approx(1.0).margin(1e-6));
      for (int k = 0; k < K; ++k)
        REQUIRE(col_sum(q, k) ==
                Catch::Approx(static_cast<double>(N) / K).margin(1e-6));
    }
}

TEST_CASE("sinkhorn rebalances a collapsed column preference", "[envinfer]") {
  // every row strongly favors column 1; balancing must still split the mass
  TensorD s({4, 2});
  for (int n = 0; n < 4; ++n) {
    s.at(n, 0) = -6.0 + 0.3 * n;
    s.at(n, 1) = 6.0 - 0.1 * n;
  }
  auto q = sinkhorn_converged(s, 0.05, 0.1);
  REQUIRE(col_sum(q, 0) == Catch::Approx(2.0).margin(1e-6));
  REQUIRE(col_sum(q, 1) == Catch::Approx(2.0).margin(1e-6));
  for (int n = 0; n < 4; ++n)
    REQUIRE(row_sum(q, n) == Catch::Approx(1.0).margin(1e-9));

  // the few-iteration training configuration already sits close by
  SinkhornConfig train;
  auto q3 = sinkhorn_targets(s, train);
  for (int k = 0; k < 2; ++k)
    REQUIRE(col_sum(q3, k) == Catch::Approx(2.0).margin(0.05));
}

TEST_CASE("sinkhorn rejects bad inputs", "[envinfer]") {
  TensorD s({2, 2});
  SinkhornConfig cfg;
  cfg.iters = 0;
  REQUIRE_THROWS_AS(sinkhorn_targets(s, cfg), ConfigError);
  cfg.iters = 3;
  cfg.reg = 0.0;
  REQUIRE_THROWS_AS(sinkhorn_targets(s, cfg), ConfigError);
  cfg.reg = 0.05;
  s.at(0, 1) = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(sinkhorn_targets(s, cfg), NumericError);
}

TEST_CASE("feature extraction on a constant signal", "[envinfer]") {
  Rng rng(41);
  ParamStore<double> ps;
  const int H = 4, T = 16, kp = 4;
  EnvInfer<double> infer(ps, "inf", 2, H, rng);
  TensorD hp({1, H, T});
  for (int ch = 0; ch < H; ++ch)
    for (int t = 0; t < T; ++t) hp.at(0, ch, t) = 1.0 + ch;
  NoGradGuard ng;
  auto feat = infer.extract_features(leaf(hp));
  REQUIRE(feat->val.shape == std::vector<int>{1, 5 * H + kp});
  for (int ch = 0; ch < H; ++ch) {
    double c0 = 1.0 + ch;
    REQUIRE(feat->val.at(0, ch) == Catch::Approx(c0));              // mean
    REQUIRE(feat->val.at(0, H + ch) == 0.0);                        // std
    REQUIRE(feat->val.at(0, 2 * H + ch) == Catch::Approx(c0));      // max
    REQUIRE(feat->val.at(0, 3 * H + ch) ==
            Catch::Approx(c0).epsilon(1e-9));                       // attention
    REQUIRE(feat->val.at(0, 4 * H + ch) ==
            Catch::Approx(0.0).margin(1e-12));                      // centroid
  }
}

TEST_CASE("pure tone lands its centroid on the exact bin", "[envinfer]") {
  Rng rng(42);
  ParamStore<double> ps;
  const int H = 3, T = 32, f0 = 6;
  EnvInfer<double> infer(ps, "inf", 2, H, rng);
  TensorD hp({1, H, T});
  for (int t = 0; t < T; ++t) {
    hp.at(0, 0, t) = std::sin(2.0 * std::numbers::pi * f0 * t / T);
    hp.at(0, 1, t) = 0.5;  // constant companions
    hp.at(0, 2, t) = -0.25;
  }
  NoGradGuard ng;
  auto feat = infer.extract_features(leaf(hp));
  REQUIRE(std::abs(feat->val.at(0, 4 * H + 0) - f0) < 1e-9);
}

TEST_CASE("attention pooling stays inside the channel range", "[envinfer]") {
  Rng rng(43);
  ParamStore<double> ps;
  const int H = 4, T = 12;
  EnvInfer<double> infer(ps, "inf", 2, H, rng);
  TensorD hp = TensorD::randn({3, H, T}, rng);
  NoGradGuard ng;
  auto feat = infer.extract_features(leaf(hp));
  for (int n = 0; n < 3; ++n)
    for (int ch = 0; ch < H; ++ch) {
      double lo = hp.at(n, ch, 0), hi = lo;
      for (int t = 1; t < T; ++t) {
        lo = std::min(lo, hp.at(n, ch, t));
        hi = std::max(hi, hp.at(n, ch, t));
      }
      double pooled = feat->val.at(n, 3 * H + ch);
      REQUIRE(pooled >= lo - 1e-9);
      REQUIRE(pooled <= hi + 1e-9);
    }
}

TEST_CASE("posterior weights form distributions", "[envinfer]") {
  Rng rng(44);
  ParamStore<float> ps;
  EnvInfer<float> infer(ps, "inf", 3, 8, rng);
  EnvBank<float> bank(ps, "bank", 4, 8, rng);
  auto x = leaf(TensorF::randn({5, 1, 16}, rng));
  auto c = leaf(TensorF::randn({5, 2, 16}, rng));
  NoGradGuard ng;
  auto out = infer.forward(x, c, bank);
  REQUIRE(out.w->val.shape == std::vector<int>{5, 4});
  for (int n = 0; n < 5; ++n) {
    float sum = 0.f;
    for (int k = 0; k < 4; ++k) {
      REQUIRE(out.w->val.at(n, k) >= 0.f);
      sum += out.w->val.at(n, k);
    }
    REQUIRE(sum == Catch::Approx(1.0f).margin(1e-6));
  }
}

TEST_CASE("single environment gives weight one", "[envinfer]") {
  Rng rng(45);
  ParamStore<float> ps;
  EnvInfer<float> infer(ps, "inf", 2, 8, rng);
  EnvBank<float> bank(ps, "bank", 1, 8, rng);
  auto x = leaf(TensorF::randn({3, 1, 8}, rng));
  auto c = leaf(TensorF::randn({3, 1, 8}, rng));
  NoGradGuard ng;
  auto out = infer.forward(x, c, bank);
  for (int n = 0; n < 3; ++n) REQUIRE(out.w->val.at(n, 0) == 1.0f);
}

TEST_CASE("huge temperature flattens the posterior", "[envinfer]") {
  Rng rng(46);
  ParamStore<float> ps;
  EnvInfer<float> infer(ps, "inf", 2, 8, rng, 4, 1e6);
  EnvBank<float> bank(ps, "bank", 4, 8, rng);
  auto x = leaf(TensorF::randn({2, 1, 8}, rng));
  auto c = leaf(TensorF::randn({2, 1, 8}, rng));
  NoGradGuard ng;
  auto out = infer.forward(x, c, bank);
  for (size_t i = 0; i < out.w->val.v.size(); ++i)
    REQUIRE(out.w->val.v[i] == Catch::Approx(0.25).margin(1e-6));
}

TEST_CASE("normalization direction ignores positive scaling", "[envinfer]") {
  Rng rng(47);
  TensorD h = TensorD::randn({4, 6}, rng);
  TensorD h3 = h;
  for (auto& v : h3.v) v *= 3.0;
  NoGradGuard ng;
  auto a = l2_normalize_rows(leaf(h));
  auto b = l2_normalize_rows(leaf(h3));
  for (size_t i = 0; i < a->val.v.size(); ++i)
    REQUIRE(a->val.v[i] == Catch::Approx(b->val.v[i]).margin(1e-9));
}

TEST_CASE("bank constraints are enforced", "[envinfer]") {
  Rng rng(48);
  ParamStore<float> ps;
  REQUIRE_THROWS_AS(EnvBank<float>(ps, "bad", 0, 8, rng), ConfigError);
  EnvInfer<float> infer(ps, "inf", 2, 8, rng);
  EnvBank<float> narrow(ps, "narrow", 2, 4, rng);
  auto x = leaf(TensorF::randn({2, 1, 8}, rng));
  auto c = leaf(TensorF::randn({2, 1, 8}, rng));
  NoGradGuard ng;
  REQUIRE_THROWS_AS(infer.forward(x, c, narrow), ConfigError);
  auto short_c = leaf(TensorF::randn({2, 1, 4}, rng));
  REQUIRE_THROWS_AS(infer.encode(x, short_c), DataError);
}

TEST_CASE("orthogonality loss through the bank api", "[envinfer]") {
  Rng rng(49);
  ParamStore<double> ps;
  EnvBank<double> bank(ps, "bank", 2, 3, rng);
  NoGradGuard ng;
  SECTION("orthonormal rows give zero") {
    std::fill(bank.E->val.v.begin(), bank.E->val.v.end(), 0.0);
    bank.E->val.at(0, 0) = 2.0;  // scaling must not matter
    bank.E->val.at(1, 1) = -0.5;
    REQUIRE(orthogonality_loss(bank)->val.v[0] ==
            Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("identical rows give two") {
    for (int j = 0; j < 3; ++j) {
      bank.E->val.at(0, j) = 1.0 + j;
      bank.E->val.at(1, j) = 1.0 + j;
    }
    REQUIRE(orthogonality_loss(bank)->val.v[0] ==
            Catch::Approx(2.0).epsilon(1e-9));
  }
  SECTION("never negative") {
    REQUIRE(orthogonality_loss(bank)->val.v[0] >= 0.0);
  }
}

TEST_CASE("matching one-hot assignment drives the prediction loss to zero",
          "[envinfer]") {
  TensorD logits({2, 4});
  TensorD target({2, 4});
  logits.at(0, 2) = 50.0;
  target.at(0, 2) = 1.0;
  logits.at(1, 0) = 50.0;
  target.at(1, 0) = 1.0;
  NoGradGuard ng;
  auto loss = cross_entropy_rows(target, log_softmax_rows(leaf(logits)));
  REQUIRE(loss->val.v[0] == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("uniform predictions cost exactly two log K", "[envinfer]") {
  Rng rng(50);
  ParamStore<float> ps;
  EnvInfer<float> infer(ps, "inf", 2, 8, rng);
  EnvBank<float> bank(ps, "bank", 4, 8, rng);
  // silence the projection head: h = tanh(0) = 0 for every input
  std::fill(infer.proj.fc2.W->val.v.begin(), infer.proj.fc2.W->val.v.end(), 0.f);
  std::fill(infer.proj.fc2.b->val.v.begin(), infer.proj.fc2.b->val.v.end(), 0.f);
  auto x1 = leaf(TensorF::randn({6, 1, 8}, rng));
  auto c1 = leaf(TensorF::randn({6, 1, 8}, rng));
  auto x2 = leaf(TensorF::randn({6, 1, 8}, rng));
  auto c2 = leaf(TensorF::randn({6, 1, 8}, rng));
  SinkhornConfig cfg;
  NoGradGuard ng;
  auto loss = swapped_loss(infer, bank, x1, c1, x2, c2, cfg);
  REQUIRE(loss->val.v[0] == Catch::Approx(2.0 * std::log(4.0)).margin(1e-5));
}

TEST_CASE("swapped loss is nonnegative and differentiable", "[envinfer]") {
  Rng rng(51);
  ParamStore<float> ps;
  EnvInfer<float> infer(ps, "inf", 2, 8, rng);
  EnvBank<float> bank(ps, "bank", 4, 8, rng);
  TensorF x = TensorF::randn({4, 1, 16}, rng);
  TensorF c = TensorF::randn({4, 1, 16}, rng);
  std::vector<double> xs = {1.0}, cs = {1.0};
  AugmentConfig acfg;
  Rng ar(52);
  auto v1 = augment(x, c, xs, cs, acfg, ar);
  auto v2 = augment(x, c, xs, cs, acfg, ar);
  SinkhornConfig cfg;
  ps.zero_grads();
  auto loss = swapped_loss(infer, bank, leaf(v1.x), leaf(v1.c), leaf(v2.x),
                           leaf(v2.c), cfg);
  REQUIRE(loss->val.v[0] >= 0.f);
  backward(loss);
  bool any = false;
  for (const auto& [name, v] : ps.entries())
    if (v->grad.numel() && !std::all_of(v->grad.v.begin(), v->grad.v.end(),
                                        [](float g) { return g == 0.f; }))
      any = true;
  REQUIRE(any);
}

TEST_CASE("augmentation is deterministic under its seed", "[envinfer]") {
  Rng rng(53);
  TensorF x = TensorF::randn({3, 2, 16}, rng);
  TensorF c = TensorF::randn({3, 1, 16}, rng);
  std::vector<double> xs = {0.7, 1.3}, cs = {0.9};
  AugmentConfig cfg;
  Rng a(99), b(99);
  auto va = augment(x, c, xs, cs, cfg, a);
  auto vb = augment(x, c, xs, cs, cfg, b);
  REQUIRE(va.x.v == vb.x.v);
  REQUIRE(va.c.v == vb.c.v);
}

TEST_CASE("null augmentation is the identity", "[envinfer]") {
  Rng rng(54);
  TensorF x = TensorF::randn({2, 2, 8}, rng);
  TensorF c = TensorF::randn({2, 1, 8}, rng);
  AugmentConfig cfg;
  cfg.jitter = 0.0;
  cfg.scale_lo = cfg.scale_hi = 1.0;
  cfg.max_shift_frac = 0.0;
  Rng a(7);
  auto v = augment(x, c, {1.0, 1.0}, {1.0}, cfg, a);
  REQUIRE(v.x.v == x.v);
  REQUIRE(v.c.v == c.v);
}

TEST_CASE("circular shift wraps exactly", "[envinfer]") {
  Rng rng(55);
  TensorF x = TensorF::randn({1, 2, 12}, rng);
  auto full = circular_shift(x, 12);
  REQUIRE(full.v == x.v);
  auto there_and_back = circular_shift(circular_shift(x, 5), -5);
  REQUIRE(there_and_back.v == x.v);
  auto once = circular_shift(x, 1);
  REQUIRE(once.at(0, 0, 1) == x.at(0, 0, 0));
  REQUIRE(once.at(0, 0, 0) == x.at(0, 0, 11));
}

TEST_CASE("augmentation shifts series and context together", "[envinfer]") {
  const int T = 16;
  TensorF x({1, 1, T}), c({1, 2, T});
  x.at(0, 0, 5) = 1.0f;
  c.at(0, 0, 5) = 2.0f;
  c.at(0, 1, 5) = -3.0f;  // categorical-like channel, std 0
  AugmentConfig cfg;
  cfg.jitter = 0.0;
  cfg.scale_lo = cfg.scale_hi = 1.0;
  Rng a(11);
  auto v = augment(x, c, {0.0}, {0.0, 0.0}, cfg, a);
  int x_spike = -1, c_spike = -1, c2_spike = -1;
  for (int t = 0; t < T; ++t) {
    if (v.x.at(0, 0, t) == 1.0f) x_spike = t;
    if (v.c.at(0, 0, t) == 2.0f) c_spike = t;
    if (v.c.at(0, 1, t) == -3.0f) c2_spike = t;
  }
  REQUIRE(x_spike >= 0);
  REQUIRE(x_spike == c_spike);
  REQUIRE(x_spike == c2_spike);
}

TEST_CASE("zero-std channels only ever shift", "[envinfer]") {
  Rng rng(56);
  TensorF x = TensorF::randn({4, 1, 8}, rng);
  TensorF c({4, 1, 8});
  for (int n = 0; n < 4; ++n)
    for (int t = 0; t < 8; ++t) c.at(n, 0, t) = static_cast<float>((n + t) % 3);
  AugmentConfig cfg;
  Rng a(13);
  auto v = augment(x, c, {1.0}, {0.0}, cfg, a);
  for (float val : v.c.v)
    REQUIRE((val == 0.f || val == 1.f || val == 2.f));
}
