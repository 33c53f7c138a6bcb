#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "support/gradcheck.hpp"
#include "catsg/nn/graph.hpp"
#include "catsg/nn/ops.hpp"

using namespace catsg;
using catsg::testing::core_op_checks;
using catsg::testing::gradcheck;

TEST_CASE("every primitive op matches central differences", "[autograd]") {
  for (const auto& check : core_op_checks()) {
    auto rep = check.run();
    INFO(check.name << ": max abs err " << rep.max_abs_err << " at "
                    << rep.where << " (analytic " << rep.worst_analytic
                    << ", numeric " << rep.worst_numeric << ")");
    CHECK(rep.ok);
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("causal convolution never looks ahead", "[autograd]") {
  Rng rng(21);
  TensorD base = TensorD::randn({1, 2, 12}, rng);
  auto W = leaf(TensorD::randn({2, 2, 3}, rng, 0.5));
  auto b = leaf(TensorD::randn({2}, rng));

  NoGradGuard ng;
  auto y0 = conv1d(leaf(base), W, b, 1, 2, Pad::Causal);
  for (int t_mod = 5; t_mod < 12; ++t_mod) {
    TensorD bumped = base;
    bumped.at(0, 1, t_mod) += 3.0;
    auto y1 = conv1d(leaf(bumped), W, b, 1, 2, Pad::Causal);
    for (int c = 0; c < 2; ++c)
      for (int t = 0; t < t_mod; ++t)
        REQUIRE(y1->val.at(0, c, t) == y0->val.at(0, c, t));
  }
}

TEST_CASE("softmax rows are distributions", "[autograd]") {
  Rng rng(22);
  auto x = leaf(TensorD::randn({5, 7}, rng, 3.0));
  NoGradGuard ng;
  auto p = softmax_rows(x);
  auto lp = log_softmax_rows(x);
  for (int n = 0; n < 5; ++n) {
    double s = 0.0;
    for (int k = 0; k < 7; ++k) {
      REQUIRE(p->val.at(n, k) > 0.0);
      s += p->val.at(n, k);
      REQUIRE(std::exp(lp->val.at(n, k)) ==
              Catch::Approx(p->val.at(n, k)).epsilon(1e-12));
    }
    REQUIRE(s == Catch::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("power spectrum satisfies the energy identity", "[autograd]") {
  // full-spectrum energy: P_0 + P_{T/2} + 2 sum_{0<f<T/2} P_f = T sum_t x_t^2
  Rng rng(23);
  const int T = 16;
  auto x = leaf(TensorD::randn({1, 1, T}, rng));
  NoGradGuard ng;
  auto P = dft_power(x);
  double lhs = P->val.at(0, 0, 0) + P->val.at(0, 0, T / 2);
  for (int f = 1; f < T / 2; ++f) lhs += 2.0 * P->val.at(0, 0, f);
  double rhs = 0.0;
  for (int t = 0; t < T; ++t) rhs += T * x->val.at(0, 0, t) * x->val.at(0, 0, t);
  REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("pure tone concentrates power at its own bin", "[autograd]") {
  const int T = 32, f0 = 5;
  TensorD x({1, 1, T});
  for (int t = 0; t < T; ++t)
    x.at(0, 0, t) = std::cos(2.0 * std::numbers::pi * f0 * t / T);
  NoGradGuard ng;
  auto P = dft_power(leaf(x));
  for (int f = 0; f <= T / 2; ++f) {
    double expect = f == f0 ? (T / 2.0) * (T / 2.0) : 0.0;
    REQUIRE(P->val.at(0, 0, f) == Catch::Approx(expect).margin(1e-18 * T * T));
  }
  auto c = spectral_centroid(P);
  REQUIRE(std::abs(c->val.at(0, 0) - f0) < 1e-9);
}

TEST_CASE("top-k power picks frequencies in stable order", "[autograd]") {
  // two channels whose mean spectrum has an exact tie between bins 1 and 3
  const int T = 8, F = T / 2 + 1;
  TensorD P({1, 2, F});
  double mean_target[F] = {0.5, 2.0, 7.0, 2.0, 1.0};
  for (int f = 0; f < F; ++f) {
    P.at(0, 0, f) = mean_target[f] + 0.25;
    P.at(0, 1, f) = mean_target[f] - 0.25;
  }
  NoGradGuard ng;
  auto top = topk_mean_power(leaf(P), 3);
  REQUIRE(top->val.at(0, 0) == Catch::Approx(7.0));
  REQUIRE(top->val.at(0, 1) == Catch::Approx(2.0));
  REQUIRE(top->val.at(0, 2) == Catch::Approx(2.0));
}

TEST_CASE("row normalization produces unit rows", "[autograd]") {
  Rng rng(24);
  auto x = leaf(TensorD::randn({6, 9}, rng, 4.0));
  NoGradGuard ng;
  auto y = l2_normalize_rows(x);
  for (int n = 0; n < 6; ++n) {
    double ss = 0.0;
    for (int h = 0; h < 9; ++h) ss += y->val.at(n, h) * y->val.at(n, h);
    REQUIRE(std::sqrt(ss) == Catch::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("orthogonality penalty hits known values", "[autograd]") {
  NoGradGuard ng;
  SECTION("orthonormal rows give zero") {
    TensorD M({2, 3});
    M.at(0, 0) = 1.0;
    M.at(1, 1) = 1.0;
    REQUIRE(gram_orth_loss(leaf(M))->val.v[0] == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("two identical unit rows give two") {
    TensorD M({2, 3});
    M.at(0, 2) = 1.0;
    M.at(1, 2) = 1.0;
    REQUIRE(gram_orth_loss(leaf(M))->val.v[0] == Catch::Approx(2.0).epsilon(1e-12));
  }
}

TEST_CASE("gradients accumulate across reuse", "[autograd]") {
  TensorD t({2});
  t.at(0) = 1.5;
  t.at(1) = -0.5;
  auto x = leaf(t, true);
  auto loss = sum_all(add(x, x));
  backward(loss);
  REQUIRE(x->grad.at(0) == 2.0);
  REQUIRE(x->grad.at(1) == 2.0);
}

TEST_CASE("detach stops the gradient", "[autograd]") {
  TensorD t({2});
  t.at(0) = 2.0;
  t.at(1) = 3.0;
  auto x = leaf(t, true);
  auto loss = sum_all(mul(x, detach(x)));
  backward(loss);
  // d/dx sum(x * const) = const, not 2x
  REQUIRE(x->grad.at(0) == 2.0);
  REQUIRE(x->grad.at(1) == 3.0);
}

TEST_CASE("no-grad regions build no graph", "[autograd]") {
  TensorD t({2});
  t.at(0) = 1.0;
  t.at(1) = 2.0;
  auto x = leaf(t, true);
  VarD loss;
  {
    NoGradGuard ng;
    loss = sum_all(square(x));
  }
  REQUIRE_FALSE(loss->needs_grad);
  backward(loss);
  REQUIRE(x->grad.numel() == 0);
}

TEST_CASE("time max sends gradient to the first maximal step", "[autograd]") {
  TensorD t({1, 1, 4});
  t.at(0, 0, 0) = 1.0;
  t.at(0, 0, 1) = 5.0;
  t.at(0, 0, 2) = 5.0;
  t.at(0, 0, 3) = 0.0;
  auto x = leaf(t, true);
  backward(sum_all(time_max(x)));
  REQUIRE(x->grad.at(0, 0, 1) == 1.0);
  REQUIRE(x->grad.at(0, 0, 2) == 0.0);
}

TEST_CASE("convolution with stride halves the grid", "[autograd]") {
  Rng rng(25);
  auto x = leaf(TensorD::randn({3, 4, 16}, rng));
  auto W = leaf(TensorD::randn({6, 4, 3}, rng, 0.3));
  auto b = leaf(TensorD({6}));
  NoGradGuard ng;
  auto y = conv1d(x, W, b, 2);
  REQUIRE(y->val.shape == std::vector<int>{3, 6, 8});
  auto up = upsample2(y);
  REQUIRE(up->val.shape == std::vector<int>{3, 6, 16});
}
