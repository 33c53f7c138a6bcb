#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "catsg/core/rng.hpp"
#include "catsg/diffusion/model.hpp"
#include "catsg/diffusion/schedule.hpp"
#include "catsg/sampling/guidance.hpp"
#include "catsg/sampling/samplers.hpp"

using namespace catsg;

namespace {

BundleMeta tiny_meta(int T = 16, int D = 1, int D_c = 2) {
  BundleMeta m;
  m.dataset_id = "tiny";
  m.scenario = "VM";
  m.T = T;
  m.D = D;
  m.D_c = D_c;
  m.dt = 0.25;
  for (int i = 0; i < D + D_c; ++i) {
    m.channel_names.push_back("ch" + std::to_string(i));
    m.norm_min.push_back(-2.0);
    m.norm_max.push_back(3.0);
  }
  return m;
}

ArchConfig tiny_arch(int K, const std::string& ablation = "full") {
  ArchConfig a;
  a.n_env = K;
  a.width = 8;
  a.n_diff = 30;
  a.gn_groups = 4;
  a.ablation = ablation;
  return a;
}

std::unique_ptr<CatsgModel<float>> tiny_model(int K,
                                              const std::string& abl = "full",
                                              std::uint64_t seed = 5) {
  Rng init = named_stream(seed, "init");
  auto m = std::make_unique<CatsgModel<float>>(tiny_arch(K, abl), tiny_meta(),
                                               init);
  Rng r(seed + 1);
  auto W = m->params.find("unet.out.W");
  W->val = Tensor<float>::randn(W->val.shape, r, 0.2f);
  return m;
}

Tensor<float> random_context(int n, std::uint64_t seed) {
  Rng r(seed);
  return Tensor<float>::uniform({n, 2, 16}, r, 0.0, 1.0);
}

}  // namespace

TEST_CASE("guided noise combines branches per the adjustment formula",
          "[sampling]") {
  // two branches predicting +1 and -1, equal weights, base 0.3, omega 1
  Tensor<float> stack({2, 1, 3});
  for (int t = 0; t < 3; ++t) {
    stack.at(0, 0, t) = 1.0f;
    stack.at(1, 0, t) = -1.0f;
  }
  Tensor<float> w({1, 2});
  w.at(0, 0) = 0.5f;
  w.at(0, 1) = 0.5f;
  Tensor<float> base = Tensor<float>::full({1, 1, 3}, 0.3f);
  auto out = backdoor_noise(stack, w, &base, 1.0);
  for (int t = 0; t < 3; ++t)
    CHECK(out.at(0, 0, t) == Catch::Approx(-0.3).margin(1e-7));
}

TEST_CASE("zero guidance returns the bare mixture bit for bit", "[sampling]") {
  Rng rng(3);
  const int N = 4, K = 3, D = 2, T = 5;
  Tensor<float> stack = Tensor<float>::randn({N * K, D, T}, rng);
  Tensor<float> base = Tensor<float>::randn({N, D, T}, rng);
  Tensor<float> w({N, K});
  for (int n = 0; n < N; ++n) {
    auto row = rng.simplex(K);
    for (int k = 0; k < K; ++k) w.at(n, k) = static_cast<float>(row[k]);
  }
  auto out = backdoor_noise(stack, w, &base, 0.0);
  for (int n = 0; n < N; ++n)
    for (int d = 0; d < D; ++d)
      for (int t = 0; t < T; ++t) {
        float mix = 0.0f;
        for (int k = 0; k < K; ++k)
          mix += w.at(n, k) * stack.at(n * K + k, d, t);
        CHECK(out.at(n, d, t) == mix);
      }
}

TEST_CASE("single-branch guidance is standard classifier-free guidance",
          "[sampling]") {
  Rng rng(9);
  const int N = 3, D = 1, T = 6;
  const double omega = 1.7;
  Tensor<float> cond = Tensor<float>::randn({N, D, T}, rng);
  Tensor<float> base = Tensor<float>::randn({N, D, T}, rng);
  Tensor<float> w = Tensor<float>::full({N, 1}, 1.0f);
  auto out = backdoor_noise(cond, w, &base, omega);
  const float up = static_cast<float>(1.0 + omega);
  const float dn = static_cast<float>(omega);
  for (size_t i = 0; i < out.numel(); ++i) {
    float ref = up * (1.0f * cond.data()[i]) - dn * base.data()[i];
    CHECK(out.data()[i] == ref);
  }
}

TEST_CASE("one-hot weights select a single branch exactly", "[sampling]") {
  Rng rng(17);
  const int N = 2, K = 4, D = 1, T = 5;
  Tensor<float> stack = Tensor<float>::randn({N * K, D, T}, rng);
  Tensor<float> base = Tensor<float>::randn({N, D, T}, rng);
  Tensor<float> w({N, K});
  w.at(0, 2) = 1.0f;
  w.at(1, 0) = 1.0f;
  auto out = backdoor_noise(stack, w, &base, 0.8);
  const float up = static_cast<float>(1.8), dn = 0.8f;
  const int pick[2] = {2, 0};
  for (int n = 0; n < N; ++n)
    for (int t = 0; t < T; ++t)
      CHECK(out.at(n, 0, t) ==
            up * stack.at(n * K + pick[n], 0, t) - dn * base.at(n, 0, t));
}

TEST_CASE("guided noise validates its inputs", "[sampling]") {
  Rng rng(1);
  Tensor<float> stack = Tensor<float>::randn({4, 1, 3}, rng);
  Tensor<float> base = Tensor<float>::randn({2, 1, 3}, rng);
  Tensor<float> w({2, 2});
  w.at(0, 0) = 0.9f;
  w.at(0, 1) = 0.4f;  // sums to 1.3
  w.at(1, 0) = 1.0f;
  CHECK_THROWS_AS(backdoor_noise(stack, w, &base, 0.5), NumericError);
  w.at(0, 0) = 1.3f;
  w.at(0, 1) = -0.3f;  // sums to 1 but leaves the simplex
  CHECK_THROWS_AS(backdoor_noise(stack, w, &base, 0.5), NumericError);
  w.at(0, 0) = 0.6f;
  w.at(0, 1) = 0.4f;
  const Tensor<float>* no_base = nullptr;
  CHECK_THROWS_AS(backdoor_noise(stack, w, no_base, 0.5), ConfigError);
  Tensor<float> bad_base = Tensor<float>::randn({2, 1, 4}, rng);
  CHECK_THROWS_AS(backdoor_noise(stack, w, &bad_base, 0.5), DataError);
  CHECK_NOTHROW(backdoor_noise(stack, w, no_base, 0.0));
}

TEST_CASE("one ancestral step at t=1 undoes the forward corruption",
          "[sampling]") {
  auto sc = make_schedule(100);
  Rng rng(23);
  Tensor<float> x0 = Tensor<float>::uniform({2, 1, 8}, rng, -1.0, 1.0);
  Tensor<float> eps = Tensor<float>::randn({2, 1, 8}, rng);
  auto x1 = forward_corrupt(x0, 1, eps, sc);
  Rng step_rng(0);
  auto rec = ddpm_step(x1, eps, 1, sc, step_rng);
  for (size_t i = 0; i < rec.numel(); ++i)
    CHECK(rec.data()[i] == Catch::Approx(x0.data()[i]).margin(1e-6));
}

TEST_CASE("ancestral steps are noisy above t=1 and seeded", "[sampling]") {
  auto sc = make_schedule(100);
  Rng rng(4);
  Tensor<float> x = Tensor<float>::randn({1, 1, 8}, rng);
  Tensor<float> eps = Tensor<float>::randn({1, 1, 8}, rng);
  Rng a(7), b(7), c(8);
  auto s1 = ddpm_step(x, eps, 50, sc, a);
  auto s2 = ddpm_step(x, eps, 50, sc, b);
  auto s3 = ddpm_step(x, eps, 50, sc, c);
  CHECK(s1.v == s2.v);
  CHECK(s1.v != s3.v);
}

TEST_CASE("uniform respacing keeps endpoints and table consistency",
          "[sampling]") {
  auto sc = make_schedule(100);
  auto rs = respace_uniform(sc, 10);
  REQUIRE(rs.eff.n_steps == 10);
  CHECK(rs.orig_t[1] == 1);
  CHECK(rs.orig_t[10] == 100);
  for (int i = 1; i <= 10; ++i) {
    if (i > 1) CHECK(rs.orig_t[i] > rs.orig_t[i - 1]);
    CHECK(rs.eff.alpha_bar[i] == sc.alpha_bar[rs.orig_t[i]]);
    CHECK(rs.eff.beta[i] > 0.0);
    CHECK(rs.eff.beta[i] < 1.0);
    CHECK(rs.eff.sigma[i] * rs.eff.sigma[i] + rs.eff.alpha_bar[i] ==
          Catch::Approx(1.0).margin(1e-15));
  }

  auto full = respace_uniform(sc, 100);
  for (int t = 1; t <= 100; ++t) {
    CHECK(full.orig_t[t] == t);
    CHECK(full.eff.beta[t] == Catch::Approx(sc.beta[t]).margin(1e-12));
  }

  auto one = respace_uniform(sc, 1);
  CHECK(one.orig_t[1] == 100);
  CHECK(one.eff.alpha_bar[1] == sc.alpha_bar[100]);

  CHECK_THROWS_AS(respace_uniform(sc, 0), ConfigError);
  CHECK_THROWS_AS(respace_uniform(sc, 101), ConfigError);
}

TEST_CASE("ode steps with a zero noise model reduce to pure rescaling",
          "[sampling]") {
  auto sc = make_schedule(50);
  Rng rng(31);
  Tensor<double> x0 = Tensor<double>::randn({2, 1, 4}, rng);
  EpsFn<double> zero = [](const Tensor<double>& s, double) {
    return Tensor<double>(s.shape);
  };
  auto out = sample_dpm_2s(zero, Tensor<double>(x0), sc, 7);
  const double expect = 1.0 / std::sqrt(sc.alpha_bar[50]);
  for (size_t i = 0; i < out.numel(); ++i)
    CHECK(out.data()[i] ==
          Catch::Approx(x0.data()[i] * expect).epsilon(1e-10));
}

TEST_CASE("state clamp bounds runaway trajectories and spares tame ones",
          "[sampling]") {
  auto sc = make_schedule(40);
  // a denoiser this wrong inflates the state a little more every step
  EpsFn<double> wild = [](const Tensor<double>& s, double) {
    return Tensor<double>::full(s.shape, -40.0);
  };
  Rng r(11);
  Tensor<double> x0 = Tensor<double>::randn({2, 1, 6}, r);

  auto escaped = sample_dpm_2s(wild, Tensor<double>(x0), sc, 8);
  double peak = 0.0;
  for (size_t i = 0; i < escaped.numel(); ++i)
    peak = std::max(peak, std::abs(escaped.data()[i]));
  REQUIRE(peak > 3.0);

  auto held = sample_dpm_2s(wild, Tensor<double>(x0), sc, 8, 3.0);
  for (size_t i = 0; i < held.numel(); ++i)
    CHECK(std::abs(held.data()[i]) <= 3.0);

  auto rs = respace_uniform(sc, 8);
  Rng ra(13), rb(13);
  auto esc2 = sample_ddpm(wild, Tensor<double>(x0), rs, ra, 0.0);
  double peak2 = 0.0;
  for (size_t i = 0; i < esc2.numel(); ++i)
    peak2 = std::max(peak2, std::abs(esc2.data()[i]));
  REQUIRE(peak2 > 3.0);
  auto held2 = sample_ddpm(wild, Tensor<double>(x0), rs, rb, 3.0);
  for (size_t i = 0; i < held2.numel(); ++i)
    CHECK(std::abs(held2.data()[i]) <= 3.0);

  // a clamp the trajectory never reaches must not change a single bit
  EpsFn<double> zero = [](const Tensor<double>& s, double) {
    return Tensor<double>(s.shape);
  };
  auto plain = sample_dpm_2s(zero, Tensor<double>(x0), sc, 7);
  auto clamped = sample_dpm_2s(zero, Tensor<double>(x0), sc, 7, 1e6);
  CHECK(plain.v == clamped.v);
  Rng rc(17), rd(17);
  auto plain2 = sample_ddpm(zero, Tensor<double>(x0), rs, rc, 0.0);
  auto clamped2 = sample_ddpm(zero, Tensor<double>(x0), rs, rd, 1e6);
  CHECK(plain2.v == clamped2.v);
}

TEST_CASE("ode sampler rejects a non-increasing lambda grid", "[sampling]") {
  auto sc = make_schedule(50);
  Tensor<float> x({1, 1, 4});
  EpsFn<float> zero = [](const Tensor<float>& s, double) {
    return Tensor<float>(s.shape);
  };
  CHECK_THROWS_AS(dpm_solver_2s_step(x, sc.lambda[1], sc.lambda[50], sc, zero),
                  ConfigError);
  CHECK_THROWS_AS(dpm_solver_2s_step(x, sc.lambda[1], sc.lambda[1], sc, zero),
                  ConfigError);
  CHECK_NOTHROW(dpm_solver_2s_step(x, sc.lambda[50], sc.lambda[1], sc, zero));
}

TEST_CASE("sample config rejects invalid requests", "[sampling]") {
  SampleConfig cfg;
  cfg.mode = "nope";
  CHECK_THROWS_AS(cfg.validate(30), ConfigError);
  cfg.mode = "int";
  cfg.sampler = "euler";
  CHECK_THROWS_AS(cfg.validate(30), ConfigError);
  cfg.sampler = "ddpm";
  cfg.steps = 31;
  CHECK_THROWS_AS(cfg.validate(30), ConfigError);
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(30), ConfigError);
  cfg.steps = 10;
  cfg.omega = -0.5;
  CHECK_THROWS_AS(cfg.validate(30), ConfigError);
  cfg.omega = 1.0;
  cfg.clip = -1.0;
  CHECK_THROWS_AS(cfg.validate(30), ConfigError);
  cfg.clip = 0.0;
  CHECK_NOTHROW(cfg.validate(30));
  cfg.clip = 3.0;
  CHECK_NOTHROW(cfg.validate(30));
}

TEST_CASE("interventional sampling is seed-reproducible", "[sampling]") {
  auto model = tiny_model(2);
  auto c = random_context(3, 41);
  SampleConfig cfg;
  cfg.steps = 4;
  cfg.seed = 9;
  auto a = sample_interventional(*model, c, cfg);
  auto b = sample_interventional(*model, c, cfg);
  CHECK(a.x_norm.v == b.x_norm.v);
  cfg.seed = 10;
  auto d = sample_interventional(*model, c, cfg);
  CHECK(a.x_norm.v != d.x_norm.v);
  CHECK(a.x_norm.dim(0) == 3);
  CHECK(a.x_norm.dim(1) == 1);
  CHECK(a.x_norm.dim(2) == 16);
  CHECK(a.x.same_shape(Tensor<double>({3, 1, 16})));
  CHECK(a.x_norm.all_finite());
  CHECK(a.x.all_finite());
  // outputs come back in data units
  for (size_t i = 0; i < a.x.numel(); ++i)
    CHECK(a.x.data()[i] ==
          Catch::Approx(-2.0 + 5.0 * a.x_norm.data()[i]).margin(1e-5));
}

TEST_CASE("observational mode equals interventional with zero guidance",
          "[sampling]") {
  auto model = tiny_model(2);
  auto c = random_context(2, 55);
  SampleConfig cfg;
  cfg.mode = "int";
  cfg.omega = 0.0;
  cfg.steps = 5;
  cfg.sampler = "ddpm";
  cfg.seed = 3;
  auto via_int = sample_interventional(*model, c, cfg);
  SampleConfig obs = cfg;
  obs.mode = "obs";
  obs.omega = 1.0;  // must be overridden by the observational front end
  auto via_obs = sample_observational(*model, c, obs);
  CHECK(via_int.x_norm.v == via_obs.x_norm.v);
}

TEST_CASE("guidance scale changes the samples", "[sampling]") {
  auto model = tiny_model(2);
  auto c = random_context(2, 60);
  SampleConfig cfg;
  cfg.steps = 4;
  cfg.seed = 12;
  cfg.omega = 0.0;
  auto a = sample_interventional(*model, c, cfg);
  cfg.omega = 2.0;
  auto b = sample_interventional(*model, c, cfg);
  CHECK(a.x_norm.v != b.x_norm.v);
}

TEST_CASE("posterior evaluation counts expose the weight provenance",
          "[sampling]") {
  auto model = tiny_model(2);
  auto c = random_context(2, 71);

  SampleConfig ddpm;
  ddpm.sampler = "ddpm";
  ddpm.steps = 6;
  ddpm.seed = 2;
  auto a = sample_interventional(*model, c, ddpm);
  CHECK(a.posterior_evals == 6);  // one per denoiser evaluation

  SampleConfig dpm;
  dpm.sampler = "dpms2";
  dpm.steps = 4;
  dpm.seed = 2;
  auto b = sample_interventional(*model, c, dpm);
  CHECK(b.posterior_evals == 2 * 4 + 1);  // two per step plus the x0 close

  Rng fr(5);
  auto x_f = Tensor<float>::uniform({2, 1, 16}, fr, 0.0, 1.0);
  auto c_f = random_context(2, 72);
  auto c_p = random_context(2, 73);
  auto cf = sample_counterfactual(*model, x_f, c_f, c_p, dpm);
  CHECK(cf.posterior_evals == 1);  // abducted once, then frozen
  CHECK(cf.x_norm.all_finite());

  auto w = cf.w_last;
  REQUIRE(w.dim(0) == 2);
  REQUIRE(w.dim(1) == 2);
  for (int n = 0; n < 2; ++n)
    CHECK(w.at(n, 0) + w.at(n, 1) == Catch::Approx(1.0).margin(1e-5));
}

TEST_CASE("ablation modes carry through sampling provenance", "[sampling]") {
  auto c = random_context(2, 81);
  SampleConfig cfg;
  cfg.steps = 3;
  cfg.seed = 6;

  auto none = tiny_model(3, "no_env");
  auto r0 = sample_interventional(*none, c, cfg);
  CHECK(r0.posterior_evals == 0);
  REQUIRE(r0.w_last.dim(1) == 1);
  CHECK(r0.w_last.at(0, 0) == 1.0f);

  auto rnd = tiny_model(3, "rand_env");
  auto r1 = sample_interventional(*rnd, c, cfg);
  auto r2 = sample_interventional(*rnd, c, cfg);
  CHECK(r1.posterior_evals == 0);
  CHECK(r1.x_norm.v == r2.x_norm.v);  // weight draws ride a named substream
  for (int k = 0; k < 3; ++k) CHECK(r1.w_last.at(0, k) > 0.0f);
}

TEST_CASE("counterfactual context mismatch is rejected", "[sampling]") {
  auto model = tiny_model(2);
  Rng fr(5);
  auto x_f = Tensor<float>::uniform({2, 1, 16}, fr, 0.0, 1.0);
  auto c_f = random_context(2, 90);
  Rng r2(91);
  auto c_bad = Tensor<float>::uniform({2, 2, 8}, r2, 0.0, 1.0);
  SampleConfig cfg;
  cfg.steps = 2;
  CHECK_THROWS_AS(sample_counterfactual(*model, x_f, c_f, c_bad, cfg),
                  DataError);
}

TEST_CASE("full-length ancestral sampling stays finite", "[sampling]") {
  auto model = tiny_model(2);
  auto c = random_context(1, 99);
  SampleConfig cfg;
  cfg.sampler = "ddpm";
  cfg.steps = 30;  // the whole training schedule
  cfg.seed = 1;
  auto r = sample_interventional(*model, c, cfg);
  CHECK(r.x_norm.all_finite());
  CHECK(r.posterior_evals == 30);
}
