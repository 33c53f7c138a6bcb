#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "catsg/core/rng.hpp"
#include "catsg/env/envinfer.hpp"
#include "catsg/nn/graph.hpp"
#include "catsg/nn/layers.hpp"
#include "catsg/nn/ops.hpp"
#include "catsg/nn/tcn.hpp"
#include "catsg/nn/unet.hpp"

namespace catsg::testing {

// Central-difference gradient verification, run in double precision.
// `build` must reconstruct the scalar loss from the captured leaves on every
// call; the checker perturbs leaf values in place and restores them.
struct GradReport {
  bool ok = true;
  double max_abs_err = 0.0;
  // |analytic - numeric| / max(|analytic|, |numeric|, 1)
  double max_rel_err = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::string where;
};

inline GradReport gradcheck(const std::vector<VarD>& leaves,
                            const std::function<VarD()>& build,
                            double h_base = 1e-5, double atol = 1e-6,
                            double rtol = 1e-4) {
  for (const auto& l : leaves) zero_grad(l);
  VarD loss = build();
  backward(loss);
  std::vector<TensorD> analytic;
  analytic.reserve(leaves.size());
  for (const auto& l : leaves)
    analytic.push_back(l->grad.numel() ? l->grad : TensorD(l->val.shape));

  GradReport rep;
  for (size_t li = 0; li < leaves.size(); ++li) {
    const auto& l = leaves[li];
    for (size_t j = 0; j < l->val.v.size(); ++j) {
      double x0 = l->val.v[j];
      double h = h_base * std::max(1.0, std::abs(x0));
      double fp, fm;
      {
        NoGradGuard ng;
        l->val.v[j] = x0 + h;
        fp = build()->val.v[0];
        l->val.v[j] = x0 - h;
        fm = build()->val.v[0];
        l->val.v[j] = x0;
      }
      double gn = (fp - fm) / (2.0 * h);
      double ga = analytic[li].v[j];
      double abs_err = std::abs(ga - gn);
      double rel_err = abs_err / std::max({std::abs(ga), std::abs(gn), 1.0});
      if (abs_err > rep.max_abs_err) {
        rep.max_abs_err = abs_err;
        rep.worst_analytic = ga;
        rep.worst_numeric = gn;
        rep.where = "leaf " + std::to_string(li) + " elem " + std::to_string(j);
      }
      rep.max_rel_err = std::max(rep.max_rel_err, rel_err);
      if (abs_err > atol + rtol * std::max(std::abs(ga), std::abs(gn)))
        rep.ok = false;
    }
  }
  return rep;
}

struct NamedCheck {
  std::string name;
  std::function<GradReport()> run;
};

// Gradient checks for every primitive op. Shared between the unit suite and
// the acceptance gate, so both exercise identical graphs.
inline std::vector<NamedCheck> core_op_checks() {
  using catsg::Tensor;
  std::vector<NamedCheck> checks;
  auto add_check = [&](std::string name, std::function<GradReport()> fn) {
    checks.push_back({std::move(name), std::move(fn)});
  };

  add_check("elementwise add/sub/mul/scale/square", [] {
    Rng rng(101);
    auto a = leaf(TensorD::randn({3, 5}, rng), true);
    auto b = leaf(TensorD::randn({3, 5}, rng), true);
    return gradcheck({a, b}, [&] {
      return mean_all(square(add(mul(a, b), sub(scale(a, 0.7), b))));
    });
  });

  add_check("silu", [] {
    Rng rng(102);
    auto a = leaf(TensorD::randn({4, 6}, rng), true);
    return gradcheck({a}, [&] { return mean_all(square(silu(a))); });
  });

  add_check("relu", [] {
    Rng rng(103);
    auto a = leaf(TensorD::randn({4, 6}, rng), true);
    return gradcheck({a}, [&] { return mean_all(square(relu(a))); });
  });

  add_check("tanh", [] {
    Rng rng(104);
    auto a = leaf(TensorD::randn({4, 6}, rng), true);
    return gradcheck({a}, [&] { return mean_all(square(tanh_op(a))); });
  });

  add_check("mul_const and reshape", [] {
    Rng rng(105);
    Rng rng2(1105);
    auto a = leaf(TensorD::randn({2, 3, 4}, rng), true);
    TensorD m = TensorD::randn({2, 12}, rng2);
    return gradcheck({a}, [&, m] {
      return mean_all(square(mul_const(reshape(a, {2, 12}), m)));
    });
  });

  add_check("linear", [] {
    Rng rng(106);
    auto x = leaf(TensorD::randn({4, 5}, rng), true);
    auto W = leaf(TensorD::randn({3, 5}, rng), true);
    auto b = leaf(TensorD::randn({3}, rng), true);
    return gradcheck({x, W, b}, [&] { return mean_all(square(linear(x, W, b))); });
  });

  add_check("matmul_nt", [] {
    Rng rng(107);
    auto a = leaf(TensorD::randn({4, 6}, rng), true);
    auto b = leaf(TensorD::randn({3, 6}, rng), true);
    return gradcheck({a, b}, [&] { return mean_all(square(matmul_nt(a, b))); });
  });

  add_check("softmax_rows", [] {
    Rng rng(108);
    Rng rng2(1108);
    auto x = leaf(TensorD::randn({3, 5}, rng), true);
    TensorD m = TensorD::randn({3, 5}, rng2);
    return gradcheck({x}, [&, m] {
      return sum_all(mul_const(softmax_rows(x), m));
    });
  });

  add_check("log_softmax_rows", [] {
    Rng rng(109);
    Rng rng2(1109);
    auto x = leaf(TensorD::randn({3, 5}, rng), true);
    TensorD m = TensorD::randn({3, 5}, rng2);
    return gradcheck({x}, [&, m] {
      return sum_all(mul_const(log_softmax_rows(x), m));
    });
  });

  add_check("cross_entropy_rows", [] {
    Rng rng(110);
    auto x = leaf(TensorD::randn({4, 3}, rng), true);
    TensorD tgt({4, 3});
    for (int n = 0; n < 4; ++n) tgt.at(n, n % 3) = 1.0;
    return gradcheck({x}, [&, tgt] {
      return cross_entropy_rows(tgt, log_softmax_rows(x));
    });
  });

  add_check("conv1d same stride 1", [] {
    Rng rng(111);
    auto x = leaf(TensorD::randn({2, 2, 8}, rng), true);
    auto W = leaf(TensorD::randn({3, 2, 3}, rng, 0.5), true);
    auto b = leaf(TensorD::randn({3}, rng), true);
    return gradcheck({x, W, b},
                     [&] { return mean_all(square(conv1d(x, W, b))); });
  });

  add_check("conv1d same stride 2", [] {
    Rng rng(112);
    auto x = leaf(TensorD::randn({2, 3, 8}, rng), true);
    auto W = leaf(TensorD::randn({4, 3, 3}, rng, 0.5), true);
    auto b = leaf(TensorD::randn({4}, rng), true);
    return gradcheck({x, W, b}, [&] {
      return mean_all(square(conv1d(x, W, b, 2)));
    });
  });

  add_check("conv1d causal dilation 4", [] {
    Rng rng(113);
    auto x = leaf(TensorD::randn({2, 2, 12}, rng), true);
    auto W = leaf(TensorD::randn({2, 2, 3}, rng, 0.5), true);
    auto b = leaf(TensorD::randn({2}, rng), true);
    return gradcheck({x, W, b}, [&] {
      return mean_all(square(conv1d(x, W, b, 1, 4, Pad::Causal)));
    });
  });

  add_check("upsample2 and concat_channels", [] {
    Rng rng(114);
    auto a = leaf(TensorD::randn({2, 2, 4}, rng), true);
    auto b = leaf(TensorD::randn({2, 3, 8}, rng), true);
    return gradcheck({a, b}, [&] {
      return mean_all(square(concat_channels<double>({upsample2(a), b})));
    });
  });

  add_check("group_norm", [] {
    Rng rng(115);
    auto x = leaf(TensorD::randn({2, 4, 6}, rng), true);
    auto g = leaf(TensorD::uniform({4}, rng, 0.5, 1.5), true);
    auto be = leaf(TensorD::randn({4}, rng, 0.1), true);
    return gradcheck({x, g, be}, [&] {
      return mean_all(square(group_norm(x, g, be, 2)));
    });
  });

  add_check("layer_norm", [] {
    Rng rng(116);
    auto x = leaf(TensorD::randn({3, 7}, rng), true);
    auto g = leaf(TensorD::uniform({7}, rng, 0.5, 1.5), true);
    auto be = leaf(TensorD::randn({7}, rng, 0.1), true);
    return gradcheck({x, g, be}, [&] {
      return mean_all(square(layer_norm(x, g, be)));
    });
  });

  add_check("time_mean/std/max", [] {
    Rng rng(117);
    auto x = leaf(TensorD::randn({2, 3, 6}, rng), true);
    return gradcheck({x}, [&] {
      return mean_all(square(concat_cols<double>(
          {time_mean(x), time_std(x), time_max(x)})));
    });
  });

  add_check("weighted_time_sum", [] {
    Rng rng(118);
    auto h = leaf(TensorD::randn({2, 3, 5}, rng), true);
    auto a = leaf(TensorD::randn({2, 1, 5}, rng), true);
    return gradcheck({h, a}, [&] {
      auto w = reshape(softmax_rows(reshape(a, {2, 5})), {2, 1, 5});
      return mean_all(square(weighted_time_sum(h, w)));
    });
  });

  add_check("dft_power", [] {
    Rng rng(119);
    auto x = leaf(TensorD::randn({1, 2, 8}, rng), true);
    return gradcheck({x}, [&] { return mean_all(square(dft_power(x))); },
                     1e-5, 1e-6, 2e-4);
  });

  add_check("spectral_centroid", [] {
    Rng rng(120);
    auto x = leaf(TensorD::randn({1, 2, 8}, rng), true);
    return gradcheck({x}, [&] {
      return mean_all(square(spectral_centroid(dft_power(x))));
    });
  });

  add_check("topk_mean_power", [] {
    Rng rng(121);
    auto x = leaf(TensorD::randn({2, 2, 8}, rng), true);
    return gradcheck({x}, [&] {
      return mean_all(square(topk_mean_power(dft_power(x), 3)));
    });
  });

  add_check("l2_normalize_rows", [] {
    Rng rng(122);
    Rng rng2(1122);
    auto x = leaf(TensorD::randn({3, 6}, rng), true);
    TensorD m = TensorD::randn({3, 6}, rng2);
    return gradcheck({x}, [&, m] {
      return sum_all(mul_const(l2_normalize_rows(x), m));
    });
  });

  add_check("gram_orth_loss", [] {
    Rng rng(123);
    auto M = leaf(TensorD::randn({4, 6}, rng), true);
    return gradcheck({M}, [&] {
      return gram_orth_loss(l2_normalize_rows(M));
    });
  });

  add_check("concat_rows and gather_rows", [] {
    Rng rng(124);
    auto a = leaf(TensorD::randn({2, 4}, rng), true);
    auto b = leaf(TensorD::randn({3, 4}, rng), true);
    return gradcheck({a, b}, [&] {
      return mean_all(square(gather_rows(concat_rows(a, b), {4, 0, 2, 0})));
    });
  });

  add_check("broadcast_row and repeat_time", [] {
    Rng rng(125);
    auto v = leaf(TensorD::randn({3}, rng), true);
    return gradcheck({v}, [&] {
      return mean_all(square(repeat_time(broadcast_row(v, 2), 4)));
    });
  });

  add_check("add_time_broadcast", [] {
    Rng rng(126);
    auto x = leaf(TensorD::randn({2, 3, 4}, rng), true);
    auto v = leaf(TensorD::randn({2, 3}, rng), true);
    return gradcheck({x, v}, [&] {
      return mean_all(square(add_time_broadcast(x, v)));
    });
  });

  add_check("mix_branches", [] {
    Rng rng(127);
    Rng rng2(1127);
    auto eps = leaf(TensorD::randn({6, 2, 4}, rng), true);
    TensorD w({2, 3});
    for (int n = 0; n < 2; ++n) {
      double s = 0;
      for (int k = 0; k < 3; ++k) {
        w.at(n, k) = rng2.uniform(0.1, 1.0);
        s += w.at(n, k);
      }
      for (int k = 0; k < 3; ++k) w.at(n, k) /= s;
    }
    return gradcheck({eps}, [&, w] {
      return mean_all(square(mix_branches(eps, w)));
    });
  });

  add_check("embedding_time", [] {
    Rng rng(128);
    auto tbl = leaf(TensorD::randn({5, 3}, rng), true);
    std::vector<int> idx = {0, 4, 2, 2, 1, 0, 3, 4};
    return gradcheck({tbl}, [&, idx] {
      return mean_all(square(embedding_time(tbl, idx, 2, 4)));
    });
  });

  add_check("mse composite", [] {
    Rng rng(129);
    auto a = leaf(TensorD::randn({2, 3, 4}, rng), true);
    auto b = leaf(TensorD::randn({2, 3, 4}, rng), true);
    return gradcheck({a, b}, [&] { return mse(a, b); });
  });

  return checks;
}

inline std::vector<VarD> all_params(const ParamStore<double>& ps) {
  std::vector<VarD> out;
  for (const auto& [name, v] : ps.entries()) out.push_back(v);
  return out;
}

// Gradient checks through whole layers and networks, at miniature sizes so
// the numeric sweep stays cheap. Every registered parameter is perturbed.
inline std::vector<NamedCheck> layer_checks() {
  std::vector<NamedCheck> checks;
  auto add_check = [&](std::string name, std::function<GradReport()> fn) {
    checks.push_back({std::move(name), std::move(fn)});
  };

  add_check("linear layer", [] {
    Rng rng(201);
    ParamStore<double> ps;
    Linear<double> lin(ps, "lin", 4, 3, rng);
    auto x = leaf(TensorD::randn({5, 4}, rng), true);
    auto leaves = all_params(ps);
    leaves.push_back(x);
    return gradcheck(leaves, [&] { return mean_all(square(lin(x))); });
  });

  add_check("mlp", [] {
    Rng rng(202);
    ParamStore<double> ps;
    Mlp<double> mlp(ps, "mlp", 4, 6, 2, rng);
    auto x = leaf(TensorD::randn({3, 4}, rng), true);
    auto leaves = all_params(ps);
    leaves.push_back(x);
    return gradcheck(leaves, [&] { return mean_all(square(mlp(x))); });
  });

  add_check("conv layer strided", [] {
    Rng rng(203);
    ParamStore<double> ps;
    Conv1dLayer<double> conv(ps, "conv", 2, 3, 3, rng, 2);
    auto x = leaf(TensorD::randn({2, 2, 8}, rng), true);
    auto leaves = all_params(ps);
    leaves.push_back(x);
    return gradcheck(leaves, [&] { return mean_all(square(conv(x))); });
  });

  add_check("norm layers", [] {
    Rng rng(204);
    ParamStore<double> ps;
    GroupNormLayer<double> gn(ps, "gn", 4, 2);
    LayerNormLayer<double> ln(ps, "ln", 4);
    auto x3 = leaf(TensorD::randn({2, 4, 5}, rng), true);
    auto x2 = leaf(TensorD::randn({3, 4}, rng), true);
    auto leaves = all_params(ps);
    leaves.push_back(x3);
    leaves.push_back(x2);
    return gradcheck(leaves, [&] {
      return add(mean_all(square(gn(x3))), mean_all(square(ln(x2))));
    });
  });

  add_check("weight-normalized conv", [] {
    Rng rng(208);
    ParamStore<double> ps;
    WnConv1d<double> conv(ps, "wn", 2, 3, 3, rng, 1, 2, Pad::Causal);
    auto x = leaf(TensorD::randn({2, 2, 8}, rng), true);
    auto leaves = all_params(ps);
    leaves.push_back(x);
    return gradcheck(leaves, [&] { return mean_all(square(conv(x))); });
  });

  add_check("tcn", [] {
    Rng rng(205);
    ParamStore<double> ps;
    Tcn<double> tcn(ps, "tcn", 3, 8, 2, rng);
    auto x = leaf(TensorD::randn({2, 3, 8}, rng), true);
    auto leaves = all_params(ps);
    leaves.push_back(x);
    return gradcheck(leaves, [&] { return mean_all(square(tcn(x))); });
  });

  add_check("unet resblock", [] {
    Rng rng(206);
    ParamStore<double> ps;
    UnetResBlock<double> blk(ps, "blk", 4, 6, 2, rng);
    auto x = leaf(TensorD::randn({2, 4, 8}, rng), true);
    auto e = leaf(TensorD::randn({2, 6}, rng), true);
    auto leaves = all_params(ps);
    leaves.push_back(x);
    leaves.push_back(e);
    return gradcheck(leaves, [&] { return mean_all(square(blk(x, e))); });
  });

  add_check("environment posterior end to end", [] {
    Rng rng(209);
    ParamStore<double> ps;
    EnvInfer<double> infer(ps, "inf", 3, 8, rng);
    EnvBank<double> bank(ps, "bank", 3, 8, rng);
    auto x = leaf(TensorD::randn({2, 1, 8}, rng), true);
    auto c = leaf(TensorD::randn({2, 2, 8}, rng), true);
    auto leaves = all_params(ps);
    leaves.push_back(x);
    leaves.push_back(c);
    return gradcheck(leaves, [&] {
      auto out = infer.forward(x, c, bank);
      return add(mean_all(square(out.s)), gram_orth_loss(bank.normalized()));
    });
  });

  add_check("unet end to end", [] {
    Rng rng(207);
    ParamStore<double> ps;
    UNet1d<double> net(ps, "net", 3, 1, 8, rng, 4);
    // the zero-started output conv would mask most gradients; nudge it
    Rng rng2(1207);
    for (auto& v : net.out.W->val.v) v = rng2.uniform(-0.2, 0.2);
    auto x = leaf(TensorD::randn({1, 3, 8}, rng), true);
    auto leaves = all_params(ps);
    leaves.push_back(x);
    return gradcheck(leaves, [&] {
      return mean_all(square(net(x, {2.5})));
    });
  });

  return checks;
}

}  // namespace catsg::testing
