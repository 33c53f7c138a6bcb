#pragma once

#include <cmath>
#include <string>

#include "catsg/core/rng.hpp"
#include "catsg/nn/module.hpp"
#include "catsg/nn/ops.hpp"

namespace catsg {

// Weights start uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases at zero.

template <class S>
struct Linear {
  Var<S> W, b;

  Linear(ParamStore<S>& ps, const std::string& name, int in, int out, Rng& rng) {
    S bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(in)));
    W = ps.add(name + ".W", Tensor<S>::uniform({out, in}, rng, -bound, bound));
    b = ps.add(name + ".b", Tensor<S>::zeros({out}));
  }

  Var<S> operator()(const Var<S>& x) const { return linear(x, W, b); }
};

template <class S>
struct Conv1dLayer {
  Var<S> W, b;
  int stride = 1;
  int dilation = 1;
  Pad pad = Pad::Same;

  Conv1dLayer(ParamStore<S>& ps, const std::string& name, int ci, int co, int k,
              Rng& rng, int stride_in = 1, int dilation_in = 1,
              Pad pad_in = Pad::Same)
      : stride(stride_in), dilation(dilation_in), pad(pad_in) {
    S bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(ci) * k));
    W = ps.add(name + ".W", Tensor<S>::uniform({co, ci, k}, rng, -bound, bound));
    b = ps.add(name + ".b", Tensor<S>::zeros({co}));
  }

  Var<S> operator()(const Var<S>& x) const {
    return conv1d(x, W, b, stride, dilation, pad);
  }
};

// Convolution with weight-normalized filters: each output filter is a unit
// direction times a learned gain, so the layer carries no activation
// statistics and stays safe inside causal stacks. Gains start at the raw
// filter norms, making the initial response identical to a plain conv.
template <class S>
struct WnConv1d {
  Var<S> V, g, b;
  int co, ci, k;
  int stride = 1;
  int dilation = 1;
  Pad pad = Pad::Same;

  WnConv1d(ParamStore<S>& ps, const std::string& name, int ci_in, int co_in,
           int k_in, Rng& rng, int stride_in = 1, int dilation_in = 1,
           Pad pad_in = Pad::Same)
      : co(co_in),
        ci(ci_in),
        k(k_in),
        stride(stride_in),
        dilation(dilation_in),
        pad(pad_in) {
    S bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(ci) * k));
    V = ps.add(name + ".V", Tensor<S>::uniform({co, ci, k}, rng, -bound, bound));
    Tensor<S> gains({co});
    for (int o = 0; o < co; ++o) {
      double ss = 0.0;
      for (int j = 0; j < ci * k; ++j) {
        double w = V->val.v[static_cast<size_t>(o) * ci * k + j];
        ss += w * w;
      }
      gains.at(o) = static_cast<S>(std::sqrt(ss));
    }
    g = ps.add(name + ".g", std::move(gains));
    b = ps.add(name + ".b", Tensor<S>::zeros({co}));
  }

  Var<S> operator()(const Var<S>& x) const {
    auto W = reshape(mul_rows(l2_normalize_rows(reshape(V, {co, ci * k})), g),
                     {co, ci, k});
    return conv1d(x, W, b, stride, dilation, pad);
  }
};

template <class S>
struct GroupNormLayer {
  Var<S> gamma, beta;
  int groups;

  GroupNormLayer(ParamStore<S>& ps, const std::string& name, int channels,
                 int groups_in)
      : groups(groups_in) {
    gamma = ps.add(name + ".gamma", Tensor<S>::full({channels}, S(1)));
    beta = ps.add(name + ".beta", Tensor<S>::zeros({channels}));
  }

  Var<S> operator()(const Var<S>& x) const {
    return group_norm(x, gamma, beta, groups);
  }
};

template <class S>
struct LayerNormLayer {
  Var<S> gamma, beta;

  LayerNormLayer(ParamStore<S>& ps, const std::string& name, int features) {
    gamma = ps.add(name + ".gamma", Tensor<S>::full({features}, S(1)));
    beta = ps.add(name + ".beta", Tensor<S>::zeros({features}));
  }

  Var<S> operator()(const Var<S>& x) const { return layer_norm(x, gamma, beta); }
};

// two-layer perceptron with a SiLU hidden activation
template <class S>
struct Mlp {
  Linear<S> fc1, fc2;

  Mlp(ParamStore<S>& ps, const std::string& name, int in, int hidden, int out,
      Rng& rng)
      : fc1(ps, name + ".fc1", in, hidden, rng),
        fc2(ps, name + ".fc2", hidden, out, rng) {}

  Var<S> operator()(const Var<S>& x) const { return fc2(silu(fc1(x))); }
};

}  // namespace catsg
