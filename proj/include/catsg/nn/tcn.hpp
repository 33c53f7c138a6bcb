#pragma once

#include <string>
#include <vector>

#include "catsg/nn/layers.hpp"

namespace catsg {

// Dilated causal residual block: two weight-normalized k=3 convolutions at
// the same dilation with ReLU activations, added back onto the input.
// Normalization over activations would mix future steps into past outputs,
// so only parameter-side normalization appears here.
template <class S>
struct TcnBlock {
  WnConv1d<S> conv1, conv2;

  TcnBlock(ParamStore<S>& ps, const std::string& name, int width, int dilation,
           Rng& rng)
      : conv1(ps, name + ".conv1", width, width, 3, rng, 1, dilation,
              Pad::Causal),
        conv2(ps, name + ".conv2", width, width, 3, rng, 1, dilation,
              Pad::Causal) {}

  Var<S> operator()(const Var<S>& x) const {
    auto h = relu(conv2(relu(conv1(x))));
    return relu(add(h, x));
  }
};

// Temporal encoder: 1x1 entry projection, then causal blocks at dilations
// 1, 2, 4, ... so the receptive field grows geometrically with depth.
template <class S>
struct Tcn {
  Conv1dLayer<S> entry;
  std::vector<TcnBlock<S>> blocks;

  Tcn(ParamStore<S>& ps, const std::string& name, int in_channels, int width,
      int n_blocks, Rng& rng)
      : entry(ps, name + ".entry", in_channels, width, 1, rng) {
    blocks.reserve(static_cast<size_t>(n_blocks));
    for (int i = 0; i < n_blocks; ++i)
      blocks.emplace_back(ps, name + ".block" + std::to_string(i), width,
                          1 << i, rng);
  }

  // [N, in_channels, T] -> [N, width, T]
  Var<S> operator()(const Var<S>& x) const {
    auto h = entry(x);
    for (const auto& blk : blocks) h = blk(h);
    return h;
  }
};

}  // namespace catsg
