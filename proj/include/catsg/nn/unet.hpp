#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "catsg/nn/layers.hpp"

namespace catsg {

// Residual block with the step embedding injected between the convolutions.
template <class S>
struct UnetResBlock {
  GroupNormLayer<S> gn1, gn2;
  Conv1dLayer<S> conv1, conv2;
  Linear<S> emb_proj;

  UnetResBlock(ParamStore<S>& ps, const std::string& name, int channels,
               int emb_dim, int groups, Rng& rng)
      : gn1(ps, name + ".gn1", channels, groups),
        gn2(ps, name + ".gn2", channels, groups),
        conv1(ps, name + ".conv1", channels, channels, 3, rng),
        conv2(ps, name + ".conv2", channels, channels, 3, rng),
        emb_proj(ps, name + ".emb", emb_dim, channels, rng) {}

  Var<S> operator()(const Var<S>& x, const Var<S>& emb) const {
    auto h = conv1(silu(gn1(x)));
    h = add_time_broadcast(h, emb_proj(silu(emb)));
    h = conv2(silu(gn2(h)));
    return add(x, h);
  }
};

// 1d U-Net over [N, C, T] with three resolutions at widths w, 2w, 4w.
// Downsampling is a stride-2 convolution, upsampling nearest-neighbor
// followed by a convolution, and encoder activations re-enter the decoder
// through channel concatenation plus a 1x1 merge. The denoising step index
// arrives as a per-sample scalar (fractional values are fine) and is folded
// in through a sinusoidal embedding and a small MLP.
template <class S>
struct UNet1d {
  int in_channels, out_channels, width;

  Linear<S> temb1, temb2;
  Conv1dLayer<S> entry;
  UnetResBlock<S> enc00, enc01;
  Conv1dLayer<S> down0;
  UnetResBlock<S> enc10, enc11;
  Conv1dLayer<S> down1;
  UnetResBlock<S> mid0, mid1;
  Conv1dLayer<S> up1, merge1;
  UnetResBlock<S> dec10, dec11;
  Conv1dLayer<S> up0, merge0;
  UnetResBlock<S> dec00, dec01;
  GroupNormLayer<S> gn_out;
  Conv1dLayer<S> out;

  UNet1d(ParamStore<S>& ps, const std::string& name, int in_ch, int out_ch,
         int w, Rng& rng, int groups = 8)
      : in_channels(in_ch),
        out_channels(out_ch),
        width(w),
        temb1(ps, name + ".temb1", w, 4 * w, rng),
        temb2(ps, name + ".temb2", 4 * w, 4 * w, rng),
        entry(ps, name + ".entry", in_ch, w, 3, rng),
        enc00(ps, name + ".enc00", w, 4 * w, groups, rng),
        enc01(ps, name + ".enc01", w, 4 * w, groups, rng),
        down0(ps, name + ".down0", w, 2 * w, 3, rng, 2),
        enc10(ps, name + ".enc10", 2 * w, 4 * w, groups, rng),
        enc11(ps, name + ".enc11", 2 * w, 4 * w, groups, rng),
        down1(ps, name + ".down1", 2 * w, 4 * w, 3, rng, 2),
        mid0(ps, name + ".mid0", 4 * w, 4 * w, groups, rng),
        mid1(ps, name + ".mid1", 4 * w, 4 * w, groups, rng),
        up1(ps, name + ".up1", 4 * w, 2 * w, 3, rng),
        merge1(ps, name + ".merge1", 4 * w, 2 * w, 1, rng),
        dec10(ps, name + ".dec10", 2 * w, 4 * w, groups, rng),
        dec11(ps, name + ".dec11", 2 * w, 4 * w, groups, rng),
        up0(ps, name + ".up0", 2 * w, w, 3, rng),
        merge0(ps, name + ".merge0", 2 * w, w, 1, rng),
        dec00(ps, name + ".dec00", w, 4 * w, groups, rng),
        dec01(ps, name + ".dec01", w, 4 * w, groups, rng),
        gn_out(ps, name + ".gn_out", w, groups),
        out(ps, name + ".out", w, out_ch, 3, rng) {
    CATSG_CHECK(w % 2 == 0 && w % groups == 0, ConfigError,
                "unet width must be even and divisible by the norm groups");
    // the final projection starts at zero, so an untrained model predicts
    // the zero field instead of amplified init noise
    std::fill(out.W->val.v.begin(), out.W->val.v.end(), S(0));
  }

  Var<S> step_embedding(const std::vector<double>& tsteps) const {
    const int N = static_cast<int>(tsteps.size());
    const int half = width / 2;
    Tensor<S> se({N, width});
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * i / half);
        se.at(n, i) = static_cast<S>(std::sin(tsteps[static_cast<size_t>(n)] * freq));
        se.at(n, half + i) =
            static_cast<S>(std::cos(tsteps[static_cast<size_t>(n)] * freq));
      }
    return temb2(silu(temb1(leaf(se))));
  }

  // x: [N, in_channels, T] with T divisible by 4 -> [N, out_channels, T]
  Var<S> operator()(const Var<S>& x, const std::vector<double>& tsteps) const {
    CATSG_CHECK(x->val.dim(1) == in_channels, NumericError,
                "unet: input channel mismatch");
    CATSG_CHECK(x->val.dim(2) % 4 == 0, NumericError,
                "unet: sequence length must be divisible by 4");
    CATSG_CHECK(static_cast<int>(tsteps.size()) == x->val.dim(0), NumericError,
                "unet: one step value per sample required");
    auto emb = step_embedding(tsteps);

    auto h0 = entry(x);
    h0 = enc00(h0, emb);
    h0 = enc01(h0, emb);
    auto h1 = down0(h0);
    h1 = enc10(h1, emb);
    h1 = enc11(h1, emb);
    auto h2 = down1(h1);
    h2 = mid0(h2, emb);
    h2 = mid1(h2, emb);

    auto u1 = up1(upsample2(h2));
    u1 = merge1(concat_channels<S>({u1, h1}));
    u1 = dec10(u1, emb);
    u1 = dec11(u1, emb);
    auto u0 = up0(upsample2(u1));
    u0 = merge0(concat_channels<S>({u0, h0}));
    u0 = dec00(u0, emb);
    u0 = dec01(u0, emb);
    return out(silu(gn_out(u0)));
  }
};

}  // namespace catsg
