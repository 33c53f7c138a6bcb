#pragma once

#include <vector>

#include "catsg/core/rng.hpp"
#include "catsg/core/tensor.hpp"

namespace catsg {

// rotate every channel right by k steps: out[t] = in[(t - k) mod T]
template <class S>
Tensor<S> circular_shift(const Tensor<S>& x, int k) {
  const int N = x.dim(0), C = x.dim(1), T = x.dim(2);
  int r = ((k % T) + T) % T;
  Tensor<S> out({N, C, T});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < T; ++t)
        out.at(n, c, t) = x.at(n, c, (t - r + T) % T);
  return out;
}

struct AugmentConfig {
  double jitter = 0.05;  // as a fraction of the per-channel training std
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double max_shift_frac = 0.125;  // of T, each direction
};

template <class S>
struct ViewPair {
  Tensor<S> x, c;
};

// One stochastic view of a batch: per-element Gaussian jitter scaled by the
// channel's training std, one magnitude factor per sample, and a circular
// time shift shared by x and c. Channels whose std entry is zero (categorical
// codes, phase encodings) pass through untouched apart from the shift.
template <class S>
ViewPair<S> augment(const Tensor<S>& x, const Tensor<S>& c,
                    const std::vector<double>& x_std,
                    const std::vector<double>& c_std,
                    const AugmentConfig& cfg, Rng& rng) {
  const int N = x.dim(0), T = x.dim(2);
  CATSG_CHECK(c.dim(0) == N && c.dim(2) == T, DataError,
              "augment: series and context are not aligned");
  CATSG_CHECK(static_cast<int>(x_std.size()) == x.dim(1) &&
                  static_cast<int>(c_std.size()) == c.dim(1),
              DataError, "augment: one std entry per channel required");

  const int max_shift = static_cast<int>(cfg.max_shift_frac * T);
  ViewPair<S> view{x, c};
  auto perturb = [&](Tensor<S>& dst, const std::vector<double>& stds, int n,
                     double scl) {
    for (int ch = 0; ch < dst.dim(1); ++ch) {
      double sigma = cfg.jitter * stds[static_cast<size_t>(ch)];
      if (sigma == 0.0) continue;
      for (int t = 0; t < T; ++t) {
        double v = dst.at(n, ch, t) + sigma * rng.normal();
        dst.at(n, ch, t) = static_cast<S>(v * scl);
      }
    }
  };

  std::vector<int> shifts(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n) {
    double scl = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    shifts[static_cast<size_t>(n)] =
        max_shift == 0
            ? 0
            : static_cast<int>(rng.below(static_cast<uint64_t>(2 * max_shift + 1))) -
                  max_shift;
    perturb(view.x, x_std, n, scl);
    perturb(view.c, c_std, n, scl);
  }
  // shifts are applied per sample after the value perturbations
  for (int n = 0; n < N; ++n) {
    int k = shifts[static_cast<size_t>(n)];
    if (k == 0) continue;
    for (auto* tens : {&view.x, &view.c}) {
      const int C = tens->dim(1);
      std::vector<S> row(static_cast<size_t>(T));
      for (int ch = 0; ch < C; ++ch) {
        for (int t = 0; t < T; ++t)
          row[static_cast<size_t>(t)] = tens->at(n, ch, (((t - k) % T) + T) % T);
        for (int t = 0; t < T; ++t) tens->at(n, ch, t) = row[static_cast<size_t>(t)];
      }
    }
  }
  return view;
}

}  // namespace catsg
