#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "catsg/data/bundle.hpp"
#include "catsg/data/oscillator.hpp"

namespace catsg {

struct SynthConfig {
  Scenario scenario = Scenario::VM;
  int counts[3] = {3000, 1000, 1000};  // train, val, test
  int T = 64;
  double dt = 0.25;
  std::uint64_t seed = 42;
  bool with_cf = true;
  EnvRanges ranges;
};

namespace detail {

inline std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string synth_dataset_id(const SynthConfig& cfg) {
  std::string canon = to_string(cfg.scenario);
  for (int c : cfg.counts) canon += "/" + std::to_string(c);
  canon += "/T" + std::to_string(cfg.T) + "/dt" + std::to_string(cfg.dt);
  canon += "/seed" + std::to_string(cfg.seed);
  canon += cfg.with_cf ? "/cf" : "/nocf";
  std::string name = cfg.scenario == Scenario::VM ? "harmonic-vm-" : "harmonic-vp-";
  return name + hex16(fnv1a64(canon));
}

}  // namespace detail

// Simulates the factual (and optionally counterfactual) splits and packs them
// into a normalized in-memory bundle. Per-sample RNG streams are derived from
// (seed, split, index), so a given sample is reproducible independent of the
// split sizes around it.
inline Bundle build_synthetic_bundle(const SynthConfig& cfg) {
  for (int c : cfg.counts)
    CATSG_CHECK(c > 0, ConfigError, "gen-data: split counts must be positive");

  Bundle b;
  b.meta.scenario = to_string(cfg.scenario);
  b.meta.dataset_id = detail::synth_dataset_id(cfg);
  b.meta.T = cfg.T;
  b.meta.D = 1;
  b.meta.D_c = 2;
  b.meta.dt = cfg.dt;
  b.meta.channel_names = {"acceleration", "velocity", "position"};
  b.meta.seed = cfg.seed;
  b.meta.has_cf = cfg.with_cf;

  const InitRanges factual = factual_init_ranges();
  const InitRanges counterfactual = counterfactual_init_ranges();
  Rng root = named_stream(cfg.seed, "gen-data");

  struct RawSplit {
    std::vector<Trajectory> fact, cf;
    std::vector<OscParams> env;
    std::vector<InitialState> init, init_cf;
  };
  RawSplit raw[3];

  for (int s = 0; s < 3; ++s) {
    Split split = static_cast<Split>(s);
    Rng split_rng = root.derive(to_string(split));
    raw[s].fact.reserve(static_cast<size_t>(cfg.counts[s]));
    for (int i = 0; i < cfg.counts[s]; ++i) {
      Rng r = split_rng.derive(static_cast<std::uint64_t>(i));
      OscParams env = sample_environment(cfg.scenario, split, cfg.ranges, r);
      InitialState init = sample_initial_state(factual, r);
      raw[s].env.push_back(env);
      raw[s].init.push_back(init);
      raw[s].fact.push_back(simulate_oscillator(env, init, cfg.T, cfg.dt));
      if (cfg.with_cf) {
        InitialState init_cf = sample_initial_state(counterfactual, r);
        raw[s].init_cf.push_back(init_cf);
        raw[s].cf.push_back(simulate_oscillator(env, init_cf, cfg.T, cfg.dt));
      }
    }
  }

  // train-split min/max per channel (factual trajectories only)
  double lo[3], hi[3];
  for (int ch = 0; ch < 3; ++ch) {
    lo[ch] = std::numeric_limits<double>::infinity();
    hi[ch] = -std::numeric_limits<double>::infinity();
  }
  for (const Trajectory& tr : raw[0].fact) {
    const std::vector<double>* chans[3] = {&tr.accel, &tr.vel, &tr.pos};
    for (int ch = 0; ch < 3; ++ch)
      for (double v : *chans[ch]) {
        lo[ch] = std::min(lo[ch], v);
        hi[ch] = std::max(hi[ch], v);
      }
  }
  b.meta.norm_min = {lo[0], lo[1], lo[2]};
  b.meta.norm_max = {hi[0], hi[1], hi[2]};

  auto pack = [&](const std::vector<Trajectory>& trs, bool is_x) {
    int N = static_cast<int>(trs.size());
    int C = is_x ? 1 : 2;
    Tensor<float> t({N, C, cfg.T});
    for (int n = 0; n < N; ++n)
      for (int tt = 0; tt < cfg.T; ++tt) {
        const Trajectory& tr = trs[static_cast<size_t>(n)];
        if (is_x) {
          t.at(n, 0, tt) = normalize_value(tr.accel[static_cast<size_t>(tt)], lo[0], hi[0]);
        } else {
          t.at(n, 0, tt) = normalize_value(tr.vel[static_cast<size_t>(tt)], lo[1], hi[1]);
          t.at(n, 1, tt) = normalize_value(tr.pos[static_cast<size_t>(tt)], lo[2], hi[2]);
        }
      }
    return t;
  };

  const char* names[3] = {"train", "val", "test"};
  for (int s = 0; s < 3; ++s) {
    b.meta.splits.emplace_back(names[s], cfg.counts[s]);
    SplitData sd;
    sd.x = pack(raw[s].fact, true);
    sd.c = pack(raw[s].fact, false);
    if (cfg.with_cf) {
      sd.xcf = pack(raw[s].cf, true);
      sd.ccf = pack(raw[s].cf, false);
    }
    for (int i = 0; i < cfg.counts[s]; ++i) {
      const OscParams& p = raw[s].env[static_cast<size_t>(i)];
      json rec = {{"alpha", p.alpha},
                  {"beta", p.beta},
                  {"eta", p.eta},
                  {"x0", raw[s].init[static_cast<size_t>(i)].x0},
                  {"v0", raw[s].init[static_cast<size_t>(i)].v0}};
      if (cfg.with_cf) {
        rec["x0_cf"] = raw[s].init_cf[static_cast<size_t>(i)].x0;
        rec["v0_cf"] = raw[s].init_cf[static_cast<size_t>(i)].v0;
      }
      sd.params.push_back(std::move(rec));
    }
    b.by_split.emplace(names[s], std::move(sd));
  }
  return b;
}

}  // namespace catsg
