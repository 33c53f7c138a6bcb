#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "catsg/core/errors.hpp"
#include "catsg/core/rng.hpp"
#include "catsg/core/tensor.hpp"

namespace catsg {

// Damped harmonic oscillator with time-varying coefficients,
//   m(t) x'' + gamma(t) x' + k(t) x = 0
//   m(t)     = m0 + alpha * t
//   gamma(t) = gamma0 + beta * sin(omega_gamma * t)
//   k(t)     = k0 * (1 - eta * (1 - exp(-lambda * t)))
// The generated series use acceleration as the target channel and
// (velocity, position) as the context channels: acceleration is fully
// determined by the current state and the latent coefficients, which gives a
// clean environment -> target causal direction.
struct OscParams {
  double alpha = 0.0;
  double beta = 0.0;
  double eta = 0.0;
  double m0 = 1.0;
  double gamma0 = 0.1;
  double k0 = 1.0;
  double omega_gamma = 0.2;
  double lambda = 0.05;

  double m(double t) const { return m0 + alpha * t; }
  double gamma(double t) const { return gamma0 + beta * std::sin(omega_gamma * t); }
  double k(double t) const { return k0 * (1.0 - eta * (1.0 - std::exp(-lambda * t))); }

  double accel(double t, double pos, double vel) const {
    return -(gamma(t) * vel + k(t) * pos) / m(t);
  }
};

struct InitialState {
  double x0 = 0.0;
  double v0 = 0.0;
};

struct Trajectory {
  std::vector<double> accel;
  std::vector<double> vel;
  std::vector<double> pos;
};

// Classic fixed-step RK4 on the state (position, velocity). Values are
// reported at the grid points t_i = i * dt, i = 0..steps-1; acceleration is
// evaluated from the governing equation at each grid point. The integrator
// takes `substeps` internal RK4 steps per grid interval: at dt = 0.25 a
// single step leaves ~5e-4 relative phase drift over 64 points, while 8
// substeps push the trajectory error below 1e-6.
inline Trajectory simulate_oscillator(const OscParams& p, const InitialState& init,
                                      int steps, double dt, int substeps = 8) {
  CATSG_CHECK(steps >= 2, DataError, "oscillator: need at least 2 grid points");
  CATSG_CHECK(dt > 0.0, DataError, "oscillator: dt must be positive");
  CATSG_CHECK(substeps >= 1, DataError, "oscillator: substeps must be >= 1");
  CATSG_CHECK(p.m(0.0) > 0.0 && p.m(steps * dt) > 0.0, DataError,
              "oscillator: mass must stay positive over the window");

  Trajectory out;
  out.accel.resize(static_cast<size_t>(steps));
  out.vel.resize(static_cast<size_t>(steps));
  out.pos.resize(static_cast<size_t>(steps));

  const double h = dt / substeps;
  double x = init.x0;
  double v = init.v0;
  for (int i = 0; i < steps; ++i) {
    out.pos[static_cast<size_t>(i)] = x;
    out.vel[static_cast<size_t>(i)] = v;
    out.accel[static_cast<size_t>(i)] = p.accel(i * dt, x, v);
    if (i + 1 == steps) break;

    for (int k = 0; k < substeps; ++k) {
      double t = i * dt + k * h;
      auto fv = [&p](double t_, double x_, double v_) { return p.accel(t_, x_, v_); };

      double k1x = v;
      double k1v = fv(t, x, v);
      double k2x = v + 0.5 * h * k1v;
      double k2v = fv(t + 0.5 * h, x + 0.5 * h * k1x, v + 0.5 * h * k1v);
      double k3x = v + 0.5 * h * k2v;
      double k3v = fv(t + 0.5 * h, x + 0.5 * h * k2x, v + 0.5 * h * k2v);
      double k4x = v + h * k3v;
      double k4v = fv(t + h, x + h * k3x, v + h * k3v);

      x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
      v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    }
  }
  return out;
}

enum class Scenario { VM, VP };
enum class Split { Train, Val, Test };

inline std::string to_string(Scenario s) { return s == Scenario::VM ? "VM" : "VP"; }
inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    default: return "test";
  }
}

inline Scenario scenario_from_string(const std::string& s) {
  if (s == "VM" || s == "vm") return Scenario::VM;
  if (s == "VP" || s == "vp") return Scenario::VP;
  throw ConfigError("unknown scenario '" + s + "' (expected VM or VP)");
}

struct Interval {
  double lo = 0.0, hi = 0.0;
  double len() const { return hi - lo; }
};

// Split-specific coefficient ranges. The three splits get dominant,
// non-overlapping intervals so each split corresponds to a distinct
// environment regime.
struct EnvRanges {
  Interval alpha[3] = {{0.0, 0.2}, {0.3, 0.5}, {0.6, 1.0}};
  Interval beta[3] = {{0.0, 0.01}, {0.018, 0.022}, {0.035, 0.04}};
  Interval eta[3] = {{0.002, 0.08}, {0.18, 0.22}, {0.42, 0.5}};
};

// Draw one coefficient: probability 0.8 from the split's dominant interval,
// 0.2 uniformly from the union of the other two splits' intervals.
inline double sample_mixture(const Interval ranges[3], Split split, Rng& rng) {
  int own = static_cast<int>(split);
  if (rng.uniform() < 0.8) return rng.uniform(ranges[own].lo, ranges[own].hi);
  const Interval& a = ranges[(own + 1) % 3];
  const Interval& b = ranges[(own + 2) % 3];
  double u = rng.uniform() * (a.len() + b.len());
  return u < a.len() ? a.lo + u : b.lo + (u - a.len());
}

inline OscParams sample_environment(Scenario scenario, Split split,
                                    const EnvRanges& ranges, Rng& rng) {
  OscParams p;
  p.alpha = sample_mixture(ranges.alpha, split, rng);
  if (scenario == Scenario::VP) {
    p.beta = sample_mixture(ranges.beta, split, rng);
    p.eta = sample_mixture(ranges.eta, split, rng);
  }
  return p;
}

struct InitRanges {
  Interval x0{-2.0, 2.0};
  Interval v0{-1.5, 1.5};
};

inline InitRanges factual_init_ranges() { return {}; }
inline InitRanges counterfactual_init_ranges() {
  return {Interval{2.2, 4.0}, Interval{-2.5, -1.0}};
}

inline InitialState sample_initial_state(const InitRanges& r, Rng& rng) {
  return {rng.uniform(r.x0.lo, r.x0.hi), rng.uniform(r.v0.lo, r.v0.hi)};
}

}  // namespace catsg
