#pragma once

// Variance schedule for the denoising diffusion process, plus the forward
// corruption map q(x_t | x_0). Tables are 1-indexed by diffusion step t in
// [1, n_steps]; index 0 is a padding slot and never read.
//
// The continuous half-log-SNR lambda(t) = log(sqrt(alpha_bar)/sigma) is
// exposed for the ODE sampler, which places its evaluation points uniformly
// in lambda rather than in t. Between integer steps lambda is interpolated
// linearly and inverted exactly; alpha_bar at a fractional point is recovered
// through alpha_bar = sigmoid(2*lambda), which is the closed-form inverse of
// the definition.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "catsg/core/errors.hpp"
#include "catsg/core/tensor.hpp"

namespace catsg {

struct DiffusionSchedule {
  int n_steps = 0;
  // all 1-indexed: [0] is unused padding
  std::vector<double> beta;       // q(x_t|x_{t-1}) variance
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // prod_{s<=t} alpha_s
  std::vector<double> sigma;      // sqrt(1 - alpha_bar)
  std::vector<double> lambda;     // log(sqrt(alpha_bar)/sigma)

  void check_step(int t) const {
    CATSG_CHECK(t >= 1 && t <= n_steps, ConfigError,
                "diffusion step " + std::to_string(t) + " outside [1, " +
                    std::to_string(n_steps) + "]");
  }

  // piecewise-linear lambda at a real-valued step in [1, n_steps]
  double lambda_of_t(double t) const {
    CATSG_CHECK(t >= 1.0 && t <= static_cast<double>(n_steps), ConfigError,
                "lambda_of_t: step out of range");
    int lo = static_cast<int>(std::floor(t));
    if (lo == n_steps) return lambda[n_steps];
    double f = t - lo;
    return lambda[lo] + f * (lambda[lo + 1] - lambda[lo]);
  }

  // inverse of lambda_of_t; lambda decreases as t grows, so bisect on the
  // integer grid and invert the linear segment
  double t_of_lambda(double lam) const {
    if (lam >= lambda[1]) return 1.0;
    if (lam <= lambda[n_steps]) return static_cast<double>(n_steps);
    int lo = 1, hi = n_steps;
    while (hi - lo > 1) {
      int mid = (lo + hi) / 2;
      if (lambda[mid] >= lam)
        lo = mid;
      else
        hi = mid;
    }
    double span = lambda[hi] - lambda[lo];
    double f = span == 0.0 ? 0.0 : (lam - lambda[lo]) / span;
    return lo + f;
  }

  static double alpha_bar_of_lambda(double lam) {
    return 1.0 / (1.0 + std::exp(-2.0 * lam));
  }
};

// Cosine alpha_bar profile with the usual small-offset warmup, betas clipped
// at 0.999, and alpha_bar rebuilt from the clipped betas so the tables stay
// mutually consistent.
inline DiffusionSchedule make_schedule(int n_steps,
                                       const std::string& kind = "cosine") {
  CATSG_CHECK(n_steps >= 1, ConfigError, "schedule needs at least one step");
  CATSG_CHECK(kind == "cosine", ConfigError,
              "unknown schedule kind '" + kind + "' (supported: cosine)");
  const double s = 0.008;
  auto f = [&](double t) {
    double u = (t / n_steps + s) / (1.0 + s) * (std::numbers::pi / 2.0);
    double c = std::cos(u);
    return c * c;
  };
  const double f0 = f(0.0);

  DiffusionSchedule sc;
  sc.n_steps = n_steps;
  sc.beta.assign(static_cast<size_t>(n_steps) + 1, 0.0);
  sc.alpha = sc.beta;
  sc.alpha_bar = sc.beta;
  sc.sigma = sc.beta;
  sc.lambda = sc.beta;

  double prev = 1.0;
  double running = 1.0;
  for (int t = 1; t <= n_steps; ++t) {
    double target = f(static_cast<double>(t)) / f0;
    double b = 1.0 - target / prev;
    if (b > 0.999) b = 0.999;
    prev = target;
    running *= 1.0 - b;
    sc.beta[t] = b;
    sc.alpha[t] = 1.0 - b;
    sc.alpha_bar[t] = running;
    sc.sigma[t] = std::sqrt(1.0 - running);
    sc.lambda[t] = 0.5 * std::log(running / (1.0 - running));
  }
  return sc;
}

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
template <class S>
Tensor<S> forward_corrupt(const Tensor<S>& x0, int t, const Tensor<S>& eps,
                          const DiffusionSchedule& sc) {
  sc.check_step(t);
  CATSG_CHECK(x0.same_shape(eps), DataError,
              "forward_corrupt: x0/eps shape mismatch");
  const S a = static_cast<S>(std::sqrt(sc.alpha_bar[t]));
  const S b = static_cast<S>(sc.sigma[t]);
  Tensor<S> out(x0.shape);
  for (size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = a * x0.data()[i] + b * eps.data()[i];
  return out;
}

}  // namespace catsg
