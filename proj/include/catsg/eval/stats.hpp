#pragma once

// Significance aggregation across benchmark tasks. Each task contributes a
// Welch unequal-variance t comparison between two method summaries
// (mean, std, n per side); the two-sided p-value is converted to a signed
// standard normal score and the scores are combined as
// Z_comb = sum(Z_i) / sqrt(m), with p_overall = erfc(|Z_comb| / sqrt(2)).
//
// Tasks where both sides have zero variance carry no evidence and are
// skipped with a note rather than contributing a degenerate score.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "catsg/core/errors.hpp"

namespace catsg {

namespace detail {

// regularized incomplete beta I_x(a, b) by continued fraction
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 200;
  constexpr double kEps = 3e-14, kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta did not converge");
}

inline double betai(double a, double b, double x) {
  CATSG_CHECK(x >= 0.0 && x <= 1.0, NumericError,
              "incomplete beta argument out of [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log1p(-x);
  const double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

// two-sided p-value of Student's t with df degrees of freedom
inline double student_t_two_sided_p(double t, double df) {
  CATSG_CHECK(df > 0.0, ConfigError, "degrees of freedom must be positive");
  if (!std::isfinite(t)) return 0.0;
  return detail::betai(0.5 * df, 0.5, df / (df + t * t));
}

// standard normal inverse CDF (Acklam's rational approximation polished
// with one Halley step against erfc)
inline double inv_norm_cdf(double p) {
  CATSG_CHECK(p > 0.0 && p < 1.0, NumericError,
              "inverse normal CDF needs p in (0, 1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
          c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * std::acos(-1.0)) *
                   std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

// unequal-variance t test from summary statistics, n observations per side
inline WelchResult welch_t(double mean_a, double std_a, double mean_b,
                           double std_b, int n) {
  CATSG_CHECK(n >= 2, DataError, "welch test needs n >= 2 per side");
  CATSG_CHECK(std_a >= 0.0 && std_b >= 0.0, DataError,
              "standard deviations must be non-negative");
  const double va = std_a * std_a / n, vb = std_b * std_b / n;
  CATSG_CHECK(va + vb > 0.0, DataError,
              "welch test is undefined when both variances are zero");
  WelchResult r;
  r.t = (mean_a - mean_b) / std::sqrt(va + vb);
  r.df = (va + vb) * (va + vb) / ((va * va + vb * vb) / (n - 1));
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

// Stouffer combination of already-computed signed scores
inline double combine_z(const std::vector<double>& zs) {
  CATSG_CHECK(!zs.empty(), DataError, "no scores to combine");
  double s = 0.0;
  for (double z : zs) s += z;
  return s / std::sqrt(static_cast<double>(zs.size()));
}

inline double overall_p(double z_comb) {
  return std::erfc(std::abs(z_comb) / std::sqrt(2.0));
}

struct TaskStats {
  std::string name;
  double mean_a = 0.0;
  double std_a = 0.0;
  double mean_b = 0.0;
  double std_b = 0.0;
  int n = 0;
};

struct StoufferResult {
  double z_comb = 0.0;
  double p_overall = 1.0;
  std::vector<double> z_per_task;       // one entry per kept task
  std::vector<std::string> kept;        // task names, aligned with z_per_task
  std::vector<std::string> skipped;     // zero-variance tasks, with note
};

inline StoufferResult stouffer_combine(const std::vector<TaskStats>& tasks) {
  CATSG_CHECK(!tasks.empty(), DataError, "stouffer: no tasks");
  StoufferResult out;
  for (const auto& task : tasks) {
    if (task.std_a == 0.0 && task.std_b == 0.0) {
      out.skipped.push_back(task.name + ": zero variance on both sides");
      continue;
    }
    const WelchResult w =
        welch_t(task.mean_a, task.std_a, task.mean_b, task.std_b, task.n);
    // two-sided p maps to |z|; the sign follows the direction of the effect
    double z;
    if (w.p <= 0.0)
      z = std::numeric_limits<double>::infinity();
    else if (w.p >= 1.0)
      z = 0.0;
    else
      z = inv_norm_cdf(1.0 - 0.5 * w.p);
    out.z_per_task.push_back(w.t < 0.0 ? -z : z);
    out.kept.push_back(task.name);
  }
  CATSG_CHECK(!out.z_per_task.empty(), DataError,
              "stouffer: every task was skipped");
  out.z_comb = combine_z(out.z_per_task);
  out.p_overall = overall_p(out.z_comb);
  return out;
}

}  // namespace catsg
