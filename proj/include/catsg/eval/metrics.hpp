#pragma once

// Distribution distances between a reference ("real") sample set and a
// generated one. All operate on [N, D, T] series tensors and are pure
// functions of their input sets.
//
// Histogram-based distances (mdd, kl) pool each channel over samples and
// time, bin with edges fixed by the real set, and keep one underflow and one
// overflow bin so generated mass outside the reference range still counts.
// mdd is total variation (so it lands in [0, 1]); kl smooths both histograms
// additively before normalizing.
//
// mmd is the biased V-statistic MMD^2 with an RBF kernel on flattened
// series vectors; the bandwidth defaults to the median pairwise distance of
// the pooled sets. frechet compares Gaussian summaries through the
// eigendecomposition form of the 2-Wasserstein distance.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "catsg/core/errors.hpp"
#include "catsg/core/tensor.hpp"

namespace catsg {

struct HistogramSpec {
  int bins = 50;
  double eps = 1e-8;  // additive KL smoothing

  void validate() const {
    CATSG_CHECK(bins >= 2, ConfigError, "histogram needs at least 2 bins");
    CATSG_CHECK(eps > 0.0, ConfigError, "KL smoothing must be positive");
  }
};

namespace detail {

inline void check_metric_inputs(const Tensor<float>& real,
                                const Tensor<float>& gen) {
  CATSG_CHECK(real.rank() == 3 && gen.rank() == 3, DataError,
              "metrics expect [N, D, T] tensors");
  CATSG_CHECK(real.dim(0) >= 1 && gen.dim(0) >= 1, DataError,
              "metrics: empty sample set");
  CATSG_CHECK(real.dim(1) == gen.dim(1), DataError,
              "metrics: channel count mismatch");
}

// normalized histogram with outer under/overflow slots: [under, bins, over]
inline std::vector<double> channel_hist(const Tensor<float>& t, int ch,
                                        double lo, double hi, int bins) {
  std::vector<double> h(static_cast<size_t>(bins) + 2, 0.0);
  const int N = t.dim(0), T = t.dim(2);
  const double width = hi - lo;
  for (int n = 0; n < N; ++n)
    for (int tt = 0; tt < T; ++tt) {
      const double v = t.at(n, ch, tt);
      size_t slot;
      if (v < lo)
        slot = 0;
      else if (v > hi)
        slot = static_cast<size_t>(bins) + 1;
      else {
        int b = static_cast<int>((v - lo) / width * bins);
        if (b >= bins) b = bins - 1;  // v == hi joins the last bin
        slot = static_cast<size_t>(b) + 1;
      }
      h[slot] += 1.0;
    }
  const double total = static_cast<double>(N) * T;
  for (auto& x : h) x /= total;
  return h;
}

// per-channel reference range; degenerate ranges get unit width
inline std::pair<double, double> channel_range(const Tensor<float>& t,
                                               int ch) {
  double lo = t.at(0, ch, 0), hi = lo;
  for (int n = 0; n < t.dim(0); ++n)
    for (int tt = 0; tt < t.dim(2); ++tt) {
      const double v = t.at(n, ch, tt);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (hi <= lo) hi = lo + 1.0;
  return {lo, hi};
}

}  // namespace detail

// marginal distribution distance: per-channel total variation, averaged
inline double mdd(const Tensor<float>& real, const Tensor<float>& gen,
                  const HistogramSpec& spec = {}) {
  spec.validate();
  detail::check_metric_inputs(real, gen);
  const int D = real.dim(1);
  double acc = 0.0;
  for (int ch = 0; ch < D; ++ch) {
    auto [lo, hi] = detail::channel_range(real, ch);
    auto p = detail::channel_hist(real, ch, lo, hi, spec.bins);
    auto q = detail::channel_hist(gen, ch, lo, hi, spec.bins);
    double tv = 0.0;
    for (size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
    acc += 0.5 * tv;
  }
  return acc / D;
}

// smoothed histogram KL(real || gen), averaged over channels
inline double kl(const Tensor<float>& real, const Tensor<float>& gen,
                 const HistogramSpec& spec = {}) {
  spec.validate();
  detail::check_metric_inputs(real, gen);
  const int D = real.dim(1);
  double acc = 0.0;
  for (int ch = 0; ch < D; ++ch) {
    auto [lo, hi] = detail::channel_range(real, ch);
    auto p = detail::channel_hist(real, ch, lo, hi, spec.bins);
    auto q = detail::channel_hist(gen, ch, lo, hi, spec.bins);
    double ps = 0.0, qs = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
      p[i] += spec.eps;
      q[i] += spec.eps;
      ps += p[i];
      qs += q[i];
    }
    double d = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
      const double pi = p[i] / ps, qi = q[i] / qs;
      d += pi * std::log(pi / qi);
    }
    acc += d;
  }
  return acc / D;
}

namespace detail {

inline std::vector<std::vector<double>> flatten_rows(const Tensor<float>& t) {
  const int N = t.dim(0);
  const size_t F = t.numel() / static_cast<size_t>(N);
  std::vector<std::vector<double>> rows(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n) {
    rows[static_cast<size_t>(n)].resize(F);
    for (size_t j = 0; j < F; ++j)
      rows[static_cast<size_t>(n)][j] =
          static_cast<double>(t.data()[static_cast<size_t>(n) * F + j]);
  }
  return rows;
}

inline double sqdist(const std::vector<double>& a,
                     const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

// median pairwise Euclidean distance over the pooled sets
inline double median_bandwidth(const Tensor<float>& a,
                               const Tensor<float>& b) {
  auto ra = detail::flatten_rows(a);
  auto rb = detail::flatten_rows(b);
  std::vector<std::vector<double>> pool = std::move(ra);
  pool.insert(pool.end(), rb.begin(), rb.end());
  std::vector<double> d;
  d.reserve(pool.size() * (pool.size() - 1) / 2);
  for (size_t i = 0; i < pool.size(); ++i)
    for (size_t j = i + 1; j < pool.size(); ++j)
      d.push_back(std::sqrt(detail::sqdist(pool[i], pool[j])));
  CATSG_CHECK(!d.empty(), DataError, "median bandwidth needs >= 2 samples");
  std::sort(d.begin(), d.end());
  const size_t m = d.size();
  double med = m % 2 == 1 ? d[m / 2] : 0.5 * (d[m / 2 - 1] + d[m / 2]);
  if (med <= 0.0) {
    warn("median bandwidth is zero (identical samples); falling back to 1");
    med = 1.0;
  }
  return med;
}

// biased V-statistic MMD^2 with RBF kernel exp(-||a-b||^2 / (2 sigma^2));
// sigma <= 0 selects the median heuristic
inline double mmd2(const Tensor<float>& real, const Tensor<float>& gen,
                   double sigma = 0.0) {
  detail::check_metric_inputs(real, gen);
  CATSG_CHECK(real.dim(0) >= 2 && gen.dim(0) >= 2, DataError,
              "mmd needs at least 2 samples per side");
  CATSG_CHECK(real.dim(2) == gen.dim(2), DataError,
              "mmd: series length mismatch");
  if (sigma <= 0.0) sigma = median_bandwidth(real, gen);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  auto xs = detail::flatten_rows(real);
  auto ys = detail::flatten_rows(gen);
  const double m = static_cast<double>(xs.size());
  const double n = static_cast<double>(ys.size());
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (const auto& a : xs)
    for (const auto& b : xs) kxx += std::exp(-detail::sqdist(a, b) * inv);
  for (const auto& a : ys)
    for (const auto& b : ys) kyy += std::exp(-detail::sqdist(a, b) * inv);
  for (const auto& a : xs)
    for (const auto& b : ys) kxy += std::exp(-detail::sqdist(a, b) * inv);
  return kxx / (m * m) + kyy / (n * n) - 2.0 * kxy / (m * n);
}

// ---------------------------------------------------------------- frechet

struct GaussianSummary {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
};

// sample mean and (unbiased) covariance of embedding rows, symmetrized with
// eigenvalues clipped at zero
inline GaussianSummary gaussian_summary(const Eigen::MatrixXd& rows) {
  CATSG_CHECK(rows.rows() >= 2, DataError,
              "gaussian summary needs at least 2 rows");
  GaussianSummary g;
  g.mu = rows.colwise().mean();
  Eigen::MatrixXd centered = rows.rowwise() - g.mu.transpose();
  g.sigma = centered.transpose() * centered /
            static_cast<double>(rows.rows() - 1);
  g.sigma = 0.5 * (g.sigma + g.sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.sigma);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  g.sigma = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return g;
}

namespace detail {

inline Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m,
                                 const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const double scale = std::max(1.0, std::abs(es.eigenvalues().maxCoeff()));
  CATSG_CHECK(es.eigenvalues().minCoeff() > -1e-8 * scale, NumericError,
              std::string(what) + ": matrix is not positive semidefinite");
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r^{1/2} S_g S_r^{1/2})^{1/2})
inline double frechet(const GaussianSummary& r, const GaussianSummary& g) {
  CATSG_CHECK(r.mu.size() == g.mu.size() && r.sigma.rows() == g.sigma.rows(),
              DataError, "frechet: dimension mismatch");
  CATSG_CHECK((r.sigma - r.sigma.transpose()).cwiseAbs().maxCoeff() < 1e-6 &&
                  (g.sigma - g.sigma.transpose()).cwiseAbs().maxCoeff() < 1e-6,
              NumericError, "frechet: covariance is not symmetric");
  Eigen::MatrixXd root_r = detail::sqrtm_psd(r.sigma, "frechet");
  Eigen::MatrixXd inner = root_r * g.sigma * root_r;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
  const double tr_cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d2 = (r.mu - g.mu).squaredNorm() + r.sigma.trace() +
                    g.sigma.trace() - 2.0 * tr_cross;
  return std::max(0.0, d2);
}

}  // namespace catsg
