#pragma once

// Causal-response diagnostics: smoothed and binned views of a scalar series
// summary X against a scalar context value C, computed per data split on a
// shared grid so the split curves are directly comparable. The CLI renders
// these tables as CSV; this header only computes them.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "catsg/core/errors.hpp"
#include "catsg/core/tensor.hpp"

namespace catsg {

// one split's paired scalars: c[i] is the context value for sample i,
// x[i] the response summary
struct ScatterSplit {
  std::string name;
  std::vector<double> c, x;
};

// per-sample time mean of one channel, the default scalar summary
inline std::vector<double> time_mean_scalar(const Tensor<float>& t,
                                            int channel) {
  CATSG_CHECK(t.rank() == 3, DataError, "time_mean_scalar expects [N, D, T]");
  CATSG_CHECK(channel >= 0 && channel < t.dim(1), ConfigError,
              "channel index out of range");
  std::vector<double> out(static_cast<size_t>(t.dim(0)));
  for (int n = 0; n < t.dim(0); ++n) {
    double s = 0.0;
    for (int tt = 0; tt < t.dim(2); ++tt) s += t.at(n, channel, tt);
    out[static_cast<size_t>(n)] = s / t.dim(2);
  }
  return out;
}

inline std::vector<double> make_grid(double lo, double hi, int points) {
  CATSG_CHECK(points >= 2, ConfigError, "grid needs at least 2 points");
  CATSG_CHECK(hi > lo, DataError, "grid range is empty");
  std::vector<double> g(static_cast<size_t>(points));
  for (int i = 0; i < points; ++i)
    g[static_cast<size_t>(i)] = lo + (hi - lo) * i / (points - 1);
  return g;
}

// Tricube-weighted local linear fit evaluated at each grid point. The
// bandwidth at a point is the distance to its ceil(frac * n)-th nearest
// neighbour, so frac controls the fraction of data each fit sees.
inline std::vector<double> lowess_fit(const std::vector<double>& c,
                                      const std::vector<double>& x,
                                      const std::vector<double>& grid,
                                      double frac) {
  CATSG_CHECK(c.size() == x.size(), DataError,
              "lowess: c and x length mismatch");
  CATSG_CHECK(c.size() >= 2, DataError,
              "lowess: a split with fewer than 2 points cannot be smoothed");
  CATSG_CHECK(frac > 0.0 && frac <= 1.0, ConfigError,
              "lowess frac must lie in (0, 1]");
  const size_t n = c.size();
  const auto [c_lo, c_hi] = std::minmax_element(c.begin(), c.end());
  CATSG_CHECK(*c_hi > *c_lo, DataError,
              "lowess: context values are constant");
  const size_t k =
      std::min(n, std::max<size_t>(2, static_cast<size_t>(
                                          std::ceil(frac * n))));

  std::vector<double> fit(grid.size());
  std::vector<double> dist(n);
  for (size_t gi = 0; gi < grid.size(); ++gi) {
    const double g = grid[gi];
    for (size_t i = 0; i < n; ++i) dist[i] = std::abs(c[i] - g);
    std::vector<double> sorted = dist;
    std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end());
    double r = sorted[k - 1];
    if (r <= 0.0) {
      // every neighbour sits exactly at g; widen to the nearest distinct one
      double smallest = 0.0;
      for (double d : dist)
        if (d > 0.0 && (smallest == 0.0 || d < smallest)) smallest = d;
      r = smallest > 0.0 ? smallest : 1.0;
    }
    double sw = 0.0, swc = 0.0, swx = 0.0;
    std::vector<double> w(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
      const double u = dist[i] / r;
      if (u < 1.0) {
        const double t = 1.0 - u * u * u;
        w[i] = t * t * t;
        sw += w[i];
        swc += w[i] * c[i];
        swx += w[i] * x[i];
      }
    }
    const double mc = swc / sw, mx = swx / sw;
    double sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < n; ++i) {
      if (w[i] == 0.0) continue;
      sxx += w[i] * (c[i] - mc) * (c[i] - mc);
      sxy += w[i] * (c[i] - mc) * (x[i] - mx);
    }
    const double slope = sxx > 1e-12 ? sxy / sxx : 0.0;
    fit[gi] = mx + slope * (g - mc);
  }
  return fit;
}

struct LowessCurve {
  std::string split;
  std::vector<double> fit;
};

struct LowessDiagnostic {
  std::vector<double> grid;
  std::vector<LowessCurve> curves;
};

// Smooths every split on one grid spanning the pooled context range.
inline LowessDiagnostic lowess_diagnostic(
    const std::vector<ScatterSplit>& splits, double frac = 0.3,
    int grid_points = 50) {
  CATSG_CHECK(!splits.empty(), DataError, "lowess: no splits given");
  double lo = splits[0].c.empty() ? 0.0 : splits[0].c[0], hi = lo;
  for (const auto& s : splits) {
    CATSG_CHECK(s.c.size() == s.x.size() && s.c.size() >= 2, DataError,
                "lowess: split '" + s.name + "' needs at least 2 points");
    for (double v : s.c) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  CATSG_CHECK(hi > lo, DataError, "lowess: context values are constant");
  LowessDiagnostic out;
  out.grid = make_grid(lo, hi, grid_points);
  for (const auto& s : splits)
    out.curves.push_back({s.name, lowess_fit(s.c, s.x, out.grid, frac)});
  return out;
}

// ------------------------------------------------------------ binned means

inline std::vector<double> equal_width_edges(const std::vector<double>& c,
                                             int bins) {
  CATSG_CHECK(bins >= 1, ConfigError, "need at least 1 bin");
  CATSG_CHECK(!c.empty(), DataError, "cannot derive edges from no data");
  const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
  CATSG_CHECK(*hi > *lo, DataError, "edge source values are constant");
  std::vector<double> edges(static_cast<size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i)
    edges[static_cast<size_t>(i)] = *lo + (*hi - *lo) * i / bins;
  return edges;
}

struct BinnedRow {
  std::string split;
  int bin = 0;
  double lo = 0.0, hi = 0.0;
  double mean = 0.0;
  double se = 0.0;
  int count = 0;
};

// Mean and standard error of X per (context bin, split). Out-of-range
// context values join the nearest outer bin so every sample is counted;
// empty bins are emitted with count zero.
inline std::vector<BinnedRow> binned_means(
    const std::vector<ScatterSplit>& splits,
    const std::vector<double>& edges) {
  CATSG_CHECK(edges.size() >= 2, ConfigError, "need at least 2 bin edges");
  const int bins = static_cast<int>(edges.size()) - 1;
  std::vector<BinnedRow> rows;
  for (const auto& s : splits) {
    CATSG_CHECK(s.c.size() == s.x.size(), DataError,
                "binned_means: c and x length mismatch");
    std::vector<double> sum(static_cast<size_t>(bins), 0.0);
    std::vector<double> sumsq(static_cast<size_t>(bins), 0.0);
    std::vector<int> cnt(static_cast<size_t>(bins), 0);
    for (size_t i = 0; i < s.c.size(); ++i) {
      const auto it =
          std::upper_bound(edges.begin() + 1, edges.end() - 1, s.c[i]);
      const size_t b = static_cast<size_t>(it - (edges.begin() + 1));
      sum[b] += s.x[i];
      sumsq[b] += s.x[i] * s.x[i];
      cnt[b] += 1;
    }
    for (int b = 0; b < bins; ++b) {
      BinnedRow row;
      row.split = s.name;
      row.bin = b;
      row.lo = edges[static_cast<size_t>(b)];
      row.hi = edges[static_cast<size_t>(b) + 1];
      row.count = cnt[static_cast<size_t>(b)];
      if (row.count > 0) row.mean = sum[static_cast<size_t>(b)] / row.count;
      if (row.count > 1) {
        const double var = (sumsq[static_cast<size_t>(b)] -
                            sum[static_cast<size_t>(b)] * row.mean) /
                           (row.count - 1);
        row.se = std::sqrt(std::max(0.0, var) / row.count);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace catsg
