#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sgdlab/analytic.hpp"
#include "sgdlab/common.hpp"

namespace sgdlab {

struct Histogram {
  std::vector<double> edges;
  std::vector<double> counts;
  double total = 0;

  std::size_t bins() const { return counts.size(); }

  void check() const {
    if (edges.size() < 2 || counts.size() + 1 != edges.size())
      throw ConfigError("histogram: need len(counts) = len(edges) - 1 >= 1");
    for (std::size_t i = 0; i + 1 < edges.size(); ++i)
      if (!(edges[i + 1] > edges[i])) throw ConfigError("histogram: edges must be strictly ascending");
  }

  // Samples outside [edges.front(), edges.back()] are dropped; the last bin is closed.
  static Histogram from_samples(const std::vector<double>& xs, std::vector<double> edges) {
    Histogram h;
    h.edges = std::move(edges);
    h.counts.assign(h.edges.size() - 1, 0.0);
    h.check();
    for (double x : xs) {
      if (!(x >= h.edges.front() && x <= h.edges.back())) continue;
      auto it = std::upper_bound(h.edges.begin(), h.edges.end(), x);
      std::size_t i = static_cast<std::size_t>(it - h.edges.begin());
      i = i == 0 ? 0 : i - 1;
      if (i >= h.counts.size()) i = h.counts.size() - 1;
      h.counts[i] += 1.0;
      h.total += 1.0;
    }
    return h;
  }

  std::vector<double> masses() const {
    std::vector<double> p(counts.size(), 0.0);
    if (total > 0)
      for (std::size_t i = 0; i < counts.size(); ++i) p[i] = counts[i] / total;
    return p;
  }

  // Merge into coarser edges; every coarse edge must be one of the current edges.
  Histogram rebin(const std::vector<double>& coarse) const {
    Histogram out;
    out.edges = coarse;
    out.counts.assign(coarse.size() > 0 ? coarse.size() - 1 : 0, 0.0);
    out.check();
    std::size_t j = 0;
    for (std::size_t c = 0; c < coarse.size(); ++c) {
      while (j < edges.size() && edges[j] < coarse[c]) ++j;
      if (j == edges.size() || edges[j] != coarse[c])
        throw ConfigError("rebin: coarse edges must be a subset of the fine edges");
    }
    for (std::size_t i = 0; i < counts.size(); ++i) {
      const double mid = 0.5 * (edges[i] + edges[i + 1]);
      if (mid < coarse.front() || mid > coarse.back()) continue;
      auto it = std::upper_bound(coarse.begin(), coarse.end(), mid);
      const std::size_t k = static_cast<std::size_t>(it - coarse.begin()) - 1;
      out.counts[k] += counts[i];
      out.total += counts[i];
    }
    return out;
  }
};

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw Error("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= sorted.size()) return sorted.back();
  const double f = pos - static_cast<double>(i);
  return sorted[i] * (1.0 - f) + sorted[i + 1] * f;
}

// Freedman-Diaconis edges spanning the sample range, capped at max_bins.
inline std::vector<double> fd_edges(std::vector<double> xs, std::size_t max_bins = 200) {
  if (xs.size() < 2) throw Error("fd_edges: need at least two samples");
  std::sort(xs.begin(), xs.end());
  const double lo = xs.front(), hi = xs.back();
  if (!(hi > lo)) return {lo - 0.5, hi + 0.5};
  const double iqr = quantile_sorted(xs, 0.75) - quantile_sorted(xs, 0.25);
  double h = 2.0 * iqr / std::cbrt(static_cast<double>(xs.size()));
  std::size_t nb = h > 0 ? static_cast<std::size_t>(std::ceil((hi - lo) / h)) : max_bins;
  nb = std::clamp<std::size_t>(nb, 1, max_bins);
  std::vector<double> e(nb + 1);
  for (std::size_t i = 0; i <= nb; ++i) e[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(nb);
  e.back() = hi;
  return e;
}

inline Histogram fd_histogram(const std::vector<double>& xs, std::size_t max_bins = 200) {
  return Histogram::from_samples(xs, fd_edges(xs, max_bins));
}

struct KsResult {
  double statistic = 0;
  bool support_mismatch = false;
};

// Samples within this distance of an atom count as sitting on it.
inline constexpr double kAtomTolerance = 1e-8;

inline KsResult ks_distance(std::vector<double> xs, const StationaryDensity& p) {
  if (xs.empty()) throw Error("ks_distance: no samples");
  KsResult r;
  if (p.is_delta()) {
    for (double x : xs)
      if (std::abs(x - p.delta_location()) > kAtomTolerance) {
        r.statistic = 1.0;
        r.support_mismatch = true;
        return r;
      }
    return r;
  }
  const double atom = p.atom_weight(), loc = p.delta_location();
  if (atom > 0)
    for (double& x : xs)
      if (std::abs(x - loc) <= kAtomTolerance) x = loc;
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0;
  for (std::size_t i = 0; i < xs.size();) {
    const double x = xs[i];
    std::size_t j = i + 1;
    while (j < xs.size() && xs[j] == x) ++j;
    // Empirical and model CDF just below and at x; ties share one jump.
    const double F = p.cdf(x);
    const double F_minus = (atom > 0 && x == loc) ? F - atom : F;
    d = std::max({d, std::abs(static_cast<double>(j) / n - F), std::abs(static_cast<double>(i) / n - F_minus)});
    i = j;
  }
  r.statistic = std::min(d, 1.0);
  return r;
}

struct TailFit {
  double exponent = kNaN;
  double stderr_ = kNaN;
  std::size_t points = 0;
};

namespace detail {

inline TailFit ols_tail(const std::vector<double>& lx, const std::vector<double>& ly) {
  const std::size_t n = lx.size();
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(n);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += sqr(lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0)) throw Error("tail fit: no spread in log v");
  const double slope = sxy / sxx;
  double sse = 0;
  for (std::size_t i = 0; i < n; ++i) sse += sqr(ly[i] - my - slope * (lx[i] - mx));
  TailFit f;
  f.exponent = -slope;
  f.stderr_ = n > 2 ? std::sqrt(sse / static_cast<double>(n - 2) / sxx) : kNaN;
  f.points = n;
  return f;
}

}  // namespace detail

inline constexpr std::size_t kMinTailPoints = 200;

// Grid form: v ascending on a log-uniform grid, the fit range selecting grid positions.
inline TailFit fit_tail_exponent_grid(const std::vector<double>& v, const std::vector<double>& log_p,
                                      double q_lo = 0.95, double q_hi = 0.999) {
  if (v.size() != log_p.size()) throw Error("tail fit: grid and values differ in length");
  const std::size_t n = v.size();
  const std::size_t a = static_cast<std::size_t>(std::floor(q_lo * static_cast<double>(n)));
  const std::size_t b = std::min(n, static_cast<std::size_t>(std::ceil(q_hi * static_cast<double>(n))));
  std::vector<double> lx, ly;
  for (std::size_t i = a; i < b; ++i)
    if (v[i] > 0 && std::isfinite(log_p[i])) {
      lx.push_back(std::log(v[i]));
      ly.push_back(log_p[i]);
    }
  if (lx.size() < kMinTailPoints) throw Error("tail fit: insufficient tail mass (fewer than 200 points in range)");
  return detail::ols_tail(lx, ly);
}

// Log-uniform grid from v_lo to v_hi with the normalized log density of p.
inline std::pair<std::vector<double>, std::vector<double>> log_density_grid(const StationaryDensity& p, double v_lo,
                                                                            double v_hi, std::size_t n) {
  if (!(v_lo > 0 && v_hi > v_lo) || n < 2) throw ConfigError("log grid needs 0 < v_lo < v_hi and n >= 2");
  std::vector<double> v(n), lp(n);
  const double a = std::log(v_lo), b = std::log(v_hi);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
    lp[i] = p.log_density(v[i]) - p.log_norm();
  }
  return {v, lp};
}

// Sample form: positive samples between the q_lo and q_hi mass quantiles, binned
// log-uniformly; slope of log density vs log v.
inline TailFit fit_tail_exponent_samples(std::vector<double> xs, double q_lo = 0.95, double q_hi = 0.999) {
  std::vector<double> pos;
  for (double x : xs)
    if (x > 0) pos.push_back(x);
  std::sort(pos.begin(), pos.end());
  if (pos.empty()) throw Error("tail fit: insufficient tail mass (no positive samples)");
  const double lo = quantile_sorted(pos, q_lo), hi = quantile_sorted(pos, q_hi);
  std::size_t in = 0;
  for (double x : pos) in += (x >= lo && x <= hi) ? 1 : 0;
  if (in < kMinTailPoints || !(hi > lo)) throw Error("tail fit: insufficient tail mass (fewer than 200 points in range)");
  const std::size_t nb = std::clamp<std::size_t>(in / 25, 8, 40);
  const double la = std::log(lo), lb = std::log(hi);
  std::vector<double> edges(nb + 1);
  for (std::size_t i = 0; i <= nb; ++i) edges[i] = std::exp(la + (lb - la) * static_cast<double>(i) / static_cast<double>(nb));
  const Histogram h = Histogram::from_samples(pos, edges);
  const double N = static_cast<double>(pos.size());
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < nb; ++i) {
    if (h.counts[i] <= 0) continue;
    lx.push_back(0.5 * (std::log(edges[i]) + std::log(edges[i + 1])));
    ly.push_back(std::log(h.counts[i] / (N * (edges[i + 1] - edges[i]))));
  }
  if (lx.size() < 3) throw Error("tail fit: too few occupied bins");
  TailFit f = detail::ols_tail(lx, ly);
  f.points = in;
  return f;
}

// Sum p log(p/q) over occupied bins; infinity when an occupied bin has q = 0.
inline double kl_from_masses(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw Error("kl: bin counts differ");
  double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0) continue;
    if (!(q[i] > 0)) return kInf;
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(kl, 0.0);
}

inline std::vector<double> bin_masses(const Histogram& h, const StationaryDensity& p) {
  std::vector<double> q(h.bins());
  for (std::size_t i = 0; i < h.bins(); ++i) {
    const double a = h.edges[i], b = h.edges[i + 1];
    // First bin is closed on the left so an atom at its edge is counted.
    const double Fa = i == 0 ? p.cdf(std::nextafter(a, -kInf)) : p.cdf(a);
    q[i] = std::max(0.0, p.cdf(b) - Fa);
  }
  return q;
}

inline double kl_estimate(const Histogram& h, const StationaryDensity& p) {
  if (!(h.total > 0)) throw Error("kl: empty histogram");
  return kl_from_masses(h.masses(), bin_masses(h, p));
}

// Sample-based KL against p on a Freedman-Diaconis histogram. Against a point mass it is
// zero when every sample sits on the atom and infinite otherwise.
inline double kl_from_samples(const std::vector<double>& xs, const StationaryDensity& p) {
  if (xs.empty()) throw Error("kl: no samples");
  if (p.is_delta()) {
    for (double x : xs)
      if (std::abs(x - p.delta_location()) > kAtomTolerance) return kInf;
    return 0.0;
  }
  return kl_estimate(fd_histogram(xs), p);
}

inline double kl_estimate(const Histogram& h, const GibbsChargeMarginal& g) {
  if (!(h.total > 0)) throw Error("kl: empty histogram");
  std::vector<double> q(h.bins());
  for (std::size_t i = 0; i < h.bins(); ++i) q[i] = g.bin_mass(h.edges[i], h.edges[i + 1]);
  return kl_from_masses(h.masses(), q);
}

inline double kl_estimate(const Histogram& h, const Histogram& ref) {
  if (!(h.total > 0) || !(ref.total > 0)) throw Error("kl: empty histogram");
  if (h.edges != ref.edges) throw Error("kl: histograms must share edges");
  return kl_from_masses(h.masses(), ref.masses());
}

// Half-sample mode: repeatedly keep the shortest interval holding half the points.
inline double mode_estimate(std::vector<double> xs) {
  if (xs.empty()) throw Error("mode of an empty sample");
  std::sort(xs.begin(), xs.end());
  std::size_t lo = 0, n = xs.size();
  while (n > 3) {
    const std::size_t h = (n + 1) / 2;
    std::size_t best = lo;
    double w = kInf;
    for (std::size_t i = lo; i + h <= lo + n; ++i) {
      const double wi = xs[i + h - 1] - xs[i];
      if (wi < w) {
        w = wi;
        best = i;
      }
    }
    lo = best;
    n = h;
  }
  if (n == 3) {
    const double a = xs[lo + 1] - xs[lo], b = xs[lo + 2] - xs[lo + 1];
    if (a < b) return 0.5 * (xs[lo] + xs[lo + 1]);
    if (b < a) return 0.5 * (xs[lo + 1] + xs[lo + 2]);
    return xs[lo + 1];
  }
  return n == 2 ? 0.5 * (xs[lo] + xs[lo + 1]) : xs[lo];
}

namespace detail {

// Local maximum of a weighted cubic fit to log bin counts on [a, b].
inline std::optional<double> cubic_log_hist_mode(const std::vector<double>& sorted, double a, double b,
                                                 std::size_t nb) {
  const double w = (b - a) / static_cast<double>(nb);
  std::vector<double> cnt(nb, 0.0);
  for (auto it = std::lower_bound(sorted.begin(), sorted.end(), a); it != sorted.end() && *it < b; ++it)
    cnt[std::min(nb - 1, static_cast<std::size_t>((*it - a) / w))] += 1.0;
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  Eigen::MatrixXd A(static_cast<Eigen::Index>(nb), 4);
  Eigen::VectorXd y(static_cast<Eigen::Index>(nb));
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < nb; ++i) {
    if (cnt[i] < 5) continue;
    const double t = (a + (static_cast<double>(i) + 0.5) * w - mid) / half, sw = std::sqrt(cnt[i]);
    A.row(r) << sw, sw * t, sw * t * t, sw * t * t * t;
    y(r++) = sw * std::log(cnt[i]);
  }
  if (r < 8) return std::nullopt;
  const Eigen::VectorXd c = A.topRows(r).colPivHouseholderQr().solve(y.head(r));
  std::optional<double> best;
  auto consider = [&](double t) {
    if (t > -1 && t < 1 && 2 * c(2) + 6 * c(3) * t < 0) best = mid + half * t;
  };
  const double qa = 3 * c(3), qb = 2 * c(2), qc = c(1);
  if (std::abs(qa) < 1e-12 * (std::abs(qb) + std::abs(qc))) {
    if (qb != 0) consider(-qc / qb);
  } else if (const double disc = qb * qb - 4 * qa * qc; disc >= 0) {
    consider((-qb + std::sqrt(disc)) / (2 * qa));
    consider((-qb - std::sqrt(disc)) / (2 * qa));
  }
  return best;
}

}  // namespace detail

// Mode of the most prominent interior bump. A smoothed histogram up to the 0.99 quantile
// locates the local maximum that rises furthest above the lowest point to its left. The
// half-sample mode right of that antimode gives a rough location m0, refined by a cubic
// fit to log counts on a window from the antimode to its mirror image about m0. Falls
// back to the plain half-sample mode when the histogram has no interior maximum.
inline double interior_mode_estimate(std::vector<double> xs) {
  if (xs.size() < 100) return mode_estimate(std::move(xs));
  std::sort(xs.begin(), xs.end());
  const double lo = xs.front(), hi = quantile_sorted(xs, 0.99);
  const double iqr = quantile_sorted(xs, 0.75) - quantile_sorted(xs, 0.25);
  const double width = 2.0 * iqr / std::cbrt(static_cast<double>(xs.size()));
  if (!(hi > lo) || !(width > 0)) return mode_estimate(std::move(xs));
  const auto nb = static_cast<std::size_t>(std::clamp(std::ceil((hi - lo) / width), 10.0, 400.0));
  const double bw = (hi - lo) / static_cast<double>(nb);
  std::vector<double> counts(nb, 0.0);
  for (double x : xs) {
    if (x > hi) break;
    counts[std::min(nb - 1, static_cast<std::size_t>((x - lo) / bw))] += 1.0;
  }
  std::vector<double> sm(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    const double l = counts[i == 0 ? 0 : i - 1], r = counts[i + 1 == nb ? i : i + 1];
    sm[i] = (l + counts[i] + r) / 3.0;
  }
  double best_prom = 0;
  std::size_t cut = 0;
  std::size_t run_min = 1;
  for (std::size_t i = 1; i + 1 < nb; ++i) {
    if (sm[i] < sm[run_min]) run_min = i;
    if (sm[i] >= sm[i - 1] && sm[i] >= sm[i + 1] && sm[i] - sm[run_min] > best_prom) {
      best_prom = sm[i] - sm[run_min];
      cut = run_min;
    }
  }
  if (cut == 0) return mode_estimate(std::move(xs));
  const double edge = lo + (static_cast<double>(cut) + 0.5) * bw;
  const double m0 = mode_estimate(std::vector<double>(std::upper_bound(xs.begin(), xs.end(), edge), xs.end()));
  const double right = std::min(2.0 * m0 - edge, hi);
  if (!(right > m0)) return m0;
  return detail::cubic_log_hist_mode(xs, edge, right, 30).value_or(m0);
}

// n (1 - rho) / (1 + rho) with rho the lag-1 autocorrelation.
inline double effective_sample_size(const std::vector<double>& xs, double rho1) {
  const double r = std::clamp(rho1, -0.99, 0.99);
  return static_cast<double>(xs.size()) * (1.0 - r) / (1.0 + r);
}

}  // namespace sgdlab
