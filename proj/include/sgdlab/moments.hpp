#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sgdlab/common.hpp"

namespace sgdlab {

struct SampleSet {
  std::vector<double> xs;
  std::vector<double> ys;

  std::size_t size() const { return xs.size(); }

  void validate() const {
    if (xs.size() != ys.size()) throw ConfigError("sample set: xs and ys differ in length");
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!std::isfinite(xs[i]) || !std::isfinite(ys[i]))
        throw ConfigError("sample set: non-finite value at row " + std::to_string(i));
    }
  }
};

// Data moments that parameterize both the landscape (beta) and the noise (alpha).
struct MomentSummary {
  double alpha1 = 0;  // Var[x^2]
  double alpha2 = 0;  // Cov[x^2, xy]
  double alpha3 = 0;  // Var[xy]
  double beta1 = 0;   // E[x^2]
  double beta2 = 0;   // E[xy]
  double delta = 0;   // alpha1 * alpha3 - alpha2^2

  double raw_delta() const { return alpha1 * alpha3 - alpha2 * alpha2; }

  // g(v) = alpha1 v^2 - 2 alpha2 v + alpha3, a quarter of the gradient variance at output v.
  double g(double v) const { return alpha1 * v * v - 2.0 * alpha2 * v + alpha3; }
  double g_prime(double v) const { return 2.0 * alpha1 * v - 2.0 * alpha2; }
};

// |delta| below this fraction of alpha1*alpha3 is treated as exactly zero.
inline constexpr double kDeltaClip = 1e-12;

inline MomentSummary make_moments(double a1, double a2, double a3, double b1, double b2) {
  MomentSummary m{a1, a2, a3, b1, b2, 0.0};
  double d = m.raw_delta();
  if (std::abs(d) <= kDeltaClip * std::abs(a1 * a3)) d = 0.0;
  m.delta = d;
  return m;
}

// Population moments of y = k x + sigma eps with x, eps independent standard normals.
inline MomentSummary gaussian_linear_moments(double k, double sigma) {
  return make_moments(2.0, 2.0 * k, 2.0 * k * k + sigma * sigma, 1.0, k);
}

inline MomentSummary compute_moments(const SampleSet& s) {
  s.validate();
  const std::size_t n = s.size();
  if (n < 2) throw ConfigError("degenerate sample set");
  const double inv_n = 1.0 / static_cast<double>(n);
  double mx2 = 0, mxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx2 += s.xs[i] * s.xs[i];
    mxy += s.xs[i] * s.ys[i];
  }
  mx2 *= inv_n;
  mxy *= inv_n;
  double a1 = 0, a2 = 0, a3 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = s.xs[i] * s.xs[i] - mx2;
    const double q = s.xs[i] * s.ys[i] - mxy;
    a1 += p * p;
    a2 += p * q;
    a3 += q * q;
  }
  return make_moments(a1 * inv_n, a2 * inv_n, a3 * inv_n, mx2, mxy);
}

inline SampleSet synth_linear_dataset(double k, double sigma, std::size_t n, std::uint64_t seed) {
  if (n < 2) throw ConfigError("synth_linear_dataset: n must be at least 2");
  if (!(sigma >= 0)) throw ConfigError("synth_linear_dataset: sigma must be non-negative");
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal;
  SampleSet s;
  s.xs.resize(n);
  s.ys.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = normal(rng);
    const double e = normal(rng);
    s.xs[i] = x;
    s.ys[i] = k * x + sigma * e;
  }
  return s;
}

// y = k x - c / x, so x y + c = k x^2 for every sample and delta vanishes in the limit.
inline SampleSet synth_delta_zero_dataset(double k, double c, std::size_t n, std::uint64_t seed) {
  if (n < 2) throw ConfigError("synth_delta_zero_dataset: n must be at least 2");
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal;
  SampleSet s;
  s.xs.resize(n);
  s.ys.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x;
    do {
      x = normal(rng);
    } while (std::abs(x) <= 1e-3);
    s.xs[i] = x;
    s.ys[i] = k * x - c / x;
  }
  return s;
}

inline void write_samples_csv(const SampleSet& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  out << "x,y\n";
  for (std::size_t i = 0; i < s.size(); ++i) out << s.xs[i] << ',' << s.ys[i] << '\n';
}

inline SampleSet read_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  SampleSet s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && (line[0] == 'x' || line[0] == 'X')) continue;
    std::istringstream ls(line);
    std::string a, b;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b))
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected two columns");
    try {
      s.xs.push_back(std::stod(a));
      s.ys.push_back(std::stod(b));
    } catch (const std::exception&) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": not a number");
    }
  }
  s.validate();
  return s;
}

}  // namespace sgdlab
