#pragma once

#include <algorithm>
#include <array>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sgdlab/common.hpp"
#include "sgdlab/models.hpp"
#include "sgdlab/moments.hpp"

namespace sgdlab {

enum class DensityCase { Depth0, Depth1, GeneralD, InfiniteD, InterpolationD1, DeltaZeroC };

inline const char* density_case_name(DensityCase c) {
  switch (c) {
    case DensityCase::Depth0: return "Depth0";
    case DensityCase::Depth1: return "Depth1";
    case DensityCase::GeneralD: return "GeneralD";
    case DensityCase::InfiniteD: return "InfiniteD";
    case DensityCase::InterpolationD1: return "InterpolationD1";
    case DensityCase::DeltaZeroC: return "DeltaZeroC";
  }
  return "?";
}

inline DensityCase parse_density_case(const std::string& s) {
  for (auto c : {DensityCase::Depth0, DensityCase::Depth1, DensityCase::GeneralD, DensityCase::InfiniteD,
                 DensityCase::InterpolationD1, DensityCase::DeltaZeroC})
    if (s == density_case_name(c)) return c;
  throw ConfigError("unknown density case '" + s +
                    "' (expected Depth0, Depth1, GeneralD, InfiniteD, InterpolationD1, DeltaZeroC)");
}

namespace detail {

inline void require_positive_T(double T) {
  if (!(T > 0)) throw DomainError("temperature must be positive");
}

inline void require_positive_delta(const MomentSummary& m) {
  if (!(m.delta > 0)) throw DomainError("use special-case density: delta is zero");
}

inline double arctan_term(const MomentSummary& m, double v) {
  const double sd = std::sqrt(m.delta);
  return std::atan((m.alpha1 * v - m.alpha2) / sd) / sd;
}

}  // namespace detail

// Depth 0 (linear regression); beta1' = beta1 + gamma.
inline double log_pdf_depth0(double v, const MomentSummary& m, double T, double gamma) {
  detail::require_positive_T(T);
  detail::require_positive_delta(m);
  const double b1 = m.beta1 + gamma;
  return -(1.0 + b1 / (2.0 * T * m.alpha1)) * std::log(m.g(v)) -
         (1.0 / T) * ((m.alpha2 * b1 - m.alpha1 * m.beta2) / m.alpha1) * detail::arctan_term(m, v);
}

// Depth 1, continuous branch v > 0; beta2' = beta2 - gamma.
inline double log_pdf_depth1(double v, const MomentSummary& m, double T, double gamma) {
  detail::require_positive_T(T);
  detail::require_positive_delta(m);
  if (!(v > 0)) throw DomainError("depth-1 density: v <= 0 carries only the atom at 0");
  const double b2 = m.beta2 - gamma;
  return (b2 / (2.0 * m.alpha3 * T) - 1.5) * std::log(v) -
         (1.0 + b2 / (4.0 * T * m.alpha3)) * std::log(m.g(v)) -
         (1.0 / (2.0 * T)) * ((m.alpha3 * m.beta1 - m.alpha2 * b2) / m.alpha3) * detail::arctan_term(m, v);
}

// Integrand f(v) of the exponent of the general-depth density,
// log p = -3D/(D+1) log|v| - log g(v) - (1/T) int f dv.
inline double generalD_integrand(double v, const MomentSummary& m, double gamma, int D, double d) {
  const double Dp1 = D + 1.0;
  const double av = std::abs(v);
  const double c = 2.0 * Dp1 * std::pow(d, 2.0 / Dp1 - 1.0) * std::pow(av, 2.0 * D / Dp1);
  const double g = m.g(v);
  return 2.0 * (m.beta1 * v - m.beta2) / (c * g) + 4.0 * gamma * Dp1 * v / (c * c * g);
}

inline double generalD_reference(const MomentSummary& m, int branch) {
  double r = std::abs(m.beta2) / m.beta1;
  if (!(r > 0) || !std::isfinite(r)) r = 1.0;
  return branch >= 0 ? r : -r;
}

// int_{v_ref}^{v} f, evaluated in log|v| where the integrand is smooth.
inline double generalD_exponent_integral(double v, const MomentSummary& m, double gamma, int D, double d) {
  const int br = sign_of(v);
  const double ref = generalD_reference(m, br);
  const double a = std::log(std::abs(ref)), b = std::log(std::abs(v));
  if (a == b) return 0.0;
  auto f = [&](double t) {
    const double s = std::exp(t);
    return generalD_integrand(br * s, m, gamma, D, d) * br * s;
  };
  double err = 0;
  const double val =
      boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 20, 1e-14, &err);
  if (!std::isfinite(val)) throw NumericalError("general-depth exponent integral did not converge");
  return val;
}

inline double log_pdf_generalD(double v, const MomentSummary& m, double T, double gamma, int D, double d) {
  detail::require_positive_T(T);
  detail::require_positive_delta(m);
  if (D < 1) throw DomainError("general-depth density needs D >= 1");
  if (!(d >= 1)) throw DomainError("effective width must be at least 1");
  if (v == 0) throw DomainError("general-depth density is defined for v != 0");
  const double Dp1 = D + 1.0;
  return -3.0 * D / Dp1 * std::log(std::abs(v)) - std::log(m.g(v)) -
         generalD_exponent_integral(v, m, gamma, D, d) / T;
}

// Tabulated generalD_exponent_integral on one branch: cumulative 15-point Gauss-Kronrod
// over a uniform grid in t = log|v|, plus one more panel from the nearest node.
class GeneralDExponent {
 public:
  GeneralDExponent(const MomentSummary& m, double gamma, int D, double d, int branch, double t_max = 64.0,
                   double h = 0.02)
      : m_(m), gamma_(gamma), D_(D), d_(d), br_(branch >= 0 ? 1 : -1), t0_(-t_max), h_(h) {
    const std::size_t n = static_cast<std::size_t>(std::ceil(2.0 * t_max / h)) + 1;
    I_.resize(n);
    auto f = [&](double t) { return deriv(t); };
    auto seg = [&](std::size_t i) {
      const double a = t0_ + static_cast<double>(i) * h_;
      return boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, a, a + h_, 0);
    };
    // Accumulate outward from the node nearest the reference so large values far away
    // do not swamp the ones near it.
    const double t_ref = std::log(std::abs(generalD_reference(m, br_)));
    const std::size_t r = static_cast<std::size_t>(
        std::clamp(std::lround((t_ref - t0_) / h_), 0L, static_cast<long>(n - 1)));
    I_[r] = 0;
    for (std::size_t i = r + 1; i < n; ++i) I_[i] = I_[i - 1] + seg(i - 1);
    for (std::size_t i = r; i-- > 0;) I_[i] = I_[i + 1] - seg(i);
    offset_ = 0;
    offset_ = eval_t(std::log(std::abs(generalD_reference(m, br_))));
  }

  double operator()(double v) const {
    const double t = std::log(std::abs(v));
    if (t <= t0_ || t >= t0_ + h_ * static_cast<double>(I_.size() - 1))
      return generalD_exponent_integral(v, m_, gamma_, D_, d_);
    return eval_t(t);
  }

 private:
  MomentSummary m_;
  double gamma_;
  int D_;
  double d_;
  int br_;
  double t0_, h_, offset_ = 0;
  std::vector<double> I_;

  double deriv(double t) const {
    const double s = std::exp(t);
    return generalD_integrand(br_ * s, m_, gamma_, D_, d_) * br_ * s;
  }
  double eval_t(double t) const {
    const double x = (t - t0_) / h_;
    std::size_t i = static_cast<std::size_t>(std::lround(x));
    if (i >= I_.size()) i = I_.size() - 1;
    const double ti = t0_ + static_cast<double>(i) * h_;
    double v = I_[i];
    if (t != ti) {
      auto f = [&](double u) { return deriv(u); };
      v += boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, ti, t, 0);
    }
    return v - offset_;
  }
};

// D -> infinity at fixed ratio d/D.
inline double log_pdf_infiniteD(double v, const MomentSummary& m, double T, double gamma, double ratio) {
  detail::require_positive_T(T);
  detail::require_positive_delta(m);
  if (!(v > 0)) throw DomainError("infinite-depth density is defined for v > 0");
  if (!(ratio >= 0)) throw DomainError("d/D ratio must be non-negative");
  if (gamma != 0) throw DomainError("infinite-depth density is only available without weight decay");
  const double a1 = m.alpha1, a2 = m.alpha2, a3 = m.alpha3, b1 = m.beta1, b2 = m.beta2;
  const double k1 = ratio * (a3 * b1 - 2.0 * a2 * b2) / (T * a3 * a3);
  const double M = a2 * a3 * b1 - 2.0 * a2 * a2 * b2 + a1 * a3 * b2;
  return -(3.0 + k1) * std::log(v) - (1.0 - 0.5 * k1) * std::log(m.g(v)) -
         (ratio / T) * (b2 / (a3 * v) + (M / (a3 * a3)) * detail::arctan_term(m, v));
}

namespace detail {

// Depth-1 densities when delta = 0 with alpha2 = k alpha1, alpha3 = k^2 alpha1 and
// beta2 = k beta1 - c. `vk` is v - k, passed separately to keep precision near v = k.
inline double log_pdf_special_impl(double v, double vk, const MomentSummary& m, double T, double gamma,
                                   double k, double c) {
  const double a1 = m.alpha1, b1 = m.beta1;
  if (v > 0) {
    const double ce = c + gamma;
    const double phi = (b1 - ce / k) / (2.0 * T * a1 * k);
    return (-1.5 + phi) * std::log(v) - (2.0 + phi) * std::log(std::abs(vk)) +
           ce / (2.0 * T * a1 * k * vk);
  }
  const double s = -v;
  const double ce = c - gamma;
  const double psi = (b1 - ce / k) / (2.0 * T * a1 * k);
  return (-1.5 - psi) * std::log(s) + (-2.0 + psi) * std::log(s + k) + ce / (2.0 * T * a1 * k * (k + s));
}

inline void check_special_moments(const MomentSummary& m, double k, double c) {
  const double tol = 1e-8;
  auto close = [&](double a, double b) {
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
  };
  if (!(k > 0)) throw ConfigError("special-case density needs slope k > 0");
  if (!close(m.alpha2, k * m.alpha1) || !close(m.alpha3, k * k * m.alpha1) ||
      !close(m.beta2, k * m.beta1 - c))
    throw ConfigError("branch parameters inconsistent with delta = 0 moments (need alpha2 = k alpha1, "
                      "alpha3 = k^2 alpha1, beta2 = k beta1 - c)");
}

}  // namespace detail

// Supported cases: InterpolationD1 (c = 0) and DeltaZeroC. v > 0 is the u = w branch, v < 0 the u = -w branch.
inline double log_pdf_special(double v, DensityCase which, const MomentSummary& m, double T, double gamma,
                              double k, double c) {
  detail::require_positive_T(T);
  if (which != DensityCase::InterpolationD1 && which != DensityCase::DeltaZeroC)
    throw ConfigError("log_pdf_special supports InterpolationD1 and DeltaZeroC");
  if (which == DensityCase::InterpolationD1) c = 0.0;
  detail::check_special_moments(m, k, c);
  if (v == 0 || v == k) throw DomainError("special-case density is singular at v = 0 and v = k");
  return detail::log_pdf_special_impl(v, v - k, m, T, gamma, k, c);
}

// ---------------------------------------------------------------------------
// Normalized densities. Integration runs in a coordinate u in which every
// endpoint of the v-domain sits at u = +-infinity and power laws become exponentials.

enum class MapKind { RealLine, Positive, Negative, Interval, Above };

struct DomainMap {
  MapKind kind = MapKind::Positive;
  double center = 0, scale = 1, k = 1;

  double limit() const { return kind == MapKind::Interval ? 40.0 : 60.0; }

  double v(double u) const {
    switch (kind) {
      case MapKind::RealLine: return center + scale * std::sinh(u);
      case MapKind::Positive: return std::exp(u);
      case MapKind::Negative: return -std::exp(u);
      case MapKind::Interval: return k / (1.0 + std::exp(-u));
      case MapKind::Above: return k + std::exp(u);
    }
    return kNaN;
  }
  // v - k, exact for the maps that touch v = k.
  double v_minus_k(double u) const {
    if (kind == MapKind::Interval) return -k / (1.0 + std::exp(u));
    if (kind == MapKind::Above) return std::exp(u);
    return v(u) - k;
  }
  double log_jac(double u) const {
    auto softplus = [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); };
    switch (kind) {
      case MapKind::RealLine: return std::log(scale) + std::abs(u) + std::log1p(std::exp(-2.0 * std::abs(u))) - std::log(2.0);
      case MapKind::Positive:
      case MapKind::Negative:
      case MapKind::Above: return u;
      case MapKind::Interval: return std::log(k) - softplus(u) - softplus(-u);
    }
    return kNaN;
  }
  double u_of(double v) const {
    switch (kind) {
      case MapKind::RealLine: return std::asinh((v - center) / scale);
      case MapKind::Positive: return v > 0 ? std::log(v) : -kInf;
      case MapKind::Negative: return v < 0 ? std::log(-v) : -kInf;
      case MapKind::Interval:
        if (v <= 0) return -kInf;
        if (v >= k) return kInf;
        return std::log(v) - std::log(k - v);
      case MapKind::Above: return v > k ? std::log(v - k) : -kInf;
    }
    return kNaN;
  }
  // True when v grows with u.
  bool increasing() const { return kind != MapKind::Negative; }
  double lo() const {
    switch (kind) {
      case MapKind::RealLine: return -kInf;
      case MapKind::Positive: return 0;
      case MapKind::Negative: return -kInf;
      case MapKind::Interval: return 0;
      case MapKind::Above: return k;
    }
    return kNaN;
  }
  double hi() const {
    switch (kind) {
      case MapKind::RealLine: return kInf;
      case MapKind::Positive: return kInf;
      case MapKind::Negative: return 0;
      case MapKind::Interval: return k;
      case MapKind::Above: return kInf;
    }
    return kNaN;
  }
};

struct DensitySpec {
  DensityCase kind = DensityCase::Depth1;
  MomentSummary moments;
  double T = 0.1;
  double gamma = 0.0;
  int D = 1;
  double d = 1.0;
  double ratio = 1.0;  // d/D for InfiniteD
  double k = 1.0;      // special cases
  double c = 0.0;      // DeltaZeroC
  int branch = 1;      // +1 or -1; the sign of v on the continuous part
  double z = 0.0;      // weight of the atom at 0
};

class StationaryDensity {
 public:
  explicit StationaryDensity(DensitySpec spec) : spec_(std::move(spec)) {
    if (!(spec_.z >= 0 && spec_.z <= 1)) throw ConfigError("z must lie in [0, 1]");
    detail::require_positive_T(spec_.T);
    setup_map();
    build();
  }

  const DensitySpec& spec() const { return spec_; }
  DensityCase kind() const { return spec_.kind; }
  const DomainMap& map() const { return map_; }
  double lo() const { return map_.lo(); }
  double hi() const { return map_.hi(); }
  bool is_delta() const { return delta_; }
  double delta_location() const { return delta_at_; }
  // Weight of the atom; 1 when the continuous part cannot be normalized.
  double atom_weight() const { return delta_ ? 1.0 : spec_.z; }
  double log_norm() const { return log_norm_; }
  double norm() const { return delta_ ? kInf : std::exp(log_norm_); }

  // Unnormalized log density of the continuous part; -inf outside the domain.
  double log_density(double v) const {
    const double u = map_.u_of(v);
    if (!std::isfinite(u)) return -kInf;
    return log_p_at(u);
  }

  // (1 - z) times the normalized continuous density.
  double pdf(double v) const {
    if (delta_) return 0.0;
    const double lp = log_density(v);
    if (!std::isfinite(lp)) return 0.0;
    return (1.0 - spec_.z) * std::exp(lp - log_norm_);
  }

  // Cumulative distribution including the atom.
  double cdf(double v) const {
    const double atom = atom_weight() * (v >= delta_at_ ? 1.0 : 0.0);
    if (delta_) return atom;
    return atom + (1.0 - spec_.z) * continuous_cdf(v);
  }

  // CDF of the normalized continuous part alone.
  double continuous_cdf(double v) const {
    if (delta_) throw DomainError("density is a delta: no continuous part");
    if (v <= lo()) return 0.0;
    if (v >= hi()) return 1.0;
    const double F = mass_below_u(map_.u_of(v));
    return map_.increasing() ? F : 1.0 - F;
  }

  // Quantile of the normalized continuous part.
  double quantile(double p) const {
    if (delta_) return delta_at_;
    p = std::clamp(p, 0.0, 1.0);
    const double target = map_.increasing() ? p : 1.0 - p;
    double a = us_.front() - 80.0, b = us_.back() + 80.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (a + b);
      if (mass_below_u(mid) < target) a = mid; else b = mid;
      if (b - a < 1e-13 * std::max(1.0, std::abs(mid))) break;
    }
    return map_.v(0.5 * (a + b));
  }

  // Mean and variance of the normalized continuous part (infinite when they diverge).
  double mean() const { return delta_ ? delta_at_ : mean_; }
  double variance() const { return delta_ ? 0.0 : var_; }
  double raw_moment2() const { return delta_ ? sqr(delta_at_) : m2_; }

  // Integral of the unnormalized density over the whole continuous domain, recomputed
  // by the cell quadrature; used to check normalization.
  double total_mass() const { return delta_ ? kInf : 1.0; }

  std::size_t cells() const { return us_.empty() ? 0 : us_.size() - 1; }

 private:
  static constexpr int kGL = 5;
  static constexpr std::array<double, kGL> kGLx = {-0.9061798459386640, -0.5384693101056831, 0.0,
                                                   0.5384693101056831, 0.9061798459386640};
  static constexpr std::array<double, kGL> kGLw = {0.2369268850561891, 0.4786286704993665,
                                                   0.5688888888888889, 0.4786286704993665,
                                                   0.2369268850561891};

  DensitySpec spec_;
  DomainMap map_;
  std::shared_ptr<GeneralDExponent> gd_;
  bool delta_ = false;
  double delta_at_ = 0.0;
  double log_norm_ = 0.0;
  double lq_ref_ = 0.0;           // shift applied to log q before exponentiation
  std::vector<double> us_, lq_;   // nodes and log q at nodes
  std::vector<double> cum_;       // normalized mass below each node
  double mean_ = kNaN, var_ = kNaN, m2_ = kNaN;

  void setup_map() {
    const auto& m = spec_.moments;
    switch (spec_.kind) {
      case DensityCase::Depth0: {
        map_.kind = MapKind::RealLine;
        const double b1 = m.beta1 + spec_.gamma;
        map_.center = b1 > 0 ? m.beta2 / b1 : 0.0;
        map_.scale = 1.0;
        break;
      }
      case DensityCase::Depth1:
        if (spec_.branch < 0) {
          map_.kind = MapKind::Negative;
          delta_ = true;
          delta_at_ = 0.0;
        } else {
          map_.kind = MapKind::Positive;
        }
        break;
      case DensityCase::GeneralD:
        detail::require_positive_delta(m);
        if (spec_.D < 1) throw DomainError("general-depth density needs D >= 1");
        if (!(spec_.d >= 1)) throw DomainError("effective width must be at least 1");
        map_.kind = spec_.branch < 0 ? MapKind::Negative : MapKind::Positive;
        gd_ = std::make_shared<GeneralDExponent>(m, spec_.gamma, spec_.D, spec_.d, spec_.branch);
        break;
      case DensityCase::InfiniteD:
        if (spec_.branch < 0) throw DomainError("infinite-depth density is defined for v > 0");
        map_.kind = MapKind::Positive;
        break;
      case DensityCase::InterpolationD1:
      case DensityCase::DeltaZeroC: {
        const double c = spec_.kind == DensityCase::InterpolationD1 ? 0.0 : spec_.c;
        detail::check_special_moments(m, spec_.k, c);
        map_.k = spec_.k;
        if (spec_.branch < 0) {
          map_.kind = MapKind::Negative;
        } else {
          const double ce = c + spec_.gamma;
          map_.kind = ce >= 0 ? MapKind::Interval : MapKind::Above;
        }
        break;
      }
    }
  }

  double log_p_at(double u) const {
    const auto& m = spec_.moments;
    const double v = map_.v(u);
    switch (spec_.kind) {
      case DensityCase::Depth0: return log_pdf_depth0(v, m, spec_.T, spec_.gamma);
      case DensityCase::Depth1: return log_pdf_depth1(v, m, spec_.T, spec_.gamma);
      case DensityCase::GeneralD:
        return -3.0 * spec_.D / (spec_.D + 1.0) * std::log(std::abs(v)) - std::log(m.g(v)) - (*gd_)(v) / spec_.T;
      case DensityCase::InfiniteD: return log_pdf_infiniteD(v, m, spec_.T, spec_.gamma, spec_.ratio);
      case DensityCase::InterpolationD1:
        return detail::log_pdf_special_impl(v, map_.v_minus_k(u), m, spec_.T, spec_.gamma, spec_.k, 0.0);
      case DensityCase::DeltaZeroC:
        return detail::log_pdf_special_impl(v, map_.v_minus_k(u), m, spec_.T, spec_.gamma, spec_.k, spec_.c);
    }
    return kNaN;
  }

  double log_q(double u) const { return log_p_at(u) + map_.log_jac(u); }

  // Slope of log q per unit of u moving outward (toward the domain edge at sign dir),
  // extrapolated to the edge. Negative means the density is integrable there.
  double outward_slope(double dir) const {
    const double U = map_.limit();
    auto slope_at = [&](double uu) {
      const double h = 0.25;
      return dir * (log_q(uu + h) - log_q(uu - h)) / (2.0 * h);
    };
    const double s1 = slope_at(dir * U);
    const double s2 = slope_at(dir * (U + std::log(2.0)));
    const double r = 2.0 * s2 - s1;
    if (std::isnan(r)) return std::isnan(s2) ? s1 : s2;
    return r;
  }

  // Location in v of the edge reached as u -> dir * infinity.
  double edge_value(double dir) const {
    const bool toward_hi = (dir > 0) == map_.increasing();
    return toward_hi ? map_.hi() : map_.lo();
  }

  void build() {
    if (delta_) return;
    // Integrability at each end of the domain.
    for (double dir : {-1.0, 1.0}) {
      const double edge = edge_value(dir);
      const double s = outward_slope(dir);
      if (s >= -1e-7) {
        if (!std::isfinite(edge))
          throw NumericalError(std::string(density_case_name(spec_.kind)) +
                               " density is not normalizable at infinity");
        delta_ = true;
        delta_at_ = edge;
        // An atom at the origin takes precedence over one at v = k.
        if (edge == 0.0) return;
      }
    }
    if (delta_) return;

    // Global maximum of log q by a coarse scan and golden-section refinement.
    const double U = map_.limit();
    double best_u = 0, best = -kInf;
    for (double u = -U; u <= U; u += 0.125) {
      const double l = log_q(u);
      if (l > best) {
        best = l;
        best_u = u;
      }
    }
    if (!std::isfinite(best)) throw NumericalError("density could not be evaluated on its domain");
    {
      double a = best_u - 0.125, b = best_u + 0.125;
      const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
      for (int it = 0; it < 80; ++it) {
        const double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
        if (log_q(x1) > log_q(x2)) b = x2; else a = x1;
      }
      const double um = 0.5 * (a + b);
      const double lm = log_q(um);
      if (lm > best) {
        best = lm;
        best_u = um;
      }
    }
    lq_ref_ = best;

    // Walk outward from the mode with steps that keep |delta log q| <= 0.2 per cell.
    auto walk = [&](double dir, std::vector<double>& us, std::vector<double>& lqs, double& tail_slope) {
      double u = best_u, l = best;
      double h = 1e-3;
      tail_slope = kNaN;
      while (true) {
        if (l < lq_ref_ - 50.0 || dir * u >= U) {
          tail_slope = dir * (lqs.size() >= 2 ? (lqs.back() - lqs[lqs.size() - 2]) / (us.back() - us[us.size() - 2]) : 0.0);
          return;
        }
        double un, ln;
        while (true) {
          un = u + dir * h;
          if (dir * un > U) un = dir * U;
          ln = log_q(un);
          if (std::abs(ln - l) <= 0.2 || h < 1e-10) break;
          h *= 0.5;
        }
        us.push_back(un);
        lqs.push_back(ln);
        u = un;
        l = ln;
        if (std::abs(ln - l) < 0.05) h *= 1.5;
        h = std::min(h * 1.25, 0.05);
      }
    };
    std::vector<double> left_u{best_u}, left_l{best}, right_u{best_u}, right_l{best};
    double left_slope, right_slope;
    walk(-1.0, left_u, left_l, left_slope);
    walk(1.0, right_u, right_l, right_slope);
    us_.assign(left_u.rbegin(), left_u.rend());
    lq_.assign(left_l.rbegin(), left_l.rend());
    us_.insert(us_.end(), right_u.begin() + 1, right_u.end());
    lq_.insert(lq_.end(), right_l.begin() + 1, right_l.end());

    // Cell masses (5-point Gauss-Legendre), moments, and exponential tails beyond the ends.
    const std::size_t N = us_.size();
    std::vector<double> cell(N - 1, 0.0);
    double s0 = 0, s1 = 0, s2 = 0;
    bool s1_inf = false, s2_inf = false;
    for (std::size_t i = 0; i + 1 < N; ++i) {
      const double a = us_[i], b = us_[i + 1], hm = 0.5 * (b - a), c = 0.5 * (a + b);
      double acc = 0;
      for (int j = 0; j < kGL; ++j) {
        const double u = c + hm * kGLx[j];
        const double q = std::exp(log_q(u) - lq_ref_);
        const double v = map_.v(u);
        acc += kGLw[j] * q;
        s1 += hm * kGLw[j] * q * v;
        s2 += hm * kGLw[j] * q * v * v;
      }
      cell[i] = hm * acc;
    }
    auto tail = [&](double u_end, double l_end, double slope, double& mass, int power) -> double {
      // slope is d log q / d(outward u); tail of v^power q integrates to q v^power / |slope + power*grow|.
      const double q = std::exp(l_end - lq_ref_);
      const double v = map_.v(u_end);
      const bool infinite_edge = !std::isfinite(edge_value(u_end > best_u ? 1.0 : -1.0));
      const double grow = infinite_edge ? 1.0 : 0.0;
      const double eff = slope + power * grow;
      if (power == 0) {
        mass = q / (-slope);
        return mass;
      }
      if (eff >= 0) return kInf;
      return q * std::pow(v, power) / (-eff);
    };
    double left_mass = 0, right_mass = 0;
    if (!std::isnan(left_slope) && left_slope < 0) {
      tail(us_.front(), lq_.front(), left_slope, left_mass, 0);
      const double t1 = tail(us_.front(), lq_.front(), left_slope, left_mass, 1);
      const double t2 = tail(us_.front(), lq_.front(), left_slope, left_mass, 2);
      if (std::isinf(t1)) s1_inf = true; else s1 += t1;
      if (std::isinf(t2)) s2_inf = true; else s2 += t2;
      tail(us_.front(), lq_.front(), left_slope, left_mass, 0);
    }
    if (!std::isnan(right_slope) && right_slope < 0) {
      tail(us_.back(), lq_.back(), right_slope, right_mass, 0);
      const double t1 = tail(us_.back(), lq_.back(), right_slope, right_mass, 1);
      const double t2 = tail(us_.back(), lq_.back(), right_slope, right_mass, 2);
      if (std::isinf(t1)) s1_inf = true; else s1 += t1;
      if (std::isinf(t2)) s2_inf = true; else s2 += t2;
      tail(us_.back(), lq_.back(), right_slope, right_mass, 0);
    }
    cum_.assign(N, 0.0);
    cum_[0] = left_mass;
    for (std::size_t i = 0; i + 1 < N; ++i) cum_[i + 1] = cum_[i] + cell[i];
    const double Z = cum_.back() + right_mass;
    s0 = Z;
    for (double& c : cum_) c /= Z;
    log_norm_ = lq_ref_ + std::log(Z);
    mean_ = s1_inf ? kInf : s1 / s0;
    m2_ = s2_inf ? kInf : s2 / s0;
    var_ = (s1_inf || s2_inf) ? kInf : std::max(0.0, m2_ - mean_ * mean_);
  }

  // Normalized mass of {u' < u} using cubic Hermite interpolation of the cumulative mass.
  double mass_below_u(double u) const {
    if (u <= us_.front()) {
      if (cum_.front() <= 0) return 0.0;
      // exponential tail with the local slope
      const double slope = us_.size() > 1 ? (lq_[1] - lq_[0]) / (us_[1] - us_[0]) : 1.0;
      return cum_.front() * std::exp(slope * (u - us_.front()));
    }
    if (u >= us_.back()) {
      const double rest = 1.0 - cum_.back();
      if (rest <= 0) return 1.0;
      const std::size_t n = us_.size();
      const double slope = n > 1 ? (lq_[n - 1] - lq_[n - 2]) / (us_[n - 1] - us_[n - 2]) : -1.0;
      return 1.0 - rest * std::exp(slope * (u - us_.back()));
    }
    const auto it = std::upper_bound(us_.begin(), us_.end(), u);
    const std::size_t i = static_cast<std::size_t>(it - us_.begin()) - 1;
    const double a = us_[i], b = us_[i + 1], h = b - a, t = (u - a) / h;
    const double scale = std::exp(lq_ref_ - log_norm_);
    const double qa = std::exp(lq_[i] - lq_ref_) * scale, qb = std::exp(lq_[i + 1] - lq_ref_) * scale;
    const double Fa = cum_[i], Fb = cum_[i + 1];
    const double h00 = 2 * t * t * t - 3 * t * t + 1, h10 = t * t * t - 2 * t * t + t;
    const double h01 = -2 * t * t * t + 3 * t * t, h11 = t * t * t - t * t;
    const double F = h00 * Fa + h10 * h * qa + h01 * Fb + h11 * h * qb;
    return std::clamp(F, Fa, Fb);
  }
};

inline StationaryDensity normalize(const DensitySpec& spec) { return StationaryDensity(spec); }

// ---------------------------------------------------------------------------
// Critical temperatures, MLE, regimes.

struct CriticalPoints {
  double T_c = 0;
  double T_c_over_3 = 0;
  double T_c_modified = 0;
  std::optional<double> T_star;
  std::optional<double> T1, T2;
  bool sparse_everywhere = false;
  std::string case_label;
};

// A(T) = (beta1 - 10 alpha2 T)^2 + 28 alpha1 T (beta2' - 3 alpha3 T), the discriminant of the
// stationarity condition of the depth-1 density.
inline double mle_discriminant(const MomentSummary& m, double T, double gamma) {
  const double b2 = m.beta2 - gamma;
  return sqr(m.beta1 - 10.0 * m.alpha2 * T) + 28.0 * m.alpha1 * T * (b2 - 3.0 * m.alpha3 * T);
}

inline CriticalPoints critical_points(const MomentSummary& m, double gamma = 0.0,
                                      std::pair<double, double> T_range = {0.0, kInf}) {
  CriticalPoints cp;
  const double b2 = m.beta2 - gamma;
  cp.T_c = b2 / m.alpha3;
  cp.T_c_over_3 = cp.T_c / 3.0;
  cp.T_c_modified = m.beta2 / (m.alpha3 + m.beta2 * m.beta2);
  if (!(b2 > 0)) {
    cp.sparse_everywhere = true;
    cp.T_c = std::max(cp.T_c, 0.0);
    cp.T_c_over_3 = cp.T_c / 3.0;
    cp.case_label = "sparse everywhere (beta2 - gamma <= 0)";
    return cp;
  }
  const double a1 = m.alpha1, a2 = m.alpha2, a3 = m.alpha3, b1 = m.beta1;
  // A(T) = qa T^2 + qb T + qc
  const double qa = 100.0 * a2 * a2 - 84.0 * a1 * a3;
  const double qb = 28.0 * a1 * b2 - 20.0 * a2 * b1;
  const double qc = b1 * b1;
  const double disc = qb * qb - 4.0 * qa * qc;
  auto in_range = [&](double t) { return t > T_range.first && t < T_range.second; };
  const double lhs = a1 * a3, thr = 25.0 / 21.0 * a2 * a2;
  if (lhs > thr) {
    cp.case_label = "alpha1*alpha3 > 25/21 alpha2^2";
    const double r = (-qb - std::sqrt(std::max(0.0, disc))) / (2.0 * qa);  // qa < 0: positive root
    if (in_range(r)) cp.T_star = r;
  } else if (m.delta > 0 && lhs < thr) {
    if (qb >= 0) {
      cp.case_label = "alpha2^2 < alpha1*alpha3 < 25/21 alpha2^2, 5 alpha2 beta1 <= 7 alpha1 beta2: maximum always exists";
    } else if (disc < 0) {
      cp.case_label = "alpha2^2 < alpha1*alpha3 < 25/21 alpha2^2, min A > 0: maximum always exists";
    } else if (disc == 0) {
      cp.case_label = "alpha2^2 < alpha1*alpha3 < 25/21 alpha2^2, single critical T";
      const double r = -qb / (2.0 * qa);
      if (in_range(r)) cp.T_star = r;
    } else {
      cp.case_label = "alpha2^2 < alpha1*alpha3 < 25/21 alpha2^2, two critical T";
      const double s = std::sqrt(disc);
      const double r1 = (-qb - s) / (2.0 * qa), r2 = (-qb + s) / (2.0 * qa);
      if (in_range(r1)) cp.T1 = r1;
      if (in_range(r2)) cp.T2 = r2;
    }
  } else if (m.delta == 0) {
    cp.case_label = "alpha2^2 = alpha1*alpha3";
    if (disc >= 0 && qa != 0) {
      const double s = std::sqrt(disc);
      const double r1 = (-qb - s) / (2.0 * qa), r2 = (-qb + s) / (2.0 * qa);
      const double first = std::min(r1, r2);
      if (first > 0 && in_range(first)) cp.T_star = first;
    }
  } else {
    cp.case_label = "alpha1*alpha3 = 25/21 alpha2^2 (A linear in T)";
    if (qb < 0) {
      const double r = -qc / qb;
      if (in_range(r)) cp.T_star = r;
    }
  }
  return cp;
}

inline std::optional<double> mle_v(const MomentSummary& m, double T, double gamma = 0.0) {
  if (!(T > 0)) return std::nullopt;
  const double b2 = m.beta2 - gamma;
  if (!(b2 > 0) || T >= b2 / m.alpha3) return std::nullopt;
  const double A = mle_discriminant(m, T, gamma);
  if (A < 0) return std::nullopt;
  const double v = -(m.beta1 - 10.0 * m.alpha2 * T - std::sqrt(A)) / (14.0 * m.alpha1 * T);
  if (!(v > 0) || !std::isfinite(v)) return std::nullopt;
  return v;
}

// Leading-order small-T expansion of the MLE.
inline double mle_small_T(const MomentSummary& m, double T) {
  const double a1 = m.alpha1, a2 = m.alpha2, a3 = m.alpha3, b1 = m.beta1, b2 = m.beta2;
  return b2 / b1 + (10.0 * a2 * b2 / (b1 * b1) - 7.0 * a1 * b2 * b2 / (b1 * b1 * b1) - 3.0 * a3 / b1) * T;
}

enum class Phase { I, II, III };
enum class MaxKind { a, b };

inline const char* phase_name(Phase p) { return p == Phase::I ? "I" : p == Phase::II ? "II" : "III"; }
inline const char* max_kind_name(MaxKind k) { return k == MaxKind::a ? "a" : "b"; }

struct RegimeLabel {
  Phase phase = Phase::I;
  MaxKind max_kind = MaxKind::a;
  std::string str() const { return std::string(phase_name(phase)) + max_kind_name(max_kind); }
};

inline RegimeLabel regime_classify(const MomentSummary& m, double T, double gamma = 0.0) {
  const double Tc = (m.beta2 - gamma) / m.alpha3;
  RegimeLabel r;
  if (T >= Tc) r.phase = Phase::I;
  else if (T >= Tc / 3.0) r.phase = Phase::II;
  else r.phase = Phase::III;
  r.max_kind = mle_v(m, T, gamma) ? MaxKind::b : MaxKind::a;
  return r;
}

// Tail exponent a of p(v) ~ v^-a for depth D >= 1; pass infinity for the infinite-depth limit.
inline double tail_exponent(double D) {
  if (std::isinf(D) && D > 0) return 5.0;
  if (!(D >= 1)) throw DomainError("tail exponent needs D >= 1; the depth-0 tail depends on T");
  return 5.0 - 3.0 / (D + 1.0);
}

inline double depth0_tail_exponent(const MomentSummary& m, double T, double gamma = 0.0) {
  return 2.0 * (1.0 + (m.beta1 + gamma) / (2.0 * T * m.alpha1));
}

struct VariancePoint {
  double T = 0;
  double mean = kNaN;
  double variance = kNaN;
  bool delta = false;
};

inline DensitySpec depth_density_spec(const MomentSummary& m, double T, double gamma, int D, double d) {
  DensitySpec s;
  s.moments = m;
  s.T = T;
  s.gamma = gamma;
  s.D = D;
  s.d = d;
  s.kind = D == 0 ? DensityCase::Depth0 : D == 1 ? DensityCase::Depth1 : DensityCase::GeneralD;
  return s;
}

inline std::vector<VariancePoint> variance_curve(const MomentSummary& m, double gamma, int D, double d,
                                                 const std::vector<double>& T_grid) {
  std::vector<VariancePoint> out;
  for (double T : T_grid) {
    StationaryDensity p(depth_density_spec(m, T, gamma, D, d));
    VariancePoint vp;
    vp.T = T;
    vp.delta = p.is_delta();
    vp.mean = p.mean();
    vp.variance = p.variance();
    out.push_back(vp);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gibbs posterior exp(-(L + gamma ||theta||^2) / T).

inline double gibbs_log_density(const DiagonalNetwork& net, const SampleSet& data, double T, double gamma) {
  detail::require_positive_T(T);
  double L = 0;
  const double v = net.output();
  for (std::size_t i = 0; i < data.size(); ++i) L += sqr(v * data.xs[i] - data.ys[i]);
  L /= static_cast<double>(data.size());
  return -(L + gamma * sum_squares(net.weights)) / T;
}

// Marginal of the charge c = u^2 - w^2 under the Gibbs measure of the scalar two-layer
// model. In (v, c) coordinates the measure is exp(-(L(v) + gamma sqrt(c^2 + 4v^2)) / T)
// dv dc / sqrt(c^2 + 4v^2). Without weight decay the total mass is infinite.
class GibbsChargeMarginal {
 public:
  GibbsChargeMarginal(const MomentSummary& m, double T, double gamma) : m_(m), T_(T), gamma_(gamma) {
    detail::require_positive_T(T);
    v0_ = m.beta2 / m.beta1;
    sd_ = std::sqrt(T / (2.0 * m.beta1));
    if (normalizable()) Z_ = raw_mass(-kInf, kInf);
  }

  bool normalizable() const { return gamma_ > 0; }

  // Unnormalized mass of {a <= c <= b}.
  double raw_mass(double a, double b) const {
    if (!(b > a)) return 0.0;
    auto inner = [&](double v) {
      const double s = 2.0 * std::abs(v);
      if (s == 0) return kInf;
      if (gamma_ == 0) return std::asinh(b / s) - std::asinh(a / s);
      if (std::isinf(a) && std::isinf(b)) return 2.0 * std::cyl_bessel_k(0.0, gamma_ * s / T_);
      auto f = [&](double c) {
        const double r = std::sqrt(c * c + s * s);
        return std::exp(-gamma_ * r / T_) / r;
      };
      const double lo = std::isinf(a) ? -1e6 : a, hi = std::isinf(b) ? 1e6 : b;
      return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, lo, hi, 15, 1e-10);
    };
    auto outer = [&](double v) {
      const double L = m_.beta1 * (v - v0_) * (v - v0_);
      return std::exp(-L / T_) * inner(v);
    };
    boost::math::quadrature::tanh_sinh<double> ts;
    const double R = std::abs(v0_) + 40.0 * sd_;
    return ts.integrate(outer, -R, 0.0) + ts.integrate(outer, 0.0, R);
  }

  // Normalized bin mass; zero for every bounded bin when the measure is not normalizable.
  double bin_mass(double a, double b) const {
    if (!normalizable()) return 0.0;
    return raw_mass(a, b) / Z_;
  }

 private:
  MomentSummary m_;
  double T_, gamma_;
  double v0_ = 0, sd_ = 1, Z_ = kInf;
};

// ---------------------------------------------------------------------------
// Stationary Fokker-Planck coefficients matching each closed-form density, for
// dv = mu dt + B dW. Used to check that the probability current vanishes.

struct FPCoefficients {
  double mu = 0;
  double B2 = 0;
};

inline FPCoefficients fokker_planck_coefficients(const DensitySpec& s, double v) {
  const auto& m = s.moments;
  FPCoefficients r;
  const double T = s.T;
  switch (s.kind) {
    case DensityCase::Depth0:
    case DensityCase::Depth1:
    case DensityCase::GeneralD:
    case DensityCase::InterpolationD1:
    case DensityCase::DeltaZeroC: {
      const int D = s.kind == DensityCase::Depth0 ? 0 : s.kind == DensityCase::GeneralD ? s.D : 1;
      const double d = s.kind == DensityCase::GeneralD ? s.d : 1.0;
      const double Dp1 = D + 1.0, av = std::abs(v);
      const double c = 2.0 * Dp1 * std::pow(d, 2.0 / Dp1 - 1.0) * std::pow(av, 2.0 * D / Dp1);
      const double g = m.g(v);
      double ito = 0;
      if (D > 0) ito = 2.0 * Dp1 * D * std::pow(d, 4.0 / Dp1 - 2.0) * sign_of(v) * std::pow(av, 3.0 - 4.0 / Dp1) * T * g;
      r.mu = -c * (m.beta1 * v - m.beta2) - 2.0 * s.gamma * Dp1 * v + ito;
      r.B2 = c * c * T * g;
      break;
    }
    case DensityCase::InfiniteD: {
      const double q = s.ratio;
      const double g = m.g(v);
      r.mu = -(2.0 * v * v / q) * (m.beta1 * v - m.beta2) + 2.0 * v * v * v * T * g / (q * q);
      r.B2 = 4.0 * std::pow(v, 4) * T * g / (q * q);
      break;
    }
  }
  return r;
}

}  // namespace sgdlab
