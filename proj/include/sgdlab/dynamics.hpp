#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgdlab/common.hpp"
#include "sgdlab/models.hpp"
#include "sgdlab/moments.hpp"

namespace sgdlab {

enum class Mode { SGD, GD, LangevinGD, SDE, ReducedSDE };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::SGD: return "SGD";
    case Mode::GD: return "GD";
    case Mode::LangevinGD: return "LangevinGD";
    case Mode::SDE: return "SDE";
    case Mode::ReducedSDE: return "ReducedSDE";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "SGD" || s == "sgd") return Mode::SGD;
  if (s == "GD" || s == "gd") return Mode::GD;
  if (s == "LangevinGD" || s == "langevin") return Mode::LangevinGD;
  if (s == "SDE" || s == "sde") return Mode::SDE;
  if (s == "ReducedSDE" || s == "reduced") return Mode::ReducedSDE;
  throw ConfigError("unknown mode '" + s + "' (expected SGD, GD, LangevinGD, SDE, ReducedSDE)");
}

struct StepperConfig {
  double eta = 1e-3;
  std::int64_t S = 1;
  double T = 1e-3;  // always eta / S
  double gamma = 0.0;
  std::int64_t steps = 0;
  std::uint64_t seed = 0;
  Mode mode = Mode::SGD;
  std::int64_t record_every = 1;
  double noise_scale = 0.0;     // LangevinGD only
  std::optional<double> dt;     // SDE integration step; defaults to eta

  static StepperConfig make(double eta, std::int64_t S, Mode mode = Mode::SGD, double gamma = 0.0,
                            std::int64_t steps = 0, std::uint64_t seed = 0) {
    StepperConfig c;
    c.eta = eta;
    c.S = S;
    c.mode = mode;
    c.gamma = gamma;
    c.steps = steps;
    c.seed = seed;
    c.T = eta / static_cast<double>(S);
    c.validate();
    return c;
  }

  double time_step() const { return dt.value_or(eta); }

  void validate() const {
    if (!(eta > 0)) throw ConfigError("eta must be positive");
    if (S < 1) throw ConfigError("S must be at least 1");
    if (steps < 0) throw ConfigError("steps must be non-negative");
    if (record_every < 1) throw ConfigError("record_every must be at least 1");
    if (T != eta / static_cast<double>(S)) throw ConfigError("T must equal eta/S");
    if (dt && !(*dt > 0)) throw ConfigError("dt must be positive");
    if (!(gamma >= 0)) throw ConfigError("gamma must be non-negative");
  }
};

inline constexpr double kDivergenceBound = 1e12;

inline void check_finite(std::span<const double> theta, std::int64_t step) {
  for (double x : theta)
    if (!std::isfinite(x) || std::abs(x) > kDivergenceBound) throw DivergedError(step);
}

// ---------------------------------------------------------------------------
// Problems: a parameter vector, per-sample data-loss gradients, a scalar output.

class DiagProblem {
 public:
  DiagProblem(const SampleSet& data, std::size_t width, std::size_t depth)
      : data_(&data), width_(width), depth_(depth), m_(compute_moments(data)) {}

  std::size_t dim() const { return width_ * (depth_ + 1); }
  std::size_t num_samples() const { return data_->size(); }
  const MomentSummary& moments() const { return m_; }
  std::size_t width() const { return width_; }
  std::size_t depth() const { return depth_; }

  DiagonalNetwork network(std::span<const double> th) const {
    DiagonalNetwork n(width_, depth_);
    std::copy(th.begin(), th.end(), n.weights.begin());
    return n;
  }

  double output(std::span<const double> th) const {
    const std::size_t L = depth_ + 1;
    double v = 0;
    for (std::size_t i = 0; i < width_; ++i) {
      double p = 1;
      for (std::size_t k = 0; k < L; ++k) p *= th[i * L + k];
      v += p;
    }
    return v;
  }

  void jacobian(std::span<const double> th, std::span<double> jac) const {
    const std::size_t L = depth_ + 1;
    for (std::size_t i = 0; i < width_; ++i) {
      double prefix = 1.0;
      for (std::size_t k = 0; k < L; ++k) {
        jac[i * L + k] = prefix;
        prefix *= th[i * L + k];
      }
      double suffix = 1.0;
      for (std::size_t k = L; k-- > 0;) {
        jac[i * L + k] *= suffix;
        suffix *= th[i * L + k];
      }
    }
  }

  void sample_grad(std::span<const double> th, std::size_t i, std::span<double> g) const {
    const double x = data_->xs[i];
    const double h = 2.0 * (output(th) * x - data_->ys[i]) * x;
    jacobian(th, g);
    for (double& e : g) e *= h;
  }

  // Full-batch gradient through the moments: dL/dv = 2(beta1 v - beta2).
  void full_grad(std::span<const double> th, std::span<double> g) const {
    const double h = 2.0 * (m_.beta1 * output(th) - m_.beta2);
    jacobian(th, g);
    for (double& e : g) e *= h;
  }

  // Per-sample gradient covariance: Var[2x(vx - y)] J J^T = 4 g(v) J J^T.
  void grad_covariance(std::span<const double> th, Eigen::MatrixXd& C) const {
    Eigen::VectorXd J(static_cast<Eigen::Index>(dim()));
    jacobian(th, std::span<double>(J.data(), dim()));
    const double var = 4.0 * std::max(0.0, m_.g(output(th)));
    C.noalias() = var * J * J.transpose();
  }

  // Layer-pair charges (u_i^(k))^2 - (u_i^(k+1))^2, row by row.
  std::vector<double> charges(std::span<const double> th) const {
    std::vector<double> c;
    const std::size_t L = depth_ + 1;
    for (std::size_t i = 0; i < width_; ++i)
      for (std::size_t k = 0; k + 1 < L; ++k)
        c.push_back(sqr(th[i * L + k]) - sqr(th[i * L + k + 1]));
    return c;
  }

 private:
  const SampleSet* data_;
  std::size_t width_, depth_;
  MomentSummary m_;
};

class TanhProblem {
 public:
  TanhProblem(const SampleSet& data, int depth) : data_(&data), depth_(depth) {
    if (depth != 0 && depth != 1) throw ConfigError("tanh model: depth must be 0 or 1");
  }
  std::size_t dim() const { return depth_ == 0 ? 1 : 2; }
  std::size_t num_samples() const { return data_->size(); }
  int depth() const { return depth_; }

  TwoLayerTanh model(std::span<const double> th) const {
    TwoLayerTanh m;
    if (depth_ == 0) {
      m.v = th[0];
    } else {
      m.u = th[0];
      m.w = th[1];
    }
    return m;
  }

  double output(std::span<const double> th) const { return depth_ == 0 ? th[0] : th[0] * th[1]; }

  void sample_grad(std::span<const double> th, std::size_t i, std::span<double> g) const {
    const auto r = tanh_loss_grad(model(th), data_->xs[i], data_->ys[i], depth_);
    for (std::size_t j = 0; j < r.grad.size(); ++j) g[j] = r.grad[j];
  }

  std::vector<double> charges(std::span<const double> th) const {
    if (depth_ == 0) return {};
    return {th[0] * th[0] - th[1] * th[1]};
  }

 private:
  const SampleSet* data_;
  int depth_;
};

struct ReluDataset {
  Eigen::MatrixXd X;  // n x d_in
  Eigen::MatrixXd Y;  // n x d_out
  std::size_t size() const { return static_cast<std::size_t>(X.rows()); }
};

// x ~ N(0, I_d), y = x + eps with eps ~ N(0, noise^2 I_d).
inline ReluDataset synth_relu_dataset(std::size_t d, std::size_t n, double noise, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal;
  ReluDataset ds;
  ds.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  ds.Y.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < ds.X.rows(); ++i)
    for (Eigen::Index j = 0; j < ds.X.cols(); ++j) {
      const double x = normal(rng);
      ds.X(i, j) = x;
      ds.Y(i, j) = x + noise * normal(rng);
    }
  return ds;
}

// Parameters flattened as [vec(U), vec(W), b], column-major.
class ReluProblem {
 public:
  ReluProblem(const ReluDataset& data, std::size_t hidden)
      : data_(&data), h_(hidden), din_(static_cast<std::size_t>(data.X.cols())),
        dout_(static_cast<std::size_t>(data.Y.cols())) {}

  std::size_t dim() const { return dout_ * h_ + h_ * din_ + h_; }
  std::size_t num_samples() const { return data_->size(); }
  std::size_t hidden() const { return h_; }
  std::size_t u_size() const { return dout_ * h_; }

  std::vector<double> pack(const TwoLayerRelu& net) const {
    std::vector<double> th(dim());
    std::copy(net.U.data(), net.U.data() + u_size(), th.begin());
    std::copy(net.W.data(), net.W.data() + h_ * din_, th.begin() + static_cast<std::ptrdiff_t>(u_size()));
    std::copy(net.b.data(), net.b.data() + h_, th.begin() + static_cast<std::ptrdiff_t>(u_size() + h_ * din_));
    return th;
  }

  TwoLayerRelu unpack(std::span<const double> th) const {
    TwoLayerRelu net;
    net.U = Eigen::Map<const Eigen::MatrixXd>(th.data(), static_cast<Eigen::Index>(dout_), static_cast<Eigen::Index>(h_));
    net.W = Eigen::Map<const Eigen::MatrixXd>(th.data() + u_size(), static_cast<Eigen::Index>(h_), static_cast<Eigen::Index>(din_));
    net.b = Eigen::Map<const Eigen::VectorXd>(th.data() + u_size() + h_ * din_, static_cast<Eigen::Index>(h_));
    return net;
  }

  void sample_grad(std::span<const double> th, std::size_t i, std::span<double> g) const {
    const auto H = static_cast<Eigen::Index>(h_);
    const auto Din = static_cast<Eigen::Index>(din_);
    const auto Dout = static_cast<Eigen::Index>(dout_);
    Eigen::Map<const Eigen::MatrixXd> U(th.data(), Dout, H);
    Eigen::Map<const Eigen::MatrixXd> W(th.data() + u_size(), H, Din);
    Eigen::Map<const Eigen::VectorXd> b(th.data() + u_size() + h_ * din_, H);
    const auto x = data_->X.row(static_cast<Eigen::Index>(i)).transpose();
    const auto y = data_->Y.row(static_cast<Eigen::Index>(i)).transpose();
    pre_.noalias() = W * x;
    pre_ += b;
    act_ = pre_.cwiseMax(0.0);
    r_.noalias() = U * act_;
    r_ -= y;
    Eigen::Map<Eigen::MatrixXd> dU(g.data(), Dout, H);
    Eigen::Map<Eigen::MatrixXd> dW(g.data() + u_size(), H, Din);
    Eigen::Map<Eigen::VectorXd> db(g.data() + u_size() + h_ * din_, H);
    dU.noalias() = 2.0 * r_ * act_.transpose();
    back_.noalias() = 2.0 * (U.transpose() * r_);
    for (Eigen::Index j = 0; j < H; ++j)
      if (!(pre_(j) > 0.0)) back_(j) = 0.0;
    dW.noalias() = back_ * x.transpose();
    db = back_;
  }

  double mean_loss(std::span<const double> th) const {
    const TwoLayerRelu net = unpack(th);
    Eigen::MatrixXd pre = (data_->X * net.W.transpose()).rowwise() + net.b.transpose();
    Eigen::MatrixXd F = pre.cwiseMax(0.0) * net.U.transpose();
    return (F - data_->Y).squaredNorm() / static_cast<double>(num_samples());
  }

  double output(std::span<const double> th) const { return mean_loss(th); }

  std::vector<double> charges(std::span<const double> th) const {
    double nu = 0, nw = 0;
    for (std::size_t j = 0; j < u_size(); ++j) nu += th[j] * th[j];
    for (std::size_t j = u_size(); j < dim(); ++j) nw += th[j] * th[j];
    return {nu - nw};
  }

 private:
  const ReluDataset* data_;
  std::size_t h_, din_, dout_;
  mutable Eigen::VectorXd pre_, act_, r_, back_;
};

// ---------------------------------------------------------------------------
// Steppers.

struct StepWorkspace {
  std::vector<double> g, gi, noise;
  std::vector<std::size_t> batch;
  Eigen::MatrixXd C;
  void resize(std::size_t p) {
    g.assign(p, 0.0);
    gi.assign(p, 0.0);
    noise.assign(p, 0.0);
  }
};

template <class P>
void mean_full_grad(const P& prob, std::span<const double> th, std::span<double> g, StepWorkspace& ws) {
  if constexpr (requires { prob.full_grad(th, g); }) {
    prob.full_grad(th, g);
  } else {
    std::fill(g.begin(), g.end(), 0.0);
    ws.gi.resize(th.size());
    const std::size_t n = prob.num_samples();
    for (std::size_t i = 0; i < n; ++i) {
      prob.sample_grad(th, i, ws.gi);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += ws.gi[j];
    }
    for (double& e : g) e /= static_cast<double>(n);
  }
}

template <class P>
void gradient_covariance(const P& prob, std::span<const double> th, Eigen::MatrixXd& C, StepWorkspace& ws) {
  const auto p = static_cast<Eigen::Index>(th.size());
  if constexpr (requires { prob.grad_covariance(th, C); }) {
    prob.grad_covariance(th, C);
  } else {
    const std::size_t n = prob.num_samples();
    ws.gi.resize(th.size());
    Eigen::MatrixXd G(static_cast<Eigen::Index>(n), p);
    for (std::size_t i = 0; i < n; ++i) {
      prob.sample_grad(th, i, ws.gi);
      for (Eigen::Index j = 0; j < p; ++j) G(static_cast<Eigen::Index>(i), j) = ws.gi[static_cast<std::size_t>(j)];
    }
    const Eigen::RowVectorXd mean = G.colwise().mean();
    G.rowwise() -= mean;
    C.noalias() = G.transpose() * G / static_cast<double>(n);
  }
}

// Symmetric square root; negative eigenvalues below 1e-12 of the largest are clipped.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& C) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
  Eigen::VectorXd ev = es.eigenvalues();
  const double top = std::max(0.0, ev.maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < 0) {
      if (ev(i) < -1e-12 * top && ev(i) < -1e-300)
        throw NumericalError("covariance has a significantly negative eigenvalue");
      ev(i) = 0;
    }
  }
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

inline void add_weight_decay(std::span<const double> th, std::span<double> g, double gamma) {
  if (gamma == 0) return;
  for (std::size_t j = 0; j < g.size(); ++j) g[j] += 2.0 * gamma * th[j];
}

template <class P>
void gd_step(std::vector<double>& th, const P& prob, const StepperConfig& cfg, StepWorkspace& ws,
             std::int64_t step = 0) {
  ws.resize(th.size());
  mean_full_grad(prob, th, ws.g, ws);
  add_weight_decay(th, ws.g, cfg.gamma);
  for (std::size_t j = 0; j < th.size(); ++j) th[j] -= cfg.eta * ws.g[j];
  check_finite(th, step);
}

template <class P>
void sgd_step(std::vector<double>& th, const P& prob, const StepperConfig& cfg, Rng& rng,
              StepWorkspace& ws, std::int64_t step = 0) {
  const std::size_t n = prob.num_samples();
  if (n == 0) throw ConfigError("empty dataset");
  ws.resize(th.size());
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  ws.batch.resize(static_cast<std::size_t>(cfg.S));
  for (auto& b : ws.batch) b = pick(rng);
  for (std::size_t b : ws.batch) {
    prob.sample_grad(th, b, ws.gi);
    for (std::size_t j = 0; j < th.size(); ++j) ws.g[j] += ws.gi[j];
  }
  const double inv_s = 1.0 / static_cast<double>(cfg.S);
  for (double& e : ws.g) e *= inv_s;
  add_weight_decay(th, ws.g, cfg.gamma);
  for (double e : ws.g)
    if (!std::isfinite(e)) throw DivergedError(step);
  for (std::size_t j = 0; j < th.size(); ++j) th[j] -= cfg.eta * ws.g[j];
  check_finite(th, step);
}

template <class P>
void langevin_gd_step(std::vector<double>& th, const P& prob, const StepperConfig& cfg,
                      double noise_scale, Rng& rng, StepWorkspace& ws, std::int64_t step = 0) {
  ws.resize(th.size());
  mean_full_grad(prob, th, ws.g, ws);
  add_weight_decay(th, ws.g, cfg.gamma);
  std::normal_distribution<double> normal;
  const double s = noise_scale * std::sqrt(cfg.eta);
  for (std::size_t j = 0; j < th.size(); ++j) th[j] += -cfg.eta * ws.g[j] + s * normal(rng);
  check_finite(th, step);
}

template <class P>
void sde_step(std::vector<double>& th, const P& prob, const StepperConfig& cfg, Rng& rng,
              StepWorkspace& ws, std::int64_t step = 0) {
  const std::size_t p = th.size();
  ws.resize(p);
  const double dt = cfg.time_step();
  mean_full_grad(prob, th, ws.g, ws);
  add_weight_decay(th, ws.g, cfg.gamma);
  gradient_covariance(prob, th, ws.C, ws);
  const Eigen::MatrixXd R = psd_sqrt(ws.C);
  std::normal_distribution<double> normal;
  Eigen::VectorXd xi(static_cast<Eigen::Index>(p));
  for (Eigen::Index j = 0; j < xi.size(); ++j) xi(j) = normal(rng);
  const Eigen::VectorXd noise = std::sqrt(cfg.T * dt) * (R * xi);
  for (std::size_t j = 0; j < p; ++j) th[j] += -dt * ws.g[j] + noise(static_cast<Eigen::Index>(j));
  check_finite(th, step);
}

template <class P>
void apply_step(std::vector<double>& th, const P& prob, const StepperConfig& cfg, Rng& rng,
                StepWorkspace& ws, std::int64_t step) {
  switch (cfg.mode) {
    case Mode::SGD: sgd_step(th, prob, cfg, rng, ws, step); break;
    case Mode::GD: gd_step(th, prob, cfg, ws, step); break;
    case Mode::LangevinGD: langevin_gd_step(th, prob, cfg, cfg.noise_scale, rng, ws, step); break;
    case Mode::SDE: sde_step(th, prob, cfg, rng, ws, step); break;
    case Mode::ReducedSDE:
      throw ConfigError("ReducedSDE acts on the scalar output; use run_reduced_trajectory");
  }
}

// ---------------------------------------------------------------------------
// One-dimensional SDE for the output v of a diagonal network with D hidden
// layers and effective width d (D = 0 is plain linear regression).

struct ReducedCoefficients {
  double drift = 0;
  double diffusion = 0;  // B, the noise amplitude multiplying dW
};

inline ReducedCoefficients reduced_v_coefficients(double v, const MomentSummary& m, double T,
                                                  double gamma, int D, double d) {
  const double Dp1 = D + 1.0;
  const double av = std::abs(v);
  const double g = std::max(0.0, m.g(v));
  double c = 0.0, ito = 0.0;
  if (D == 0) {
    c = 2.0 * d;
  } else if (D == 1) {
    c = 4.0 * av;
    ito = 4.0 * v * T * g;
  } else {
    c = 2.0 * Dp1 * std::pow(d, 2.0 / Dp1 - 1.0) * std::pow(av, 2.0 * D / Dp1);
    if (av > 0)
      ito = 2.0 * Dp1 * D * std::pow(d, 4.0 / Dp1 - 2.0) * sign_of(v) * std::pow(av, 3.0 - 4.0 / Dp1) * T * g;
  }
  ReducedCoefficients r;
  r.drift = -c * (m.beta1 * v - m.beta2) - 2.0 * gamma * Dp1 * v + ito;
  r.diffusion = c * std::sqrt(T * g);
  return r;
}

// Largest relative change of v allowed per Euler sub-step when D >= 1. The sign of v
// is invariant for D >= 1, and a full step at large |v| would overshoot through zero.
inline constexpr double kMaxRelativeStep = 0.1;
inline constexpr std::int64_t kMaxSubsteps = 1 << 20;

// One step of length dt. For D >= 1 the step is split adaptively so that both drift and
// noise move v by at most kMaxRelativeStep of |v| per sub-step.
inline double reduced_v_step(double v, const MomentSummary& m, const StepperConfig& cfg, int D,
                             double d, Rng& rng, std::int64_t step = 0, bool with_noise = true) {
  if (!std::isfinite(v)) throw DivergedError(step);
  if (D < 0) throw ConfigError("depth must be non-negative");
  if (!(d >= 1)) throw ConfigError("effective width must be at least 1");
  std::normal_distribution<double> normal;
  double remaining = cfg.time_step();
  std::int64_t subs = 0;
  while (remaining > 0) {
    const auto co = reduced_v_coefficients(v, m, cfg.T, cfg.gamma, D, d);
    double h = remaining;
    if (D > 0 && v != 0) {
      const double lim = kMaxRelativeStep * std::abs(v);
      const double b = with_noise ? co.diffusion : 0.0;
      if (std::abs(co.drift) * h > lim) h = lim / std::abs(co.drift);
      if (b * std::sqrt(h) > lim) h = (lim / b) * (lim / b);
    }
    double next = v + co.drift * h;
    if (with_noise) next += co.diffusion * std::sqrt(h) * normal(rng);
    if (!std::isfinite(next) || std::abs(next) > kDivergenceBound || ++subs > kMaxSubsteps)
      throw DivergedError(step);
    // Zero is absorbing for D >= 1; subnormal |v| would stall the relative step.
    if (D > 0 && std::abs(next) < std::numeric_limits<double>::min()) next = 0.0;
    v = next;
    remaining = h == remaining ? 0.0 : remaining - h;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Trajectories.

struct TrajectoryRecord {
  std::vector<std::int64_t> times;
  std::vector<double> v_values;
  std::vector<std::vector<double>> charges;
  std::vector<std::vector<double>> snapshots;
  std::vector<std::string> extra_names;
  std::vector<std::vector<double>> extra;
  bool diverged = false;
  std::int64_t diverged_step = -1;

  std::size_t size() const { return times.size(); }

  std::vector<double> charge_series(std::size_t j = 0) const {
    std::vector<double> c;
    c.reserve(charges.size());
    for (const auto& row : charges) c.push_back(row.at(j));
    return c;
  }
};

struct NoObserver {
  std::vector<std::string> names() const { return {}; }
  template <class Th>
  std::vector<double> operator()(const Th&) const { return {}; }
};

template <class P, class Obs = NoObserver>
TrajectoryRecord run_trajectory(const std::vector<double>& theta0, const P& prob,
                                const StepperConfig& cfg, std::uint64_t stream = 0,
                                bool snapshots = false, const Obs& obs = Obs{}) {
  cfg.validate();
  TrajectoryRecord rec;
  rec.extra_names = obs.names();
  std::vector<double> th = theta0;
  Rng rng = make_rng(cfg.seed, stream);
  StepWorkspace ws;
  auto record = [&](std::int64_t t) {
    rec.times.push_back(t);
    rec.v_values.push_back(prob.output(th));
    rec.charges.push_back(prob.charges(th));
    if (snapshots) rec.snapshots.push_back(th);
    if (!rec.extra_names.empty()) rec.extra.push_back(obs(th));
  };
  record(0);
  for (std::int64_t t = 1; t <= cfg.steps; ++t) {
    try {
      apply_step(th, prob, cfg, rng, ws, t);
    } catch (const DivergedError& e) {
      rec.diverged = true;
      rec.diverged_step = e.step();
      return rec;
    }
    if (t % cfg.record_every == 0) record(t);
  }
  return rec;
}

inline TrajectoryRecord run_reduced_trajectory(double v0, const MomentSummary& m,
                                               const StepperConfig& cfg, int D, double d,
                                               std::uint64_t stream = 0) {
  cfg.validate();
  TrajectoryRecord rec;
  Rng rng = make_rng(cfg.seed, stream);
  double v = v0;
  rec.times.push_back(0);
  rec.v_values.push_back(v);
  rec.charges.emplace_back();
  for (std::int64_t t = 1; t <= cfg.steps; ++t) {
    try {
      v = reduced_v_step(v, m, cfg, D, d, rng, t);
    } catch (const DivergedError& e) {
      rec.diverged = true;
      rec.diverged_step = e.step();
      return rec;
    }
    if (t % cfg.record_every == 0) {
      rec.times.push_back(t);
      rec.v_values.push_back(v);
      rec.charges.emplace_back();
    }
  }
  return rec;
}

inline void write_trajectory_csv(const TrajectoryRecord& rec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  const std::size_t nc = rec.charges.empty() ? 0 : rec.charges.front().size();
  out << "step,v";
  for (std::size_t j = 0; j < nc; ++j) out << ",charge_" << (j + 1);
  for (const auto& name : rec.extra_names) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < rec.size(); ++i) {
    out << rec.times[i] << ',' << rec.v_values[i];
    for (std::size_t j = 0; j < nc; ++j) out << ',' << rec.charges[i][j];
    if (i < rec.extra.size())
      for (double e : rec.extra[i]) out << ',' << e;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Stationarity protocol: drop a burn-in prefix, then thin until the lag-1
// autocorrelation of the retained series falls below a threshold.

inline double lag1_autocorrelation(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 3) return 0.0;
  double mean = 0;
  for (double e : x) mean += e;
  mean /= static_cast<double>(n);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < n; ++i) {
    den += sqr(x[i] - mean);
    if (i + 1 < n) num += (x[i] - mean) * (x[i + 1] - mean);
  }
  return den > 0 ? num / den : 0.0;
}

struct ThinnedSeries {
  std::vector<double> values;
  std::size_t stride = 1;
  double lag1 = 0;
};

inline ThinnedSeries stationary_samples(std::span<const double> series, double burn_fraction = 0.2,
                                        double max_lag1 = 0.5) {
  ThinnedSeries out;
  const auto start = static_cast<std::size_t>(burn_fraction * static_cast<double>(series.size()));
  std::vector<double> kept(series.begin() + static_cast<std::ptrdiff_t>(start), series.end());
  std::size_t stride = 1;
  while (true) {
    std::vector<double> thin;
    for (std::size_t i = 0; i < kept.size(); i += stride) thin.push_back(kept[i]);
    const double r = lag1_autocorrelation(thin);
    if (r < max_lag1 || thin.size() < 64) {
      out.values = std::move(thin);
      out.stride = stride;
      out.lag1 = r;
      return out;
    }
    stride *= 2;
  }
}

}  // namespace sgdlab
