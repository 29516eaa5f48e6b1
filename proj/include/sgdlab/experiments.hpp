#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sgdlab/analytic.hpp"
#include "sgdlab/balance.hpp"
#include "sgdlab/config.hpp"
#include "sgdlab/dynamics.hpp"
#include "sgdlab/io.hpp"
#include "sgdlab/parallel.hpp"
#include "sgdlab/stats.hpp"

namespace sgdlab {

// ---------------------------------------------------------------------------
// Reusable protocols.

struct LinearFit {
  double slope = kNaN, intercept = kNaN, r2 = kNaN;
};

inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw Error("linear fit needs at least two points");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += sqr(x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += sqr(y[i] - my);
  }
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0 ? sqr(sxy) / (sxx * syy) : 1.0;
  return f;
}

// Ensemble statistics of the first charge of a problem over independent seeds.
struct ChargeEnsemble {
  std::vector<std::int64_t> steps;
  std::vector<double> mean, variance, mean_abs, mean_log_abs;
  std::vector<double> mean_decay_rate;  // 4 T g(v) + 4 gamma averaged over seeds (diagonal nets only)
  std::size_t diverged = 0;
};

template <class P>
ChargeEnsemble charge_ensemble(const P& prob, const StepperConfig& cfg, const std::vector<double>& theta0,
                               std::size_t seeds, std::size_t workers, const MomentSummary* m = nullptr) {
  auto recs = parallel_map<TrajectoryRecord>(seeds, workers, [&](std::size_t i) {
    return run_trajectory(theta0, prob, cfg, i);
  });
  ChargeEnsemble e;
  std::size_t len = static_cast<std::size_t>(-1);
  for (const auto& r : recs) {
    if (r.diverged) ++e.diverged;
    len = std::min(len, r.size());
  }
  e.steps.assign(recs.front().times.begin(), recs.front().times.begin() + static_cast<std::ptrdiff_t>(len));
  e.mean.assign(len, 0.0);
  e.variance.assign(len, 0.0);
  e.mean_abs.assign(len, 0.0);
  e.mean_log_abs.assign(len, 0.0);
  e.mean_decay_rate.assign(len, 0.0);
  const double n = static_cast<double>(seeds);
  for (const auto& r : recs)
    for (std::size_t t = 0; t < len; ++t) {
      const double c = r.charges[t].at(0);
      e.mean[t] += c / n;
      e.mean_abs[t] += std::abs(c) / n;
      e.mean_log_abs[t] += std::log(std::abs(c)) / n;
      if (m) e.mean_decay_rate[t] += charge_decay_rate(*m, r.v_values[t], cfg.T, cfg.gamma) / n;
    }
  for (const auto& r : recs)
    for (std::size_t t = 0; t < len; ++t) e.variance[t] += sqr(r.charges[t].at(0) - e.mean[t]) / n;
  return e;
}

struct ChargeDecayResult {
  double measured_rate = kNaN;   // per unit time, t = step * eta
  double predicted_rate = kNaN;  // time average of the ensemble mean of 4 T g(v) + 4 gamma
  double rel_err = kNaN;
  ChargeEnsemble ensemble;
};

// Exponential decay rate of |u^2 - w^2| for the scalar two-layer linear model.
inline ChargeDecayResult charge_decay(const SampleSet& data, const StepperConfig& cfg, double u0, double w0,
                                      std::size_t seeds, std::size_t workers) {
  DiagProblem prob(data, 1, 1);
  const MomentSummary& m = prob.moments();
  ChargeDecayResult r;
  r.ensemble = charge_ensemble(prob, cfg, {u0, w0}, seeds, workers, &m);
  std::vector<double> t;
  for (auto s : r.ensemble.steps) t.push_back(static_cast<double>(s) * cfg.eta);
  r.measured_rate = -linear_fit(t, r.ensemble.mean_log_abs).slope;
  r.predicted_rate = std::accumulate(r.ensemble.mean_decay_rate.begin(), r.ensemble.mean_decay_rate.end(), 0.0) /
                     static_cast<double>(r.ensemble.mean_decay_rate.size());
  r.rel_err = std::abs(r.measured_rate - r.predicted_rate) / r.predicted_rate;
  return r;
}

// Stationary samples of the reduced output SDE pooled over independent chains.
struct ReducedSamples {
  std::vector<double> values;
  std::vector<double> finals;
  std::size_t diverged = 0;
  double mean_lag1 = 0;
};

inline ReducedSamples reduced_stationary_samples(const MomentSummary& m, const StepperConfig& cfg, int D, double d,
                                                 double v0, std::size_t chains, std::size_t workers,
                                                 double burn = 0.2, double max_lag1 = 0.5) {
  auto parts = parallel_map<std::pair<ThinnedSeries, TrajectoryRecord>>(chains, workers, [&](std::size_t i) {
    TrajectoryRecord rec = run_reduced_trajectory(v0, m, cfg, D, d, i);
    ThinnedSeries th = stationary_samples(rec.v_values, burn, max_lag1);
    rec.v_values.erase(rec.v_values.begin(), rec.v_values.end() - 1);
    rec.times.clear();
    rec.charges.clear();
    return std::make_pair(std::move(th), std::move(rec));
  });
  ReducedSamples out;
  for (auto& [th, rec] : parts) {
    if (rec.diverged) {
      ++out.diverged;
      continue;
    }
    out.values.insert(out.values.end(), th.values.begin(), th.values.end());
    out.finals.push_back(rec.v_values.back());
    out.mean_lag1 += th.lag1 / static_cast<double>(chains);
  }
  return out;
}

// Fraction of values with |v| below a threshold.
inline double fraction_below(const std::vector<double>& v, double threshold) {
  if (v.empty()) return kNaN;
  std::size_t n = 0;
  for (double x : v) n += std::abs(x) < threshold ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(v.size());
}

struct SignCoherenceResult {
  int depth = 0;
  std::size_t trials = 0;
  std::size_t violations = 0;
  std::vector<double> final_v;
  std::vector<double> init_v;
};

// Mixed-sign initializations; a violation is a final output with sign opposite to
// E[xy] and magnitude above 1e-3.
inline SignCoherenceResult sign_coherence(const SampleSet& data, const StepperConfig& cfg, int depth,
                                          std::size_t seeds, double init_scale, std::size_t workers) {
  TanhProblem prob(data, depth);
  const double b2 = compute_moments(data).beta2;
  SignCoherenceResult r;
  r.depth = depth;
  r.trials = seeds;
  std::vector<std::vector<double>> inits(seeds);
  for (std::size_t i = 0; i < seeds; ++i) {
    Rng rng = make_rng(cfg.seed ^ 0x5157ULL, i);
    std::uniform_real_distribution<double> mag(0.5, 1.5);
    const double s1 = i % 2 == 0 ? 1.0 : -1.0;
    const double s2 = (i / 2) % 2 == 0 ? 1.0 : -1.0;
    if (depth == 0) inits[i] = {s1 * init_scale * mag(rng)};
    else inits[i] = {s1 * init_scale * mag(rng), s2 * init_scale * mag(rng)};
  }
  auto finals = parallel_map<double>(seeds, workers, [&](std::size_t i) {
    const auto rec = run_trajectory(inits[i], prob, cfg, i);
    return rec.diverged ? kNaN : rec.v_values.back();
  });
  for (std::size_t i = 0; i < seeds; ++i) {
    r.init_v.push_back(prob.output(inits[i]));
    r.final_v.push_back(finals[i]);
    const double v = finals[i];
    if (std::isfinite(v) && sign_of(v) == -sign_of(b2) && std::abs(v) > 1e-3) ++r.violations;
  }
  return r;
}

struct RegimeRow {
  double sigma = 0, T = 0;
  RegimeLabel label;
  double T_c = 0, T_c_over_3 = 0;
  std::optional<double> T_star;
};

inline std::vector<RegimeRow> regime_grid(double k, const std::vector<double>& sigmas, const std::vector<double>& Ts) {
  std::vector<RegimeRow> rows;
  for (double s : sigmas) {
    const MomentSummary m = gaussian_linear_moments(k, s);
    const CriticalPoints cp = critical_points(m);
    for (double T : Ts) {
      RegimeRow r;
      r.sigma = s;
      r.T = T;
      r.label = regime_classify(m, T);
      r.T_c = cp.T_c;
      r.T_c_over_3 = cp.T_c_over_3;
      r.T_star = cp.T_star;
      rows.push_back(r);
    }
  }
  return rows;
}

inline std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

// Initial weights of a diagonal network whose output equals v0 with all layers balanced.
inline std::vector<double> balanced_diag_init(double v0, std::size_t width, std::size_t depth) {
  const double per = std::abs(v0) / static_cast<double>(width);
  const double mag = std::pow(per, 1.0 / static_cast<double>(depth + 1));
  std::vector<double> th(width * (depth + 1), mag);
  if (v0 < 0)
    for (std::size_t i = 0; i < width; ++i) th[i * (depth + 1)] = -mag;
  return th;
}

struct StationaryRun {
  std::vector<double> samples, finals;
  std::size_t diverged = 0;
};

// Pooled thinned output samples of SGD-type chains on a diagonal network.
inline StationaryRun diag_stationary_samples(const SampleSet& data, const StepperConfig& s, std::size_t depth,
                                             std::size_t width, const std::vector<double>& init, std::size_t chains,
                                             std::size_t workers, double burn = 0.2, double max_lag1 = 0.5) {
  DiagProblem prob(data, width, depth);
  auto recs = parallel_map<std::pair<ThinnedSeries, double>>(chains, workers, [&](std::size_t i) {
    const auto rec = run_trajectory(init, prob, s, i);
    if (rec.diverged) return std::make_pair(ThinnedSeries{}, kNaN);
    return std::make_pair(stationary_samples(rec.v_values, burn, max_lag1), rec.v_values.back());
  });
  StationaryRun out;
  for (auto& [th, fin] : recs) {
    if (!std::isfinite(fin)) {
      ++out.diverged;
      continue;
    }
    out.samples.insert(out.samples.end(), th.values.begin(), th.values.end());
    out.finals.push_back(fin);
  }
  return out;
}

struct BayesCompareResult {
  std::vector<double> charges;
  double kl_sgd_vs_gibbs = kNaN;
  bool gibbs_normalizable = false;
  std::size_t depth0_samples = 0;
  double kl_depth0 = kNaN;
};

// Final SGD charges of the scalar two-layer model binned against the Gibbs charge
// marginal, plus a depth-0 control of SGD samples against their analytic law.
inline BayesCompareResult bayes_compare(const SampleSet& data, const StepperConfig& s, std::size_t seeds,
                                        double init_scale, std::size_t workers, double burn = 0.2,
                                        double max_lag1 = 0.5) {
  const MomentSummary m = compute_moments(data);
  DiagProblem prob(data, 1, 1);
  BayesCompareResult r;
  r.charges = parallel_map<double>(seeds, workers, [&](std::size_t i) {
    Rng rng = make_rng(split_seed(s.seed, 0xb0b), i);
    std::normal_distribution<double> normal;
    const auto rec = run_trajectory({init_scale * normal(rng), init_scale * normal(rng)}, prob, s, i);
    return rec.diverged ? kNaN : rec.charges.back().at(0);
  });
  std::erase_if(r.charges, [](double x) { return !std::isfinite(x); });
  const GibbsChargeMarginal gibbs(m, s.T, s.gamma);
  r.gibbs_normalizable = gibbs.normalizable();
  if (r.charges.size() > 1) r.kl_sgd_vs_gibbs = kl_estimate(fd_histogram(r.charges), gibbs);

  const auto run = diag_stationary_samples(data, s, 0, 1, {m.beta2 / m.beta1}, seeds, workers, burn, max_lag1);
  const StationaryDensity d0(depth_density_spec(m, s.T, s.gamma, 0, 1.0));
  r.depth0_samples = run.samples.size();
  if (run.samples.size() > 1) r.kl_depth0 = kl_estimate(fd_histogram(run.samples), d0);
  return r;
}

// Scalar two-layer ReLU setup: U scaled by lambda, W and b divided by it.
inline TwoLayerRelu random_relu(std::size_t d_in, std::size_t hidden, std::size_t d_out, double lambda,
                                std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x7e1u);
  std::normal_distribution<double> normal;
  TwoLayerRelu net;
  net.U.resize(static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(hidden));
  net.W.resize(static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(d_in));
  net.b.resize(static_cast<Eigen::Index>(hidden));
  for (Eigen::Index i = 0; i < net.U.size(); ++i) net.U.data()[i] = lambda * normal(rng) / std::sqrt(static_cast<double>(hidden));
  for (Eigen::Index i = 0; i < net.W.size(); ++i) net.W.data()[i] = normal(rng) / (lambda * std::sqrt(static_cast<double>(d_in)));
  for (Eigen::Index i = 0; i < net.b.size(); ++i) net.b(i) = 0.1 * normal(rng) / lambda;
  return net;
}

struct ReluBalancePoint {
  std::int64_t step = 0;
  double uC1u = 0, wC2w = 0, residual = 0, norm_ratio = 0, lo = 0, hi = 0;
  std::size_t active = 0;
};

inline ReluBalancePoint relu_balance_point(const TwoLayerRelu& net, const ReluDataset& data, std::int64_t step) {
  const NoiseMatrices nm = estimate_noise_matrices(net, data);
  const Eigen::VectorXd u = relu_u_vector(net), w = relu_w_vector(net);
  ReluBalancePoint p;
  p.step = step;
  p.uC1u = u.dot(nm.C1 * u);
  p.wC2w = w.dot(nm.C2 * w);
  p.residual = std::abs(p.uC1u - p.wC2w);
  const ActiveRatio ar = active_norm_ratio(net, data);
  p.norm_ratio = ar.ratio;
  p.lo = ar.lo;
  p.hi = ar.hi;
  p.active = ar.active;
  return p;
}

struct ReluBalanceResult {
  std::vector<ReluBalancePoint> series;
  TwoLayerRelu final_net;
  bool diverged = false;
};

inline ReluBalanceResult relu_balance(const ReluDataset& data, const TwoLayerRelu& init, const StepperConfig& cfg,
                                      std::int64_t checkpoints) {
  ReluProblem prob(data, init.hidden());
  std::vector<double> th = prob.pack(init);
  Rng rng = make_rng(cfg.seed, 0);
  StepWorkspace ws;
  ReluBalanceResult r;
  r.series.push_back(relu_balance_point(init, data, 0));
  const std::int64_t every = std::max<std::int64_t>(1, cfg.steps / std::max<std::int64_t>(1, checkpoints));
  for (std::int64_t t = 1; t <= cfg.steps; ++t) {
    try {
      apply_step(th, prob, cfg, rng, ws, t);
    } catch (const DivergedError&) {
      r.diverged = true;
      return r;
    }
    if (t % every == 0 || t == cfg.steps) r.series.push_back(relu_balance_point(prob.unpack(th), data, t));
  }
  r.final_net = prob.unpack(th);
  return r;
}

// ---------------------------------------------------------------------------
// Experiment runner.

inline MomentSummary analytic_moments(const ExperimentConfig& c, const SampleSet* data) {
  const auto& ds = c.dataset;
  if (ds.moments == "population") {
    if (ds.kind == "linear") return gaussian_linear_moments(ds.k, ds.sigma);
    if (ds.kind == "delta-zero") return make_moments(2.0, 2.0 * ds.k, 2.0 * ds.k * ds.k, 1.0, ds.k - ds.c);
  }
  if (!data) throw ConfigError("dataset.moments = empirical needs a scalar dataset");
  return compute_moments(*data);
}

inline SampleSet make_scalar_dataset(const ExperimentConfig& c) {
  const auto& ds = c.dataset;
  const std::uint64_t seed = split_seed(c.seed, 0xda7aULL);
  if (ds.kind == "linear") return synth_linear_dataset(ds.k, ds.sigma, static_cast<std::size_t>(ds.n), seed);
  if (ds.kind == "delta-zero") return synth_delta_zero_dataset(ds.k, ds.c, static_cast<std::size_t>(ds.n), seed);
  if (ds.kind == "csv") return read_samples_csv(ds.path);
  throw ConfigError("experiment '" + c.experiment + "' needs a scalar dataset (linear, delta-zero or csv)");
}

inline StepperConfig stepper_at_T(const StepperConfig& base, double T) {
  StepperConfig s = base;
  s.eta = T * static_cast<double>(s.S);
  s.T = s.eta / static_cast<double>(s.S);
  s.validate();
  return s;
}

inline std::string fmt_num(double x) {
  std::ostringstream o;
  o << x;
  return o.str();
}

inline DensitySpec density_for(const ExperimentConfig& c, const MomentSummary& m, double T) {
  DensitySpec s = c.density.spec;
  s.moments = m;
  s.T = T;
  return s;
}

// Density grid for output: explicit bounds or the [0.001, 0.999] quantile span of the continuous part.
inline std::vector<double> output_grid(const ExperimentConfig& c, const StationaryDensity& p) {
  const auto& dn = c.density;
  double lo, hi;
  if (p.is_delta()) {
    lo = dn.v_min.value_or(p.delta_location() - 1.0);
    hi = dn.v_max.value_or(p.delta_location() + 1.0);
  } else {
    lo = dn.v_min.value_or(p.quantile(1e-3));
    hi = dn.v_max.value_or(p.quantile(0.999));
  }
  if (!(hi > lo)) hi = lo + 1.0;
  const auto n = static_cast<std::size_t>(dn.points);
  if (dn.log_grid) {
    if (!(lo > 0)) throw ConfigError("density.log_grid needs a positive v_min");
    std::vector<double> v = linspace(std::log(lo), std::log(hi), n);
    for (double& x : v) x = std::exp(x);
    return v;
  }
  return linspace(lo, hi, n);
}

inline void write_density_csv(const fs::path& path, const StationaryDensity& p, const std::vector<double>& grid) {
  CsvWriter w(path, {"v", "pdf", "log_pdf"});
  for (double v : grid) {
    const double lp = p.is_delta() ? -kInf : p.log_density(v) - p.log_norm() + std::log1p(-p.atom_weight());
    w.row(v, p.pdf(v), lp);
  }
}

inline nlohmann::json density_summary(const StationaryDensity& p) {
  const auto& s = p.spec();
  nlohmann::json j;
  j["case"] = density_case_name(s.kind);
  j["T"] = s.T;
  j["gamma"] = s.gamma;
  j["delta"] = p.is_delta();
  j["delta_location"] = p.is_delta() ? nlohmann::json(p.delta_location()) : nlohmann::json(nullptr);
  j["z"] = p.atom_weight();
  j["log_norm"] = json_number(p.is_delta() ? kInf : p.log_norm());
  j["norm"] = json_number(p.norm());
  j["mean"] = json_number(p.mean());
  j["variance"] = json_number(p.variance());
  return j;
}

struct RunContext {
  const ExperimentConfig& cfg;
  ArtifactSet& out;
  std::size_t workers;
};

namespace detail {

inline nlohmann::json run_balance_linear(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const SampleSet data = make_scalar_dataset(c);
  std::vector<double> init = c.model.init.empty() ? std::vector<double>{1.2, 0.8} : c.model.init;
  if (init.size() != 2) throw ConfigError("balance-linear: model.init must hold [u, w]");
  const auto r = charge_decay(data, c.stepper.cfg, init[0], init[1], static_cast<std::size_t>(c.stepper.trajectories),
                              ctx.workers);
  CsvWriter w(ctx.out.add("balance_linear.csv", "mean log|u^2 - w^2| and predicted decay rate vs step"),
              {"step", "time", "mean_log_abs_charge", "mean_abs_charge", "predicted_rate"});
  for (std::size_t i = 0; i < r.ensemble.steps.size(); ++i)
    w.row(r.ensemble.steps[i], static_cast<double>(r.ensemble.steps[i]) * c.stepper.cfg.eta, r.ensemble.mean_log_abs[i],
          r.ensemble.mean_abs[i], r.ensemble.mean_decay_rate[i]);
  return {{"measured_rate", r.measured_rate}, {"predicted_rate", r.predicted_rate}, {"relative_error", r.rel_err},
          {"diverged", r.ensemble.diverged}};
}

inline nlohmann::json run_noether_contrast(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const SampleSet data = make_scalar_dataset(c);
  DiagProblem prob(data, 1, 1);
  std::vector<double> init = c.model.init.empty() ? std::vector<double>{1.2, 0.8} : c.model.init;
  if (init.size() != 2) throw ConfigError("noether-contrast: model.init must hold [u, w]");
  nlohmann::json summary;
  const auto seeds = static_cast<std::size_t>(c.stepper.trajectories);
  for (Mode mode : {Mode::GD, Mode::SGD, Mode::LangevinGD}) {
    StepperConfig s = c.stepper.cfg;
    s.mode = mode;
    if (mode == Mode::LangevinGD && s.noise_scale == 0) s.noise_scale = 0.1;
    const auto e = charge_ensemble(prob, s, init, mode == Mode::GD ? 1 : seeds, ctx.workers);
    std::string name = mode == Mode::GD ? "gd" : mode == Mode::SGD ? "sgd" : "langevin";
    CsvWriter w(ctx.out.add("charge_" + name + ".csv", std::string(mode_name(mode)) + " charge vs step"),
                {"step", "mean_charge", "variance_charge", "mean_abs_charge"});
    for (std::size_t i = 0; i < e.steps.size(); ++i) w.row(e.steps[i], e.mean[i], e.variance[i], e.mean_abs[i]);
    const double c0 = std::abs(e.mean.front());
    nlohmann::json j;
    j["initial_abs_charge"] = c0;
    j["final_mean_abs_charge"] = e.mean_abs.back();
    j["relative_drift"] = std::abs(e.mean.back() - e.mean.front()) / c0;
    if (mode == Mode::LangevinGD) {
      std::vector<double> t(e.steps.begin(), e.steps.end());
      j["variance_growth_r2"] = linear_fit(t, e.variance).r2;
      j["noise_scale"] = s.noise_scale;
    }
    j["diverged"] = e.diverged;
    summary[name] = j;
  }
  return summary;
}

inline nlohmann::json run_balance_relu(RunContext& ctx) {
  const auto& c = ctx.cfg;
  if (c.dataset.kind != "relu") throw ConfigError("balance-relu needs dataset.kind = relu");
  const auto d = static_cast<std::size_t>(c.dataset.d);
  const ReluDataset data = synth_relu_dataset(d, static_cast<std::size_t>(c.dataset.n), c.dataset.noise,
                                              split_seed(c.seed, 0xda7aULL));
  const TwoLayerRelu init = random_relu(d, static_cast<std::size_t>(c.model.hidden), d, c.model.init_scale, c.seed);
  const auto r = relu_balance(data, init, c.stepper.cfg, 20);
  CsvWriter w(ctx.out.add("balance_relu.csv", "noise-balance terms and norm ratio vs step"),
              {"step", "uC1u", "wC2w", "residual", "active_neurons", "norm_ratio", "ratio_lower", "ratio_upper"});
  for (const auto& p : r.series) w.row(p.step, p.uC1u, p.wC2w, p.residual, p.active, p.norm_ratio, p.lo, p.hi);
  const auto& f = r.series.back();
  return {{"initial_residual", r.series.front().residual}, {"final_residual", f.residual},
          {"residual_ratio", f.residual / r.series.front().residual}, {"final_norm_ratio", f.norm_ratio},
          {"ratio_bounds", {json_number(f.lo), json_number(f.hi)}},
          {"within_bounds", f.norm_ratio >= f.lo && f.norm_ratio <= f.hi}, {"diverged", r.diverged}};
}

inline StationaryRun stationary_run(const ExperimentConfig& c, const SampleSet& data, const MomentSummary& m,
                                    const StepperConfig& s, int D, std::size_t workers) {
  const auto chains = static_cast<std::size_t>(c.stepper.trajectories);
  const auto width = static_cast<std::size_t>(c.model.width);
  if (s.mode == Mode::ReducedSDE) {
    auto r = reduced_stationary_samples(m, s, D, static_cast<double>(width), c.model.v0, chains, workers,
                                        c.compare.burn_in, c.compare.max_lag1);
    return {std::move(r.values), std::move(r.finals), r.diverged};
  }
  const auto depth = static_cast<std::size_t>(D);
  const std::vector<double> init = c.model.init.empty() ? balanced_diag_init(c.model.v0, width, depth) : c.model.init;
  return diag_stationary_samples(data, s, depth, width, init, chains, workers, c.compare.burn_in, c.compare.max_lag1);
}

inline nlohmann::json run_stationary(RunContext& ctx, int forced_D) {
  const auto& c = ctx.cfg;
  const int D = forced_D >= 0 ? forced_D : static_cast<int>(c.model.depth);
  if (c.experiment == "stationary-generalD" && D < 2) throw ConfigError("stationary-generalD needs model.depth >= 2");
  const SampleSet data = make_scalar_dataset(c);
  const MomentSummary m = analytic_moments(c, &data);
  std::vector<double> temps = c.stepper.temperatures;
  if (temps.empty()) temps.push_back(c.stepper.cfg.T);
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < temps.size(); ++i) {
    const double T = temps[i];
    StepperConfig s = stepper_at_T(c.stepper.cfg, T);
    s.seed = split_seed(c.seed, i);
    DensitySpec spec = c.density.present ? density_for(c, m, T)
                                         : depth_density_spec(m, T, s.gamma, D, static_cast<double>(c.model.width));
    spec.gamma = s.gamma;
    const StationaryDensity p(spec);
    const StationaryRun run = stationary_run(c, data, m, s, D, ctx.workers);
    const std::string tag = "T" + std::to_string(i);
    nlohmann::json j = density_summary(p);
    j["samples"] = run.samples.size();
    j["diverged"] = run.diverged;
    j["collapsed_fraction"] = json_number(fraction_below(run.finals, 1e-3));
    if (D == 1)
      if (const auto v = mle_v(m, T, s.gamma)) j["mle_v"] = *v;
    write_density_csv(ctx.out.add("density_" + tag + ".csv", "analytic density at T=" + fmt_num(T)), p,
                      output_grid(c, p));
    {
      CsvWriter sw(ctx.out.add("samples_" + tag + ".csv", "pooled thinned output samples at T=" + fmt_num(T)), {"v"});
      for (double x : run.samples) sw.row(x);
    }
    if (run.samples.size() >= 2) {
      const Histogram h = fd_histogram(run.samples);
      CsvWriter w(ctx.out.add("hist_" + tag + ".csv", "empirical histogram at T=" + fmt_num(T)),
                  {"bin_lo", "bin_hi", "count", "density"});
      for (std::size_t b = 0; b < h.bins(); ++b)
        w.row(h.edges[b], h.edges[b + 1], h.counts[b],
              h.counts[b] / (h.total * (h.edges[b + 1] - h.edges[b])));
      const KsResult ks = ks_distance(run.samples, p);
      j["ks"] = ks.statistic;
      j["support_mismatch"] = ks.support_mismatch;
      j["kl"] = json_number(p.is_delta() ? kl_from_samples(run.samples, p) : kl_estimate(h, p));
      j["sample_mean"] = std::accumulate(run.samples.begin(), run.samples.end(), 0.0) /
                         static_cast<double>(run.samples.size());
      j["mode_estimate"] = interior_mode_estimate(run.samples);
    }
    rows.push_back(j);
  }
  return {{"depth", D}, {"width", c.model.width}, {"temperatures", rows}};
}

inline nlohmann::json run_sign_coherence(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const SampleSet data = make_scalar_dataset(c);
  CsvWriter w(ctx.out.add("sign_coherence.csv", "initial and final output per seed and depth"),
              {"depth", "seed", "v_init", "v_final", "violation"});
  const double b2 = compute_moments(data).beta2;
  nlohmann::json summary;
  for (int depth : {0, 1}) {
    const auto r = sign_coherence(data, c.stepper.cfg, depth, static_cast<std::size_t>(c.stepper.trajectories),
                                  c.model.init_scale, ctx.workers);
    for (std::size_t i = 0; i < r.trials; ++i) {
      const bool bad = std::isfinite(r.final_v[i]) && sign_of(r.final_v[i]) == -sign_of(b2) && std::abs(r.final_v[i]) > 1e-3;
      w.row(depth, i, r.init_v[i], r.final_v[i], bad ? 1 : 0);
    }
    summary["depth" + std::to_string(depth)] = {{"trials", r.trials}, {"violations", r.violations}};
  }
  return summary;
}

inline nlohmann::json run_regimes(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const std::vector<double> sigmas = c.sweep.sigmas.empty() ? linspace(0.25, 2.0, 8) : c.sweep.sigmas;
  const std::vector<double> Ts = c.sweep.temperatures.empty() ? linspace(0.005, 0.6, 120) : c.sweep.temperatures;
  const auto rows = regime_grid(c.dataset.k, sigmas, Ts);
  CsvWriter w(ctx.out.add("regimes.csv", "regime label per (sigma, T)"),
              {"sigma", "T", "regime", "T_c", "T_c_over_3", "T_star"});
  std::map<std::string, std::size_t> counts;
  for (const auto& r : rows) {
    w.row(r.sigma, r.T, r.label.str(), r.T_c, r.T_c_over_3, r.T_star ? *r.T_star : kNaN);
    ++counts[r.label.str()];
  }
  nlohmann::json crit = nlohmann::json::array();
  for (double s : sigmas) {
    const auto cp = critical_points(gaussian_linear_moments(c.dataset.k, s));
    crit.push_back({{"sigma", s}, {"T_c", cp.T_c}, {"T_c_over_3", cp.T_c_over_3},
                    {"T_star", cp.T_star ? json_number(*cp.T_star) : nlohmann::json(nullptr)}});
  }
  return {{"counts", counts}, {"critical_points", crit}};
}

inline nlohmann::json run_fluctuation(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const SampleSet data = make_scalar_dataset(c);
  const MomentSummary m = analytic_moments(c, &data);
  const int D = static_cast<int>(c.model.depth);
  if (D < 1) throw ConfigError("fluctuation-inversion needs model.depth >= 1");
  const double T_c = critical_points(m, c.stepper.cfg.gamma).T_c;
  const std::vector<double> fr = c.sweep.t_fractions.empty() ? linspace(0.05, 0.95, 19) : c.sweep.t_fractions;
  std::vector<double> Ts;
  for (double f : fr) Ts.push_back(f * T_c);
  const auto curve = variance_curve(m, c.stepper.cfg.gamma, D, static_cast<double>(c.model.width), Ts);
  const bool simulate = c.stepper.cfg.mode == Mode::ReducedSDE && c.stepper.cfg.steps > 0;
  CsvWriter w(ctx.out.add("variance_curve.csv", "analytic and simulated Var[v] vs T"),
              {"T", "T_over_Tc", "mean", "variance", "delta", "sim_variance"});
  nlohmann::json pts = nlohmann::json::array();
  for (std::size_t i = 0; i < curve.size(); ++i) {
    double sim = kNaN;
    if (simulate) {
      StepperConfig s = stepper_at_T(c.stepper.cfg, Ts[i]);
      s.seed = split_seed(c.seed, i);
      const auto r = stationary_run(c, data, m, s, D, ctx.workers);
      if (r.samples.size() > 1) {
        const double mu = std::accumulate(r.samples.begin(), r.samples.end(), 0.0) / static_cast<double>(r.samples.size());
        double v = 0;
        for (double x : r.samples) v += sqr(x - mu);
        sim = v / static_cast<double>(r.samples.size() - 1);
      }
    }
    w.row(curve[i].T, fr[i], curve[i].mean, curve[i].variance, curve[i].delta ? 1 : 0, sim);
    pts.push_back({{"T_over_Tc", fr[i]}, {"variance", json_number(curve[i].variance)}, {"sim_variance", json_number(sim)}});
  }
  return {{"T_c", T_c}, {"points", pts}};
}

inline nlohmann::json run_bayes_compare(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const SampleSet data = make_scalar_dataset(c);
  const auto seeds = static_cast<std::size_t>(c.stepper.trajectories);
  StepperConfig s = c.stepper.cfg;
  s.mode = Mode::SGD;
  const BayesCompareResult r = bayes_compare(data, s, seeds, c.model.init_scale, ctx.workers, c.compare.burn_in,
                                             c.compare.max_lag1);
  CsvWriter w(ctx.out.add("sgd_charges.csv", "final u^2 - w^2 per SGD seed"), {"charge"});
  for (double x : r.charges) w.row(x);
  return {{"sgd_vs_gibbs_kl", json_number(r.kl_sgd_vs_gibbs)}, {"gibbs_normalizable", r.gibbs_normalizable},
          {"depth0_samples", r.depth0_samples}, {"depth0_kl", json_number(r.kl_depth0)}};
}

}  // namespace detail

struct RunResult {
  fs::path dir;
  nlohmann::json summary;
};

// Runs the configured experiment, writing artifacts, summary.json and manifest.json into dir.
inline RunResult run_experiment(const ExperimentConfig& c, const fs::path& dir, std::size_t workers) {
  ArtifactSet out(dir);
  RunContext ctx{c, out, workers};
  nlohmann::json summary;
  const std::string& e = c.experiment;
  if (e == "balance-linear") summary = detail::run_balance_linear(ctx);
  else if (e == "noether-contrast") summary = detail::run_noether_contrast(ctx);
  else if (e == "balance-relu") summary = detail::run_balance_relu(ctx);
  else if (e == "stationary-depth0") summary = detail::run_stationary(ctx, 0);
  else if (e == "stationary-depth1") summary = detail::run_stationary(ctx, 1);
  else if (e == "stationary-generalD") summary = detail::run_stationary(ctx, -1);
  else if (e == "sign-coherence-tanh") summary = detail::run_sign_coherence(ctx);
  else if (e == "regimes-grid") summary = detail::run_regimes(ctx);
  else if (e == "fluctuation-inversion") summary = detail::run_fluctuation(ctx);
  else if (e == "bayes-compare") summary = detail::run_bayes_compare(ctx);
  else throw ConfigError("unknown experiment '" + e + "'");
  summary["experiment"] = e;
  write_json(out.add("summary.json", "experiment summary"), summary);
  nlohmann::json manifest;
  manifest["experiment"] = e;
  manifest["config_hash"] = c.hash();
  manifest["seed"] = c.seed;
  manifest["version"] = kVersion;
  manifest["workers"] = workers;
  manifest["config"] = c.resolved;
  manifest["files"] = out.entries();
  write_json(dir / "manifest.json", manifest);
  return {dir, summary};
}

}  // namespace sgdlab
