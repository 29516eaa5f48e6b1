// sgdlab command-line front end.
//
//   sgdlab run          --config <path> [--out <dir>] [--workers N] [--seed N]
//   sgdlab analytic-pdf --config <path> [--out <dir>] [--seed N]
//   sgdlab compare      --config <path> [--out <dir>] [--seed N]
//   sgdlab validate     [--config <path>] [--explain]
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "sgdlab/experiments.hpp"

namespace {

using namespace sgdlab;
using Json = nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CommonOptions {
  std::string config;
  std::string out;
  long workers = 0;
  std::optional<std::uint64_t> seed;
};

ExperimentConfig load(const CommonOptions& o) {
  ExperimentConfig c = validate_config(o.config);
  if (o.seed) c.set_seed(*o.seed);
  return c;
}

fs::path output_dir(const CommonOptions& o, const ExperimentConfig& c) { return o.out.empty() ? fs::path(c.output) : fs::path(o.out); }

std::optional<SampleSet> dataset_if_needed(const ExperimentConfig& c) {
  if (c.dataset.moments == "empirical" || c.dataset.kind == "csv") return make_scalar_dataset(c);
  return std::nullopt;
}

Json optional_number(const std::optional<double>& x) { return x ? json_number(*x) : Json(nullptr); }

void write_manifest(const ExperimentConfig& c, const ArtifactSet& out, const std::string& command) {
  Json m;
  m["command"] = command;
  m["experiment"] = c.experiment;
  m["config_hash"] = c.hash();
  m["seed"] = c.seed;
  m["version"] = kVersion;
  m["config"] = c.resolved;
  m["files"] = out.entries();
  write_json(out.dir() / "manifest.json", m);
}

int cmd_run(const CommonOptions& o) {
  const ExperimentConfig c = load(o);
  const std::size_t workers = resolve_workers(o.workers > 0 ? o.workers : c.workers);
  const auto r = run_experiment(c, output_dir(o, c), workers);
  std::cout << r.summary.dump(2) << '\n';
  return kExitOk;
}

int cmd_analytic_pdf(const CommonOptions& o) {
  const ExperimentConfig c = load(o);
  const auto data = dataset_if_needed(c);
  const MomentSummary m = analytic_moments(c, data ? &*data : nullptr);
  const DensitySpec spec = density_for(c, m, c.density.spec.T);
  const StationaryDensity p(spec);
  ArtifactSet out(output_dir(o, c));
  write_density_csv(out.add("density.csv", "analytic stationary density on a grid"), p, output_grid(c, p));

  Json j = density_summary(p);
  const CriticalPoints cp = critical_points(m, spec.gamma);
  j["T_c"] = json_number(cp.T_c);
  j["T_c_over_3"] = json_number(cp.T_c_over_3);
  j["T_star"] = optional_number(cp.T_star);
  j["regime"] = regime_classify(m, spec.T, spec.gamma).str();
  j["v_star"] = optional_number(mle_v(m, spec.T, spec.gamma));
  j["config_hash"] = c.hash();
  write_json(out.add("density.json", "critical points, regime and normalization"), j);
  write_manifest(c, out, "analytic-pdf");
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

int cmd_compare(const CommonOptions& o) {
  const ExperimentConfig c = load(o);
  if (c.compare.trajectory.empty()) throw ConfigError(o.config + ": missing field 'compare.trajectory'");
  fs::path traj = c.compare.trajectory;
  if (traj.is_relative()) traj = fs::path(o.config).parent_path() / traj;
  const std::vector<double> series = read_csv_column(traj, c.compare.column);
  if (series.size() < 10) throw ConfigError(traj.string() + ": need at least 10 samples");
  const ThinnedSeries th = stationary_samples(series, c.compare.burn_in, c.compare.max_lag1);

  const auto data = dataset_if_needed(c);
  const MomentSummary m = analytic_moments(c, data ? &*data : nullptr);
  const StationaryDensity p(density_for(c, m, c.density.spec.T));

  Json j;
  j["samples"] = th.values.size();
  j["stride"] = th.stride;
  j["lag1"] = th.lag1;
  j["n_effective"] = effective_sample_size(th.values, th.lag1);
  const KsResult ks = ks_distance(th.values, p);
  j["ks"] = ks.statistic;
  j["support_mismatch"] = ks.support_mismatch;
  j["kl"] = json_number(kl_from_samples(th.values, p));
  try {
    const TailFit tf = fit_tail_exponent_samples(th.values, c.compare.tail_q_lo, c.compare.tail_q_hi);
    j["tail_fit"] = {{"exponent", tf.exponent}, {"stderr", tf.stderr_}, {"points", tf.points}};
  } catch (const Error& e) {
    j["tail_fit"] = {{"exponent", nullptr}, {"error", e.what()}};
  }
  j["config_hash"] = c.hash();
  ArtifactSet out(output_dir(o, c));
  write_json(out.add("compare.json", "KS, KL, tail fit and effective sample size"), j);
  write_manifest(c, out, "compare");
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

int cmd_validate(const CommonOptions& o, bool explain) {
  if (explain) std::cout << explain_config();
  if (o.config.empty()) {
    if (explain) return kExitOk;
    throw ConfigError("validate needs --config (or --explain)");
  }
  const ExperimentConfig c = load(o);
  Json j = c.resolved;
  j["config_hash"] = c.hash();
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sgdlab: stationary distributions of SGD on symmetric models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  CommonOptions opt;
  bool explain = false;
  auto add_common = [&](CLI::App* sub, bool with_workers, bool config_required) {
    auto* c = sub->add_option("--config", opt.config, "experiment config (TOML or JSON)");
    if (config_required) c->required();
    sub->add_option("--out", opt.out, "output directory (overrides the config's output)");
    sub->add_option("--seed", opt.seed, "base seed (overrides the config's seed)");
    if (with_workers)
      sub->add_option("--workers", opt.workers, "worker threads (default: SGDLAB_WORKERS or all cores)")
          ->check(CLI::PositiveNumber);
  };
  auto* run = app.add_subcommand("run", "run the configured experiment and write artifacts");
  add_common(run, true, true);
  auto* pdf = app.add_subcommand("analytic-pdf", "evaluate the analytic stationary density on a grid");
  add_common(pdf, false, true);
  auto* cmp = app.add_subcommand("compare", "compare a trajectory CSV with the analytic density");
  add_common(cmp, false, true);
  auto* val = app.add_subcommand("validate", "check a config and print its resolved form");
  add_common(val, false, false);
  val->add_flag("--explain", explain, "list every config key with its type, default and meaning");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(opt);
    if (pdf->parsed()) return cmd_analytic_pdf(opt);
    if (cmp->parsed()) return cmd_compare(opt);
    if (val->parsed()) return cmd_validate(opt, explain);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
