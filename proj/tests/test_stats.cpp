#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sgdlab/experiments.hpp"

using namespace sgdlab;

namespace {

const MomentSummary kM = gaussian_linear_moments(1, 1);

StationaryDensity depth_density(int D, double T, double z = 0.0) {
  auto s = depth_density_spec(kM, T, 0.0, D, 1.0);
  s.z = z;
  return StationaryDensity(s);
}

// Inverse-CDF draws from the continuous part.
std::vector<double> draw(const StationaryDensity& p, std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<double> xs(n);
  for (auto& x : xs) x = p.quantile(U(rng));
  return xs;
}

// Log-log slope of the analytic density between its 0.95 and 0.999 quantiles, the
// window the sample fit uses. Below v ~ 10 the depth-1 density is steeper than its tail.
double window_exponent(const StationaryDensity& p) {
  const auto [v, lp] = log_density_grid(p, p.quantile(0.95), p.quantile(0.999), 400);
  return fit_tail_exponent_grid(v, lp, 0.0, 1.0).exponent;
}

}  // namespace

TEST(KsDistance, SelfConsistentDraws) {
  for (int D : {0, 1}) {
    const auto p = depth_density(D, 0.1);
    EXPECT_LT(ks_distance(draw(p, 100000, 4), p).statistic, 0.01) << "D=" << D;
  }
}

TEST(KsDistance, MixtureWithAtom) {
  const auto p = depth_density(1, 0.1, 0.3);
  const auto cont = depth_density(1, 0.1);
  Rng rng = make_rng(8);
  std::bernoulli_distribution atom(0.3);
  std::vector<double> xs = draw(cont, 100000, 9);
  for (auto& x : xs)
    if (atom(rng)) x = 0.0;
  EXPECT_LT(ks_distance(xs, p).statistic, 0.01);
  EXPECT_GT(ks_distance(xs, cont).statistic, 0.25);
}

TEST(KsDistance, DeltaDensity) {
  const auto p = depth_density(1, 0.5);
  ASSERT_TRUE(p.is_delta());
  const auto r = ks_distance(std::vector<double>(50, 0.0), p);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_FALSE(r.support_mismatch);
  const auto bad = ks_distance({0.0, 0.0, 0.4}, p);
  EXPECT_EQ(bad.statistic, 1.0);
  EXPECT_TRUE(bad.support_mismatch);
}

TEST(KsDistance, ShiftedSamplesAreFar) {
  const auto p = depth_density(1, 0.1);
  auto xs = draw(p, 20000, 5);
  for (auto& x : xs) x += 0.3;
  EXPECT_GT(ks_distance(xs, p).statistic, 0.1);
}

TEST(KsDistance, SmallSampleMatchesDirectSupremum) {
  const auto p = depth_density(1, 0.2);
  std::vector<double> xs{0.2, 1.4, 0.7, 3.0, 0.05};
  std::vector<double> s = xs;
  std::sort(s.begin(), s.end());
  double d = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double F = p.cdf(s[i]);
    d = std::max({d, (i + 1) / 5.0 - F, F - i / 5.0});
  }
  EXPECT_NEAR(ks_distance(xs, p).statistic, d, 1e-15);
}

TEST(TailFit, AnalyticGrids) {
  {
    const auto [v, lp] = log_density_grid(depth_density(1, 0.1), 1e-2, 1e4, 10000);
    EXPECT_NEAR(fit_tail_exponent_grid(v, lp).exponent, 3.5, 0.1);
  }
  {
    auto s = depth_density_spec(kM, 0.1, 0.0, 2, 1.0);
    const auto [v, lp] = log_density_grid(StationaryDensity(s), 1e-2, 1e4, 10000);
    EXPECT_NEAR(fit_tail_exponent_grid(v, lp).exponent, 4.0, 0.1);
  }
  {
    const auto [v, lp] = log_density_grid(depth_density(0, 0.1), 1e-2, 1e4, 10000);
    EXPECT_NEAR(fit_tail_exponent_grid(v, lp).exponent, 7.0, 0.2);
  }
}

TEST(TailFit, ExactPowerLaw) {
  std::vector<double> v, lp;
  for (int i = 0; i < 1000; ++i) {
    v.push_back(std::exp(0.01 * i));
    lp.push_back(-2.7 * 0.01 * i + 1.0);
  }
  const auto f = fit_tail_exponent_grid(v, lp, 0.0, 1.0);
  EXPECT_NEAR(f.exponent, 2.7, 1e-12);
  EXPECT_LT(f.stderr_, 1e-10);
}

TEST(TailFit, InsufficientTailMass) {
  EXPECT_THROW(fit_tail_exponent_samples(std::vector<double>(150, 1.0)), Error);
  std::vector<double> v(100, 1.0), lp(100, 0.0);
  EXPECT_THROW(fit_tail_exponent_grid(v, lp), Error);
}

TEST(TailFit, InverseCdfSamples) {
  const auto p = depth_density(1, 0.1);
  const auto f = fit_tail_exponent_samples(draw(p, 1000000, 6));
  EXPECT_NEAR(f.exponent, window_exponent(p), 0.2);
}

TEST(TailFit, FarTailSamplesRecoverAsymptoticExponent) {
  const auto p = depth_density(1, 0.1);
  Rng rng = make_rng(13);
  std::uniform_real_distribution<double> U(1.0 - 1e-8, 1.0);
  std::vector<double> xs(200000);
  for (auto& x : xs) x = p.quantile(U(rng));
  EXPECT_NEAR(fit_tail_exponent_samples(xs, 0.0, 0.99).exponent, 3.5, 0.1);
}

TEST(TailFit, SimulatedDepthOneRun) {
  auto cfg = StepperConfig::make(0.1, 1, Mode::ReducedSDE, 0, 2000000, 17);
  cfg.dt = 1e-3;
  cfg.record_every = 10;
  const auto r = reduced_stationary_samples(kM, cfg, 1, 1.0, 1.0, 8, resolve_workers(0));
  ASSERT_EQ(r.diverged, 0u);
  EXPECT_NEAR(fit_tail_exponent_samples(r.values).exponent, window_exponent(depth_density(1, 0.1)), 0.4);
}

TEST(KlEstimate, SelfConsistentHistogram) {
  const auto p = depth_density(1, 0.1);
  const auto xs = draw(p, 100000, 7);
  EXPECT_LT(kl_estimate(fd_histogram(xs), p), 0.05);
}

TEST(KlEstimate, IdenticalHistogramsGiveZero) {
  const auto xs = draw(depth_density(0, 0.2), 5000, 3);
  const auto h = fd_histogram(xs);
  EXPECT_EQ(kl_estimate(h, h), 0.0);
}

TEST(KlEstimate, KnownMasses) {
  EXPECT_NEAR(kl_from_masses({0.5, 0.5}, {0.25, 0.75}), 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0), 1e-15);
  EXPECT_EQ(kl_from_masses({0.0, 1.0}, {1.0, 0.0}), kInf);
  EXPECT_EQ(kl_from_masses({0.0, 1.0}, {0.0, 1.0}), 0.0);
}

TEST(KlEstimate, SupportMismatchIsInfinite) {
  const auto p = depth_density(1, 0.1);
  auto xs = draw(p, 1000, 2);
  xs.push_back(-0.5);
  EXPECT_EQ(kl_estimate(fd_histogram(xs), p), kInf);
  // Samples confined to zero charge against the flat Gibbs marginal.
  const GibbsChargeMarginal g(kM, 0.1, 0.0);
  const auto h = Histogram::from_samples(std::vector<double>(100, 0.0), {-1.0, -0.01, 0.01, 1.0});
  EXPECT_EQ(kl_estimate(h, g), kInf);
}

TEST(KlEstimate, PointMass) {
  const auto p = depth_density(1, 0.5);
  ASSERT_TRUE(p.is_delta());
  EXPECT_EQ(kl_from_samples(std::vector<double>(100, 0.0), p), 0.0);
  EXPECT_EQ(kl_from_samples({0.0, 0.0, 1e-3}, p), kInf);
  const auto q = depth_density(1, 0.1);
  const auto xs = draw(q, 20000, 11);
  EXPECT_EQ(kl_from_samples(xs, q), kl_estimate(fd_histogram(xs), q));
}

TEST(Histogram, CountsAndRebinning) {
  const std::vector<double> xs{0.1, 0.5, 0.5, 1.2, 1.9, 2.0, 2.5, -0.1};
  const auto h = Histogram::from_samples(xs, {0.0, 0.5, 1.0, 1.5, 2.0});
  EXPECT_EQ(h.total, 6.0);
  EXPECT_EQ(h.counts, (std::vector<double>{1, 2, 1, 2}));
  const auto c = h.rebin({0.0, 1.0, 2.0});
  EXPECT_EQ(c.total, h.total);
  EXPECT_EQ(c.counts, (std::vector<double>{3, 3}));
  EXPECT_THROW(h.rebin({0.0, 0.7, 2.0}), ConfigError);
  EXPECT_THROW(Histogram::from_samples(xs, {1.0, 0.0}), ConfigError);
}

TEST(Histogram, FreedmanDiaconisCoversRange) {
  const auto xs = draw(depth_density(0, 0.3), 2000, 1);
  const auto h = fd_histogram(xs);
  EXPECT_EQ(h.total, static_cast<double>(xs.size()));
  EXPECT_EQ(h.edges.front(), *std::min_element(xs.begin(), xs.end()));
  EXPECT_EQ(h.edges.back(), *std::max_element(xs.begin(), xs.end()));
  EXPECT_LE(h.bins(), 200u);
}

TEST(ModeEstimate, GaussianSample) {
  Rng rng = make_rng(2);
  std::normal_distribution<double> N(1.5, 0.5);
  std::vector<double> xs(200000);
  for (auto& x : xs) x = N(rng);
  EXPECT_NEAR(mode_estimate(xs), 1.5, 0.05);
  EXPECT_NEAR(interior_mode_estimate(xs), 1.5, 0.05);
  EXPECT_EQ(mode_estimate({2.0}), 2.0);
}

TEST(ModeEstimate, InteriorMaximumOfDepthOneDensity) {
  const double T = 0.05;
  const auto xs = draw(depth_density(1, T), 200000, 12);
  EXPECT_NEAR(interior_mode_estimate(xs), *mle_v(kM, T), 0.03);
}

TEST(EffectiveSampleSize, LagOneScaling) {
  const std::vector<double> xs(1000, 0.0);
  EXPECT_DOUBLE_EQ(effective_sample_size(xs, 0.0), 1000.0);
  EXPECT_NEAR(effective_sample_size(xs, 0.5), 1000.0 / 3.0, 1e-9);
}
