#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sgdlab/models.hpp"

using namespace sgdlab;

namespace {

constexpr double kH = 1e-6;

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

// Brute-force output: sum over rows of the product of the row's entries.
double brute_output(const DiagonalNetwork& n) {
  double v = 0;
  for (std::size_t i = 0; i < n.width; ++i) {
    double p = 1;
    for (std::size_t k = 0; k <= n.depth; ++k) p *= n.weights[i * (n.depth + 1) + k];
    v += p;
  }
  return v;
}

}  // namespace

TEST(DiagLoss, ZeroWeights) {
  DiagonalNetwork n(1, 1);
  EXPECT_DOUBLE_EQ(diag_loss(n, 1, 2, 0), 4.0);
}

TEST(DiagLoss, ExactFitIsZero) {
  DiagonalNetwork n(1, 1);
  n.weights = {2, 3};
  EXPECT_DOUBLE_EQ(diag_loss(n, 1, 6, 0), 0.0);
}

TEST(DiagLoss, CancellingRowsWithWeightDecay) {
  DiagonalNetwork n(2, 2);
  n.weights = {1, 1, 1, 1, 1, -1};
  EXPECT_DOUBLE_EQ(brute_output(n), 0.0);
  EXPECT_DOUBLE_EQ(n.output(), 0.0);
  EXPECT_NEAR(diag_loss(n, 1, 1, 0.1), 1.6, 1e-15);
}

TEST(DiagGrad, ZeroWeightsGiveZeroGradient) {
  for (std::size_t D : {1u, 2u, 3u}) {
    DiagonalNetwork n(3, D);
    for (double g : diag_grad(n, 0.7, 1.3, 0.0)) EXPECT_EQ(g, 0.0);
  }
}

TEST(DiagGrad, DepthZero) {
  DiagonalNetwork n(1, 0);
  n.weights = {1};
  const auto g = diag_grad(n, 1, 0, 0);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_DOUBLE_EQ(g[0], 2.0);
}

TEST(DiagGrad, MatchesFiniteDifferences) {
  Rng rng = make_rng(11);
  std::normal_distribution<double> N;
  for (std::size_t D : {0u, 1u, 2u, 4u}) {
    DiagonalNetwork n(3, D);
    for (double& w : n.weights) w = N(rng);
    const double x = N(rng), y = N(rng), gamma = 0.05;
    const auto g = diag_grad(n, x, y, gamma);
    for (std::size_t j = 0; j < n.weights.size(); ++j) {
      DiagonalNetwork a = n, b = n;
      a.weights[j] += kH;
      b.weights[j] -= kH;
      const double fd = (diag_loss(a, x, y, gamma) - diag_loss(b, x, y, gamma)) / (2 * kH);
      EXPECT_LT(rel_err(g[j], fd), 1e-6) << "D=" << D << " j=" << j;
    }
  }
}

TEST(ReluLossGrad, ZeroNetZeroLabel) {
  TwoLayerRelu net;
  net.U = Eigen::MatrixXd::Zero(2, 3);
  net.W = Eigen::MatrixXd::Zero(3, 4);
  net.b = Eigen::VectorXd::Zero(3);
  const auto r = relu_loss_grad(net, Eigen::VectorXd::Ones(4), Eigen::VectorXd::Zero(2));
  EXPECT_EQ(r.loss, 0.0);
  for (Eigen::Index i = 0; i < r.dU.size(); ++i) EXPECT_EQ(r.dU.data()[i], 0.0);
  for (Eigen::Index i = 0; i < r.dW.size(); ++i) EXPECT_EQ(r.dW.data()[i], 0.0);
  for (Eigen::Index i = 0; i < r.db.size(); ++i) EXPECT_EQ(r.db(i), 0.0);
}

TEST(ReluLossGrad, MatchesFiniteDifferencesAwayFromKinks) {
  Rng rng = make_rng(5);
  std::normal_distribution<double> N;
  TwoLayerRelu net;
  net.U = Eigen::MatrixXd(2, 4);
  net.W = Eigen::MatrixXd(4, 3);
  net.b = Eigen::VectorXd(4);
  for (Eigen::Index i = 0; i < net.U.size(); ++i) net.U.data()[i] = N(rng);
  for (Eigen::Index i = 0; i < net.W.size(); ++i) net.W.data()[i] = N(rng);
  for (Eigen::Index i = 0; i < net.b.size(); ++i) net.b(i) = N(rng);
  Eigen::VectorXd x(3), y(2);
  for (Eigen::Index i = 0; i < 3; ++i) x(i) = N(rng);
  for (Eigen::Index i = 0; i < 2; ++i) y(i) = N(rng);
  const Eigen::VectorXd pre = net.W * x + net.b;
  for (Eigen::Index i = 0; i < pre.size(); ++i) ASSERT_GT(std::abs(pre(i)), 1e-3);

  const auto r = relu_loss_grad(net, x, y);
  auto check = [&](Eigen::MatrixXd TwoLayerRelu::*member, const Eigen::MatrixXd& g) {
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      TwoLayerRelu a = net, b = net;
      (a.*member).data()[i] += kH;
      (b.*member).data()[i] -= kH;
      const double fd = (relu_loss_grad(a, x, y).loss - relu_loss_grad(b, x, y).loss) / (2 * kH);
      EXPECT_LT(rel_err(g.data()[i], fd), 1e-6);
    }
  };
  check(&TwoLayerRelu::U, r.dU);
  check(&TwoLayerRelu::W, r.dW);
  for (Eigen::Index i = 0; i < net.b.size(); ++i) {
    TwoLayerRelu a = net, b = net;
    a.b(i) += kH;
    b.b(i) -= kH;
    const double fd = (relu_loss_grad(a, x, y).loss - relu_loss_grad(b, x, y).loss) / (2 * kH);
    EXPECT_LT(rel_err(r.db(i), fd), 1e-6);
  }
}

TEST(ReluLossGrad, InactiveNeuronsGiveZeroOutputGradient) {
  TwoLayerRelu net;
  net.U = Eigen::MatrixXd::Constant(1, 3, 0.5);
  net.W = Eigen::MatrixXd::Constant(3, 2, 1.0);
  net.b = Eigen::VectorXd::Constant(3, -5.0);
  Eigen::VectorXd x(2);
  x << 1.0, 1.0;
  const auto r = relu_loss_grad(net, x, Eigen::VectorXd::Constant(1, 2.0));
  EXPECT_DOUBLE_EQ(r.loss, 4.0);
  for (Eigen::Index i = 0; i < r.dU.size(); ++i) EXPECT_EQ(r.dU.data()[i], 0.0);
}

TEST(TanhLossGrad, DepthZeroAtZero) {
  TwoLayerTanh m;
  const auto r = tanh_loss_grad(m, 1, 0, 0);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grad.at(0), 0.0);
}

TEST(TanhLossGrad, DepthOneSaddle) {
  TwoLayerTanh m;
  const auto r = tanh_loss_grad(m, 0.8, 1.3, 1);
  EXPECT_EQ(r.grad.at(0), 0.0);
  EXPECT_EQ(r.grad.at(1), 0.0);
}

TEST(TanhLossGrad, MatchesFiniteDifferences) {
  Rng rng = make_rng(8);
  std::normal_distribution<double> N;
  for (int trial = 0; trial < 20; ++trial) {
    TwoLayerTanh m{N(rng), N(rng), N(rng)};
    const double x = N(rng), y = N(rng);
    const auto g0 = tanh_loss_grad(m, x, y, 0);
    TwoLayerTanh a = m, b = m;
    a.v += kH;
    b.v -= kH;
    EXPECT_LT(rel_err(g0.grad[0], (tanh_loss_grad(a, x, y, 0).loss - tanh_loss_grad(b, x, y, 0).loss) / (2 * kH)), 1e-6);

    const auto g1 = tanh_loss_grad(m, x, y, 1);
    a = m;
    b = m;
    a.u += kH;
    b.u -= kH;
    EXPECT_LT(rel_err(g1.grad[0], (tanh_loss_grad(a, x, y, 1).loss - tanh_loss_grad(b, x, y, 1).loss) / (2 * kH)), 1e-6);
    a = m;
    b = m;
    a.w += kH;
    b.w -= kH;
    EXPECT_LT(rel_err(g1.grad[1], (tanh_loss_grad(a, x, y, 1).loss - tanh_loss_grad(b, x, y, 1).loss) / (2 * kH)), 1e-6);
  }
}

TEST(TanhLossGrad, RejectsOtherDepths) {
  EXPECT_THROW(tanh_loss_grad(TwoLayerTanh{}, 1, 1, 2), ConfigError);
}
