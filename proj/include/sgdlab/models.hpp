#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <vector>

#include "sgdlab/common.hpp"

namespace sgdlab {

// Diagonal deep linear network: output v = sum_i prod_k u_i^(k), weights row-major width x (depth+1).
struct DiagonalNetwork {
  std::size_t width = 1;
  std::size_t depth = 0;
  std::vector<double> weights;

  DiagonalNetwork() : weights(1, 0.0) {}
  DiagonalNetwork(std::size_t w, std::size_t d, double fill = 0.0)
      : width(w), depth(d), weights(w * (d + 1), fill) {
    if (w < 1) throw ConfigError("diagonal network: width must be at least 1");
  }

  std::size_t layers() const { return depth + 1; }
  double& at(std::size_t i, std::size_t k) { return weights[i * layers() + k]; }
  double at(std::size_t i, std::size_t k) const { return weights[i * layers() + k]; }

  std::vector<double> subnet_products() const {
    std::vector<double> p(width, 1.0);
    for (std::size_t i = 0; i < width; ++i)
      for (std::size_t k = 0; k < layers(); ++k) p[i] *= at(i, k);
    return p;
  }

  double output() const {
    double v = 0;
    for (double p : subnet_products()) v += p;
    return v;
  }
};

inline double sum_squares(const std::vector<double>& w) {
  double s = 0;
  for (double x : w) s += x * x;
  return s;
}

inline double diag_loss(const DiagonalNetwork& net, double x, double y, double gamma) {
  const double r = net.output() * x - y;
  return r * r + gamma * sum_squares(net.weights);
}

// d v / d u_i^(k) for every entry, as products of the remaining factors (no division).
inline void diag_output_jacobian(const DiagonalNetwork& net, std::vector<double>& jac) {
  const std::size_t L = net.layers();
  jac.assign(net.weights.size(), 0.0);
  for (std::size_t i = 0; i < net.width; ++i) {
    double prefix = 1.0;
    for (std::size_t k = 0; k < L; ++k) {
      jac[i * L + k] = prefix;
      prefix *= net.at(i, k);
    }
    double suffix = 1.0;
    for (std::size_t k = L; k-- > 0;) {
      jac[i * L + k] *= suffix;
      suffix *= net.at(i, k);
    }
  }
}

inline std::vector<double> diag_grad(const DiagonalNetwork& net, double x, double y, double gamma) {
  std::vector<double> g;
  diag_output_jacobian(net, g);
  const double h = 2.0 * (net.output() * x - y) * x;
  for (std::size_t j = 0; j < g.size(); ++j) g[j] = h * g[j] + 2.0 * gamma * net.weights[j];
  return g;
}

// f(x) = sum_i u_i relu(w_i . x + b_i); U is d_out x h, W is h x d_in, b has h entries.
struct TwoLayerRelu {
  Eigen::MatrixXd U;
  Eigen::MatrixXd W;
  Eigen::VectorXd b;

  std::size_t hidden() const { return static_cast<std::size_t>(W.rows()); }
  std::size_t d_in() const { return static_cast<std::size_t>(W.cols()); }
  std::size_t d_out() const { return static_cast<std::size_t>(U.rows()); }

  void check() const {
    if (U.cols() != W.rows() || b.size() != W.rows())
      throw ConfigError("relu network: inconsistent shapes");
  }
};

struct ReluLossGrad {
  double loss = 0;
  Eigen::MatrixXd dU;
  Eigen::MatrixXd dW;
  Eigen::VectorXd db;
};

inline ReluLossGrad relu_loss_grad(const TwoLayerRelu& net, const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& y) {
  net.check();
  if (static_cast<std::size_t>(x.size()) != net.d_in() ||
      static_cast<std::size_t>(y.size()) != net.d_out())
    throw ConfigError("relu_loss_grad: dimension mismatch");
  const Eigen::VectorXd pre = net.W * x + net.b;
  const Eigen::VectorXd act = pre.cwiseMax(0.0);
  const Eigen::VectorXd r = net.U * act - y;
  ReluLossGrad out;
  out.loss = r.squaredNorm();
  out.dU = 2.0 * r * act.transpose();
  Eigen::VectorXd back = 2.0 * (net.U.transpose() * r);
  for (Eigen::Index i = 0; i < pre.size(); ++i)
    if (!(pre(i) > 0.0)) back(i) = 0.0;
  out.dW = back * x.transpose();
  out.db = back;
  return out;
}

// Depth 0: f = tanh(v x). Depth 1: f = w tanh(u x).
struct TwoLayerTanh {
  double u = 0;
  double w = 0;
  double v = 0;
};

struct TanhLossGrad {
  double loss = 0;
  std::vector<double> grad;  // {dv} at depth 0, {du, dw} at depth 1
};

inline TanhLossGrad tanh_loss_grad(const TwoLayerTanh& m, double x, double y, int depth) {
  TanhLossGrad out;
  if (depth == 0) {
    const double t = std::tanh(m.v * x);
    const double r = t - y;
    out.loss = r * r;
    out.grad = {2.0 * r * (1.0 - t * t) * x};
  } else if (depth == 1) {
    const double t = std::tanh(m.u * x);
    const double r = m.w * t - y;
    out.loss = r * r;
    out.grad = {2.0 * r * m.w * (1.0 - t * t) * x, 2.0 * r * t};
  } else {
    throw ConfigError("tanh model: depth must be 0 or 1");
  }
  return out;
}

}  // namespace sgdlab
