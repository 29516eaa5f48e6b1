#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "sgdlab/common.hpp"
#include "sgdlab/dynamics.hpp"
#include "sgdlab/models.hpp"
#include "sgdlab/moments.hpp"

namespace sgdlab {

// C1 acts on the u side, C2 on the w side. For networks with one symmetry per
// hidden neuron the global matrices are block diagonal and the blocks are kept.
struct NoiseMatrices {
  Eigen::MatrixXd C1;
  Eigen::MatrixXd C2;
  std::vector<Eigen::MatrixXd> blocks1;
  std::vector<Eigen::MatrixXd> blocks2;
};

inline Eigen::MatrixXd block_diagonal(const std::vector<Eigen::MatrixXd>& blocks) {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.rows();
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
  Eigen::Index o = 0;
  for (const auto& b : blocks) {
    M.block(o, o, b.rows(), b.cols()) = b;
    o += b.rows();
  }
  return M;
}

// Checks l(lambda u, w / lambda) = l(u, w) on one sample for a random lambda.
inline void require_rescaling_symmetry(double l0, double l1) {
  if (std::abs(l0 - l1) > 1e-9 * std::max(1.0, std::abs(l0)))
    throw Error("no rescaling symmetry");
}

// Scalar two-layer linear model l = (u w x - y)^2; A = dl/d(uw) = 2x(vx - y).
inline NoiseMatrices estimate_noise_matrices(double u, double w, const SampleSet& data) {
  data.validate();
  if (data.size() == 0) throw ConfigError("empty dataset");
  {
    const double lam = 1.7, x = data.xs[0], y = data.ys[0];
    require_rescaling_symmetry(sqr(u * w * x - y), sqr((lam * u) * (w / lam) * x - y));
  }
  const double v = u * w;
  const double n = static_cast<double>(data.size());
  double mean = 0, m2 = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double a = 2.0 * data.xs[i] * (v * data.xs[i] - data.ys[i]);
    mean += a;
  }
  mean /= n;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double a = 2.0 * data.xs[i] * (v * data.xs[i] - data.ys[i]);
    m2 += sqr(a - mean);
  }
  NoiseMatrices nm;
  nm.C1 = Eigen::MatrixXd::Constant(1, 1, m2 / n);
  nm.C2 = nm.C1;
  nm.blocks1 = {nm.C1};
  nm.blocks2 = {nm.C2};
  return nm;
}

// u-side and w-side parameter vectors of a ReLU net, grouped neuron by neuron:
// u_i is column i of U, w_i is (row i of W, b_i).
inline Eigen::VectorXd relu_u_vector(const TwoLayerRelu& net) {
  return Eigen::Map<const Eigen::VectorXd>(net.U.data(), net.U.size());
}

inline Eigen::VectorXd relu_w_vector(const TwoLayerRelu& net) {
  const Eigen::Index h = net.W.rows(), d = net.W.cols();
  Eigen::VectorXd w(h * (d + 1));
  for (Eigen::Index i = 0; i < h; ++i) {
    w.segment(i * (d + 1), d) = net.W.row(i).transpose();
    w(i * (d + 1) + d) = net.b(i);
  }
  return w;
}

struct ReluNeuronStats {
  double p_active = 0;
  Eigen::MatrixXd C1;
  Eigen::MatrixXd C2;
};

// Per-neuron matrices from G_i = 2 1[w_i.x + b_i > 0] r x~^T with r = f(x) - y, x~ = (x, 1).
inline std::vector<ReluNeuronStats> relu_neuron_matrices(const TwoLayerRelu& net,
                                                         const ReluDataset& data) {
  net.check();
  const Eigen::Index n = data.X.rows();
  if (n == 0) throw ConfigError("empty dataset");
  if (data.X.cols() != net.W.cols() || data.Y.cols() != net.U.rows())
    throw ConfigError("relu dataset does not match network shape");
  {
    const double lam = 1.9;
    TwoLayerRelu s = net;
    s.U *= lam;
    s.W /= lam;
    s.b /= lam;
    const Eigen::VectorXd x = data.X.row(0).transpose(), y = data.Y.row(0).transpose();
    require_rescaling_symmetry(relu_loss_grad(net, x, y).loss, relu_loss_grad(s, x, y).loss);
  }
  const Eigen::Index din = data.X.cols();
  Eigen::MatrixXd Xt(n, din + 1);
  Xt.leftCols(din) = data.X;
  Xt.col(din).setOnes();
  const Eigen::MatrixXd pre = (data.X * net.W.transpose()).rowwise() + net.b.transpose();
  const Eigen::MatrixXd act = pre.cwiseMax(0.0);
  const Eigen::MatrixXd R = act * net.U.transpose() - data.Y;  // n x d_out
  const Eigen::VectorXd xnorm2 = Xt.rowwise().squaredNorm();
  const Eigen::VectorXd rnorm2 = R.rowwise().squaredNorm();
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<ReluNeuronStats> out(static_cast<std::size_t>(net.W.rows()));
  for (Eigen::Index i = 0; i < net.W.rows(); ++i) {
    Eigen::VectorXd a(n);
    for (Eigen::Index s = 0; s < n; ++s) a(s) = pre(s, i) > 0.0 ? 1.0 : 0.0;
    auto& st = out[static_cast<std::size_t>(i)];
    st.p_active = a.sum() * inv_n;
    const Eigen::MatrixXd EG = 2.0 * inv_n * (R.transpose() * a.asDiagonal() * Xt);  // d_out x (din+1)
    const Eigen::VectorXd w1 = a.cwiseProduct(xnorm2);
    const Eigen::VectorXd w2 = a.cwiseProduct(rnorm2);
    st.C1 = 4.0 * inv_n * (R.transpose() * w1.asDiagonal() * R) - EG * EG.transpose();
    st.C2 = 4.0 * inv_n * (Xt.transpose() * w2.asDiagonal() * Xt) - EG.transpose() * EG;
    st.C1 = 0.5 * (st.C1 + st.C1.transpose());
    st.C2 = 0.5 * (st.C2 + st.C2.transpose());
  }
  return out;
}

inline NoiseMatrices estimate_noise_matrices(const TwoLayerRelu& net, const ReluDataset& data) {
  NoiseMatrices nm;
  for (auto& st : relu_neuron_matrices(net, data)) {
    nm.blocks1.push_back(std::move(st.C1));
    nm.blocks2.push_back(std::move(st.C2));
  }
  nm.C1 = block_diagonal(nm.blocks1);
  nm.C2 = block_diagonal(nm.blocks2);
  return nm;
}

inline double balance_residual(const Eigen::VectorXd& u, const Eigen::VectorXd& w,
                               const NoiseMatrices& nm) {
  if (u.size() != nm.C1.rows() || w.size() != nm.C2.rows())
    throw ConfigError("balance_residual: dimension mismatch");
  return u.dot(nm.C1 * u) - w.dot(nm.C2 * w);
}

// Rescaling factor lambda that zeroes the charge drift at (lambda u, w / lambda).
// With a penalty gamma ||theta||^2 the charge loses 4 gamma (||u||^2 - ||w||^2) per unit time.
inline double lambda_star(const Eigen::VectorXd& u, const Eigen::VectorXd& w, const NoiseMatrices& nm,
                          double T, double gamma) {
  if (!(T > 0) && !(gamma > 0)) throw ConfigError("lambda_star: need T > 0 or gamma > 0");
  const double var_u = w.dot(nm.C2 * w);  // sum_i Var[dl/du_i]
  const double var_w = u.dot(nm.C1 * u);  // sum_j Var[dl/dw_j]
  const double num = T * var_u + 4.0 * gamma * w.squaredNorm();
  const double den = T * var_w + 4.0 * gamma * u.squaredNorm();
  if (num <= 0 && den <= 0) throw Error("degenerate: both noise traces vanish");
  if (den <= 0) return kInf;
  return std::pow(num / den, 0.25);
}

struct EigenRange {
  double min = 0;
  double max = 0;
};

inline EigenRange eigen_range(const Eigen::MatrixXd& M) {
  if (M.size() == 0) return {};
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

inline EigenRange eigen_range(const std::vector<Eigen::MatrixXd>& blocks, const Eigen::MatrixXd& full) {
  if (blocks.empty()) return eigen_range(full);
  EigenRange r{kInf, -kInf};
  for (const auto& b : blocks) {
    const auto e = eigen_range(b);
    r.min = std::min(r.min, e.min);
    r.max = std::max(r.max, e.max);
  }
  return r;
}

// Stationary bounds on ||u||^2 / ||w||^2 from the extreme eigenvalues.
inline std::pair<double, double> norm_ratio_bounds(const NoiseMatrices& nm) {
  const auto e1 = eigen_range(nm.blocks1, nm.C1);
  const auto e2 = eigen_range(nm.blocks2, nm.C2);
  const bool full1 = e1.max > 0 && e1.min > 1e-10 * e1.max;
  const bool full2 = e2.max > 0 && e2.min > 1e-10 * e2.max;
  if (!full1 || !full2) return {0.0, kInf};
  return {e2.min / e1.max, e2.max / e1.min};
}

// ||u||^2 / ||w||^2 and its eigenvalue bounds restricted to neurons active on more than
// min_p of the data. Dead neurons carry no noise on either side.
struct ActiveRatio {
  double ratio = kNaN, lo = 0, hi = kInf;
  std::size_t active = 0;
};

inline ActiveRatio active_norm_ratio(const TwoLayerRelu& net, const ReluDataset& data, double min_p = 0.0) {
  const auto stats = relu_neuron_matrices(net, data);
  ActiveRatio r;
  double nu = 0, nw = 0;
  EigenRange e1{kInf, -kInf}, e2{kInf, -kInf};
  for (std::size_t i = 0; i < stats.size(); ++i) {
    if (!(stats[i].p_active > min_p)) continue;
    ++r.active;
    const auto k = static_cast<Eigen::Index>(i);
    nu += net.U.col(k).squaredNorm();
    nw += net.W.row(k).squaredNorm() + sqr(net.b(k));
    const auto a = eigen_range(stats[i].C1), b = eigen_range(stats[i].C2);
    e1 = {std::min(e1.min, a.min), std::max(e1.max, a.max)};
    e2 = {std::min(e2.min, b.min), std::max(e2.max, b.max)};
  }
  if (r.active == 0) return r;
  r.ratio = nu / nw;
  if (e1.min > 1e-10 * e1.max && e2.min > 1e-10 * e2.max) {
    r.lo = e2.min / e1.max;
    r.hi = e2.max / e1.min;
  }
  return r;
}

struct NeuronRankReport {
  double p_active = 0;
  double min_eig_C1 = 0, max_eig_C1 = 0;
  double min_eig_C2 = 0, max_eig_C2 = 0;
  bool full_rank = false;  // both min eigenvalues above 1e-8 of their max
};

struct FullRankReport {
  std::vector<NeuronRankReport> neurons;
  bool noiseless = false;  // residual vanishes on every active sample
};

inline FullRankReport relu_full_rank_check(const TwoLayerRelu& net, const ReluDataset& data) {
  FullRankReport rep;
  const auto stats = relu_neuron_matrices(net, data);
  for (const auto& st : stats) {
    NeuronRankReport r;
    r.p_active = st.p_active;
    if (st.p_active > 0) {
      const auto e1 = eigen_range(st.C1), e2 = eigen_range(st.C2);
      r.min_eig_C1 = std::max(0.0, e1.min);
      r.max_eig_C1 = e1.max;
      r.min_eig_C2 = std::max(0.0, e2.min);
      r.max_eig_C2 = e2.max;
      r.full_rank = e1.max > 0 && e2.max > 0 && e1.min > 1e-8 * e1.max && e2.min > 1e-8 * e2.max;
    }
    rep.neurons.push_back(r);
  }
  const Eigen::MatrixXd pre = (data.X * net.W.transpose()).rowwise() + net.b.transpose();
  const Eigen::MatrixXd R = pre.cwiseMax(0.0) * net.U.transpose() - data.Y;
  rep.noiseless = R.cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, data.Y.cwiseAbs().maxCoeff());
  return rep;
}

struct BalanceReport {
  double lhs = 0;       // u^T C1 u
  double rhs = 0;       // w^T C2 w
  double residual = 0;  // lhs - rhs
  double charge = 0;    // ||u||^2 - ||w||^2
  double lambda_star = kNaN;
  std::pair<double, double> ratio_bounds{0.0, kInf};
};

inline BalanceReport balance_report(const Eigen::VectorXd& u, const Eigen::VectorXd& w,
                                    const NoiseMatrices& nm, double T, double gamma) {
  BalanceReport r;
  r.lhs = u.dot(nm.C1 * u);
  r.rhs = w.dot(nm.C2 * w);
  r.residual = r.lhs - r.rhs;
  r.charge = u.squaredNorm() - w.squaredNorm();
  try {
    r.lambda_star = lambda_star(u, w, nm, T, gamma);
  } catch (const Error&) {
    r.lambda_star = kNaN;
  }
  r.ratio_bounds = norm_ratio_bounds(nm);
  return r;
}

// Expected decay rate of u^2 - w^2 for the scalar two-layer linear model.
inline double charge_decay_rate(const MomentSummary& m, double v, double T, double gamma) {
  return 4.0 * (T * m.g(v) + gamma);
}

}  // namespace sgdlab
