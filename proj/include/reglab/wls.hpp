#pragma once

#include <Eigen/Dense>
#include <vector>

#include "reglab/affine.hpp"
#include "reglab/errors.hpp"
#include "reglab/tensor.hpp"

namespace reglab {

// Weighted point set in zero-centered voxel coordinates.
struct PointCloud {
  std::vector<std::vector<double>> points;  // k x N
  std::vector<double> powers;               // k, >= 0

  size_t size() const { return points.size(); }
};

namespace wls {

// Per-channel barycenters and powers of non-negative feature maps.
// features shape: dims x k (channels trailing).
inline PointCloud channel_moments(const Tensor& features) {
  const int nd = static_cast<int>(features.ndim()) - 1;
  const int64_t k = features.shape().back();
  Shape dims(features.shape().begin(), features.shape().end() - 1);
  PointCloud pc;
  pc.points.assign(static_cast<size_t>(k), std::vector<double>(static_cast<size_t>(nd), 0.0));
  pc.powers.assign(static_cast<size_t>(k), 0.0);
  int64_t p = 0;
  for_each_index(dims, [&](const std::vector<int64_t>& idx) {
    for (int64_t ch = 0; ch < k; ++ch) {
      const double v = features[p * k + ch];
      if (v == 0.0) continue;
      pc.powers[static_cast<size_t>(ch)] += v;
      for (int a = 0; a < nd; ++a)
        pc.points[static_cast<size_t>(ch)][static_cast<size_t>(a)] +=
            v * centered_coord(idx[static_cast<size_t>(a)], dims[static_cast<size_t>(a)]);
    }
    ++p;
  });
  for (size_t ch = 0; ch < pc.powers.size(); ++ch) {
    if (pc.powers[ch] > 0.0)
      for (double& c : pc.points[ch]) c /= pc.powers[ch];
    else
      for (double& c : pc.points[ch]) c = 0.0;  // zero power: origin, weight 0
  }
  return pc;
}

// Normalized per-channel weights from both images' powers.
inline std::vector<double> channel_weights(const std::vector<double>& powers_m,
                                           const std::vector<double>& powers_f) {
  if (powers_m.size() != powers_f.size()) throw shape_error("channel_weights size mismatch");
  double sm = 0.0, sf = 0.0;
  for (double v : powers_m) sm += v;
  for (double v : powers_f) sf += v;
  if (sm <= 0.0 || sf <= 0.0)
    throw degenerate_input_error("all channel powers are zero on one side");
  std::vector<double> eps(powers_m.size());
  for (size_t i = 0; i < eps.size(); ++i) eps[i] = (powers_m[i] / sm) * (powers_f[i] / sf);
  return eps;
}

namespace detail {

// Solves the weighted LS system phi(x) ~ t (x 1)^T via SVD of sqrt(W) X,
// guarding the condition number. Rows of X are (b 1), rows of y are a.
inline AffineTransform solve(const Eigen::MatrixXd& X, const Eigen::MatrixXd& y,
                             const Eigen::VectorXd& w, int nd) {
  Eigen::VectorXd sw = w.cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd Xw = sw.asDiagonal() * X;
  Eigen::MatrixXd yw = sw.asDiagonal() * y;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Xw, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(svd.singularValues().size() - 1);
  if (smin <= 0.0 || smax / smin > 1e12)
    throw singular_fit_error("rank-deficient weighted point configuration",
                             smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity());
  Eigen::MatrixXd tT = svd.solve(yw);  // (nd+1) x nd
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(nd + 1, nd + 1);
  m.topLeftCorner(nd, nd) = tT.topRows(nd).transpose();
  m.topRightCorner(nd, 1) = tT.row(nd).transpose();
  return AffineTransform(std::move(m));
}

}  // namespace detail

// Closed-form WLS alignment of weighted point clouds. The returned transform
// maps fixed-space coordinates into moving space (resampling convention):
// a_i ~ T b_i with a from `moving`, b from `fixed`.
inline AffineTransform fit_wls_points(const PointCloud& moving, const PointCloud& fixed,
                                      const std::vector<double>& weights) {
  const size_t k = moving.size();
  if (fixed.size() != k || weights.size() != k) throw shape_error("point cloud size mismatch");
  const int nd = static_cast<int>(moving.points.empty() ? 0 : moving.points[0].size());
  if (static_cast<int64_t>(k) < nd + 1)
    throw singular_fit_error("need at least N+1 points for an affine fit");
  Eigen::MatrixXd X(k, nd + 1), y(k, nd);
  Eigen::VectorXd w(k);
  for (size_t i = 0; i < k; ++i) {
    for (int a = 0; a < nd; ++a) {
      X(static_cast<int>(i), a) = fixed.points[i][static_cast<size_t>(a)];
      y(static_cast<int>(i), a) = moving.points[i][static_cast<size_t>(a)];
    }
    X(static_cast<int>(i), nd) = 1.0;
    w(static_cast<int>(i)) = weights[i];
  }
  return detail::solve(X, y, w, nd);
}

// Dense variant: WLS fit of a coordinate field phi (dims x N, absolute target
// coordinates) against the voxel grid, weighted by kappa >= 0.
inline AffineTransform fit_wls_dense(const Tensor& phi, const Tensor& kappa) {
  const int nd = static_cast<int>(phi.ndim()) - 1;
  Shape dims(phi.shape().begin(), phi.shape().end() - 1);
  if (kappa.numel() != shape_numel(dims)) throw shape_error("kappa dims mismatch");
  double ksum = 0.0;
  for (int64_t i = 0; i < kappa.numel(); ++i) {
    if (kappa[i] < 0.0) throw domain_error("kappa must be >= 0", i);
    ksum += kappa[i];
  }
  if (ksum <= 0.0) throw singular_fit_error("kappa is identically zero");
  const int64_t n = shape_numel(dims);
  Eigen::MatrixXd X(n, nd + 1), y(n, nd);
  Eigen::VectorXd w(n);
  int64_t p = 0;
  for_each_index(dims, [&](const std::vector<int64_t>& idx) {
    for (int a = 0; a < nd; ++a) {
      X(p, a) = centered_coord(idx[static_cast<size_t>(a)], dims[static_cast<size_t>(a)]);
      y(p, a) = phi[p * nd + a];
    }
    X(p, nd) = 1.0;
    w(p) = kappa[p];
    ++p;
  });
  return detail::solve(X, y, w, nd);
}

// Full WLS fit with scaling and shear removed: decompose, reset z=1 e=0, rebuild.
inline AffineTransform fit_rigid_points(const PointCloud& moving, const PointCloud& fixed,
                                        const std::vector<double>& weights) {
  AffineParams p = affine::decompose(fit_wls_points(moving, fixed, weights));
  for (double& z : p.scales) z = 1.0;
  for (double& e : p.shears) e = 0.0;
  return affine::build(p);
}

// Eq-5-style objective value, used by oracles and spot checks.
inline double wls_objective(const PointCloud& moving, const PointCloud& fixed,
                            const std::vector<double>& weights, const AffineTransform& t) {
  double obj = 0.0;
  for (size_t i = 0; i < moving.size(); ++i) {
    const auto pred = t.apply_point(fixed.points[i]);
    double r2 = 0.0;
    for (size_t a = 0; a < pred.size(); ++a) {
      const double d = moving.points[i][a] - pred[a];
      r2 += d * d;
    }
    obj += weights[i] * r2;
  }
  return obj;
}

}  // namespace wls
}  // namespace reglab
