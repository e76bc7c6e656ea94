#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "reglab/errors.hpp"
#include "reglab/rng.hpp"
#include "reglab/tensor.hpp"

namespace reglab {

// Translation/rotation/scale/shear parameters of a 2D (6 DOF) or 3D (12 DOF)
// affine transform. Rotations in degrees, right-hand rule; scales > 0.
struct AffineParams {
  int ndim = 2;
  std::vector<double> translations;  // N
  std::vector<double> rotations;     // 1 (2D) or 3 (3D), degrees
  std::vector<double> scales;        // N
  std::vector<double> shears;        // 1 (2D) or 3 (3D)

  static AffineParams neutral(int ndim) {
    AffineParams p;
    p.ndim = ndim;
    p.translations.assign(ndim, 0.0);
    p.rotations.assign(ndim == 2 ? 1 : 3, 0.0);
    p.scales.assign(ndim, 1.0);
    p.shears.assign(ndim == 2 ? 1 : 3, 0.0);
    return p;
  }
};

// Homogeneous (N+1)x(N+1) affine transform, bottom row (0..0 1).
class AffineTransform {
 public:
  AffineTransform() : m_(Eigen::Matrix3d::Identity()), ndim_(2) {}
  explicit AffineTransform(Eigen::MatrixXd m) : m_(std::move(m)) {
    ndim_ = static_cast<int>(m_.rows()) - 1;
    if (m_.rows() != m_.cols() || (ndim_ != 2 && ndim_ != 3))
      throw shape_error("affine matrix must be 3x3 or 4x4");
  }

  static AffineTransform identity(int ndim) {
    return AffineTransform(Eigen::MatrixXd::Identity(ndim + 1, ndim + 1));
  }

  int ndim() const { return ndim_; }
  const Eigen::MatrixXd& matrix() const { return m_; }
  Eigen::MatrixXd linear() const { return m_.topLeftCorner(ndim_, ndim_); }
  Eigen::VectorXd translation() const { return m_.topRightCorner(ndim_, 1); }

  Tensor to_tensor() const {
    const int64_t n = ndim_ + 1;
    Tensor t({n, n});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) t[i * n + j] = m_(i, j);
    return t;
  }

  static AffineTransform from_tensor(const Tensor& t) {
    if (t.ndim() != 2 || t.extent(0) != t.extent(1))
      throw shape_error("affine tensor must be square");
    const int64_t n = t.extent(0);
    Eigen::MatrixXd m(n, n);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) m(i, j) = t[i * n + j];
    return AffineTransform(std::move(m));
  }

  std::vector<double> apply_point(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != ndim_) throw shape_error("apply_point dim mismatch");
    std::vector<double> out(ndim_, 0.0);
    for (int i = 0; i < ndim_; ++i) {
      double s = m_(i, ndim_);
      for (int j = 0; j < ndim_; ++j) s += m_(i, j) * x[j];
      out[i] = s;
    }
    return out;
  }

 private:
  Eigen::MatrixXd m_;
  int ndim_;
};

namespace affine {

// Per-axis zero-centered coordinates: i - (d-1)/2.
inline std::vector<std::vector<double>> zero_centered_grid(const std::vector<int64_t>& dims) {
  std::vector<std::vector<double>> out;
  for (int64_t d : dims) {
    if (d < 1) throw shape_error("grid extent must be >= 1");
    std::vector<double> ax(static_cast<size_t>(d));
    for (int64_t i = 0; i < d; ++i) ax[static_cast<size_t>(i)] = centered_coord(i, d);
    out.push_back(std::move(ax));
  }
  return out;
}

inline AffineTransform build(const AffineParams& p) {
  const int n = p.ndim;
  if (n != 2 && n != 3) throw shape_error("build supports ndim 2 or 3");
  for (double z : p.scales)
    if (z <= 0.0) throw domain_error("affine scale must be strictly positive");
  const double deg = M_PI / 180.0;
  Eigen::MatrixXd V = Eigen::MatrixXd::Identity(n + 1, n + 1);
  for (int i = 0; i < n; ++i) V(i, n) = p.translations[static_cast<size_t>(i)];
  Eigen::MatrixXd Z = Eigen::MatrixXd::Identity(n + 1, n + 1);
  for (int i = 0; i < n; ++i) Z(i, i) = p.scales[static_cast<size_t>(i)];
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(n + 1, n + 1);
  Eigen::MatrixXd E = Eigen::MatrixXd::Identity(n + 1, n + 1);
  if (n == 2) {
    const double c = std::cos(p.rotations[0] * deg), s = std::sin(p.rotations[0] * deg);
    R(0, 0) = c;
    R(0, 1) = -s;
    R(1, 0) = s;
    R(1, 1) = c;
    E(0, 1) = p.shears[0];
  } else {
    auto rot = [&](int axis, double r) {
      Eigen::MatrixXd m = Eigen::MatrixXd::Identity(4, 4);
      const double c = std::cos(r * deg), s = std::sin(r * deg);
      const int a = (axis + 1) % 3, b = (axis + 2) % 3;
      // right-hand rotation about `axis`: rotates axis a toward axis b
      m(a, a) = c;
      m(a, b) = -s;
      m(b, a) = s;
      m(b, b) = c;
      return m;
    };
    R = rot(0, p.rotations[0]) * rot(1, p.rotations[1]) * rot(2, p.rotations[2]);
    E(0, 1) = p.shears[0];
    E(0, 2) = p.shears[1];
    E(1, 2) = p.shears[2];
  }
  return AffineTransform(V * R * Z * E);
}

inline AffineTransform compose(const AffineTransform& a, const AffineTransform& b) {
  if (a.ndim() != b.ndim()) throw shape_error("compose ndim mismatch");
  return AffineTransform(a.matrix() * b.matrix());
}

inline AffineTransform invert(const AffineTransform& t) {
  const Eigen::MatrixXd A = t.linear();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible()) throw numeric_error("singular affine transform");
  Eigen::MatrixXd Ai = lu.inverse();
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(t.ndim() + 1, t.ndim() + 1);
  m.topLeftCorner(t.ndim(), t.ndim()) = Ai;
  m.topRightCorner(t.ndim(), 1) = -Ai * t.translation();
  return AffineTransform(std::move(m));
}

// Principal square root via Denman-Beavers iteration on the homogeneous matrix.
inline AffineTransform sqrt_transform(const AffineTransform& t, double tol = 1e-14,
                                      int max_iter = 60) {
  Eigen::MatrixXd y = t.matrix();
  Eigen::MatrixXd z = Eigen::MatrixXd::Identity(y.rows(), y.cols());
  double delta = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::MatrixXd yn = 0.5 * (y + z.inverse());
    Eigen::MatrixXd zn = 0.5 * (z + y.inverse());
    delta = (yn - y).cwiseAbs().maxCoeff();
    y = yn;
    z = zn;
    if (delta < tol) return AffineTransform(std::move(y));
  }
  const double res = (y * y - t.matrix()).cwiseAbs().maxCoeff();
  if (res < 1e-10) return AffineTransform(std::move(y));
  throw numeric_error("matrix square root did not converge", res);
}

// Exact inverse of build under the VRZE ordering: QR of A with positive
// upper-triangular diagonal gives R and Z E.
inline AffineParams decompose(const AffineTransform& t) {
  const int n = t.ndim();
  const Eigen::MatrixXd A = t.linear();
  if (A.determinant() <= 0.0)
    throw domain_error("decompose requires det(A) > 0 (reflections unsupported)");
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  Eigen::MatrixXd Q = qr.householderQ();
  Eigen::MatrixXd U = Q.transpose() * A;
  for (int i = 0; i < n; ++i)
    if (U(i, i) < 0.0) {
      U.row(i) *= -1.0;
      Q.col(i) *= -1.0;
    }
  AffineParams p = AffineParams::neutral(n);
  for (int i = 0; i < n; ++i) p.translations[static_cast<size_t>(i)] = t.translation()(i);
  for (int i = 0; i < n; ++i) p.scales[static_cast<size_t>(i)] = U(i, i);
  const double rad = 180.0 / M_PI;
  if (n == 2) {
    p.rotations[0] = std::atan2(Q(1, 0), Q(0, 0)) * rad;
    p.shears[0] = U(0, 1) / U(0, 0);
  } else {
    // Q = R1 R2 R3 (intrinsic); entries derived from the product form.
    const double s2 = Q(0, 2);
    if (std::fabs(std::fabs(s2) - 1.0) < 1e-9)
      throw domain_error("degenerate angles: |r2| = 90 deg (gimbal lock)");
    p.rotations[1] = std::asin(s2) * rad;
    p.rotations[0] = std::atan2(-Q(1, 2), Q(2, 2)) * rad;
    p.rotations[2] = std::atan2(-Q(0, 1), Q(0, 0)) * rad;
    p.shears[0] = U(0, 1) / U(0, 0);
    p.shears[1] = U(0, 2) / U(0, 0);
    p.shears[2] = U(1, 2) / U(1, 1);
  }
  return p;
}

// Table-derived uniform sampling ranges, scaled by gamma about neutral values.
struct AffineRanges {
  double translation = 30.0;  // +- voxels
  double rotation = 45.0;     // +- degrees
  double scale = 0.10;        // 1 +- value
  double shear = 0.10;        // 0 +- value
};

inline AffineParams sample_params(const AffineRanges& r, double gamma, int ndim, Rng& rng) {
  if (gamma < 0.0) throw domain_error("gamma must be >= 0");
  AffineParams p = AffineParams::neutral(ndim);
  for (auto& v : p.translations) v = rng.uniform(-r.translation * gamma, r.translation * gamma);
  for (auto& v : p.rotations) v = rng.uniform(-r.rotation * gamma, r.rotation * gamma);
  for (auto& v : p.scales) v = 1.0 + rng.uniform(-r.scale * gamma, r.scale * gamma);
  for (auto& v : p.shears) v = rng.uniform(-r.shear * gamma, r.shear * gamma);
  return p;
}

// Text matrix format: one row per line, space-separated decimals.
inline void write_text(const AffineTransform& t, std::ostream& os) {
  const auto& m = t.matrix();
  os << std::setprecision(17);
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) os << (j ? " " : "") << m(i, j);
    os << "\n";
  }
}

inline void write_text_file(const AffineTransform& t, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw io_error("cannot open for writing: " + path);
  write_text(t, f);
}

inline AffineTransform read_text(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::vector<double> row;
    double v;
    while (ls >> v) row.push_back(v);
    if (!row.empty()) rows.push_back(std::move(row));
  }
  const size_t n = rows.size();
  if ((n != 3 && n != 4)) throw io_error("affine text file must have 3 or 4 rows");
  Eigen::MatrixXd m(n, n);
  for (size_t i = 0; i < n; ++i) {
    if (rows[i].size() != n) throw io_error("affine text row length mismatch");
    for (size_t j = 0; j < n; ++j) m(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
  }
  return AffineTransform(std::move(m));
}

inline AffineTransform read_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open for reading: " + path);
  return read_text(f);
}

}  // namespace affine
}  // namespace reglab
