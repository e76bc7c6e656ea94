#pragma once

#include <cmath>
#include <vector>

#include "reglab/affine.hpp"
#include "reglab/errors.hpp"
#include "reglab/tensor.hpp"

namespace reglab {

enum class FieldKind { displacement, velocity };
enum class Interp { linear, nearest };

// Grid of N-vectors over an N-D domain; tensor shape is dims x N with the
// vector component as the trailing axis. Voxel units, zero-centered coords.
struct Field {
  Tensor grid;
  FieldKind kind = FieldKind::displacement;

  int nd() const { return static_cast<int>(grid.ndim()) - 1; }
  Shape dims() const { return Shape(grid.shape().begin(), grid.shape().end() - 1); }

  static Field zeros(const Shape& dims, FieldKind kind = FieldKind::displacement) {
    Shape s = dims;
    s.push_back(static_cast<int64_t>(dims.size()));
    return Field{Tensor(s), kind};
  }
};

namespace field {

// Coordinate map of the identity: out[x] = zero-centered coords of x.
inline Tensor identity_map(const Shape& dims) {
  const int nd = static_cast<int>(dims.size());
  Shape s = dims;
  s.push_back(nd);
  Tensor out(s);
  int64_t p = 0;
  for_each_index(dims, [&](const std::vector<int64_t>& idx) {
    for (int a = 0; a < nd; ++a)
      out[p * nd + a] = centered_coord(idx[static_cast<size_t>(a)], dims[static_cast<size_t>(a)]);
    ++p;
  });
  return out;
}

// Coordinate map of an affine transform over a grid.
inline Tensor affine_map(const AffineTransform& t, const Shape& dims) {
  const int nd = static_cast<int>(dims.size());
  if (t.ndim() != nd) throw shape_error("affine_map ndim mismatch");
  Tensor out = identity_map(dims);
  const auto& m = t.matrix();
  const int64_t n = shape_numel(dims);
  std::vector<double> x(static_cast<size_t>(nd));
  for (int64_t p = 0; p < n; ++p) {
    for (int a = 0; a < nd; ++a) x[static_cast<size_t>(a)] = out[p * nd + a];
    for (int a = 0; a < nd; ++a) {
      double s = m(a, nd);
      for (int b = 0; b < nd; ++b) s += m(a, b) * x[static_cast<size_t>(b)];
      out[p * nd + a] = s;
    }
  }
  return out;
}

// Multilinear or nearest sampling of `image` (rank nd, or nd+1 with trailing
// channels) at the absolute zero-centered coordinates in `coords`
// (shape out_dims x nd). Out-of-bounds reads return 0.
inline Tensor resample(const Tensor& image, int nd, const Tensor& coords, Interp mode) {
  if (image.ndim() != nd && image.ndim() != nd + 1)
    throw shape_error("resample image rank mismatch");
  if (coords.ndim() < 2 || coords.shape().back() != nd)
    throw shape_error("resample coords trailing axis must equal nd");
  const bool has_c = image.ndim() == nd + 1;
  const int64_t c = has_c ? image.shape().back() : 1;
  Shape idims(image.shape().begin(), image.shape().begin() + nd);
  Shape odims(coords.shape().begin(), coords.shape().end() - 1);
  Shape os = odims;
  if (has_c) os.push_back(c);
  Tensor out(os, 0.0);

  std::vector<int64_t> strides(static_cast<size_t>(nd));
  int64_t st = c;
  for (int a = nd - 1; a >= 0; --a) {
    strides[static_cast<size_t>(a)] = st;
    st *= idims[static_cast<size_t>(a)];
  }
  const int64_t npix = shape_numel(odims);
  std::vector<double> f(static_cast<size_t>(nd));
  std::vector<int64_t> base(static_cast<size_t>(nd));
  for (int64_t p = 0; p < npix; ++p) {
    bool oob = false;
    if (mode == Interp::nearest) {
      int64_t off = 0;
      for (int a = 0; a < nd; ++a) {
        const double ic = coords[p * nd + a] + 0.5 * static_cast<double>(idims[static_cast<size_t>(a)] - 1);
        const int64_t i = static_cast<int64_t>(std::floor(ic + 0.5));
        if (i < 0 || i >= idims[static_cast<size_t>(a)]) {
          oob = true;
          break;
        }
        off += i * strides[static_cast<size_t>(a)];
      }
      if (!oob)
        for (int64_t ch = 0; ch < c; ++ch) out[p * c + ch] = image[off + ch];
      continue;
    }
    for (int a = 0; a < nd; ++a) {
      const double ic = coords[p * nd + a] + 0.5 * static_cast<double>(idims[static_cast<size_t>(a)] - 1);
      const int64_t i0 = static_cast<int64_t>(std::floor(ic));
      base[static_cast<size_t>(a)] = i0;
      f[static_cast<size_t>(a)] = ic - static_cast<double>(i0);
    }
    const int corners = 1 << nd;
    for (int m = 0; m < corners; ++m) {
      double wgt = 1.0;
      int64_t off = 0;
      bool skip = false;
      for (int a = 0; a < nd; ++a) {
        const int bit = (m >> a) & 1;
        const int64_t i = base[static_cast<size_t>(a)] + bit;
        if (i < 0 || i >= idims[static_cast<size_t>(a)]) {
          skip = true;
          break;
        }
        wgt *= bit ? f[static_cast<size_t>(a)] : 1.0 - f[static_cast<size_t>(a)];
        off += i * strides[static_cast<size_t>(a)];
      }
      if (skip || wgt == 0.0) continue;
      for (int64_t ch = 0; ch < c; ++ch) out[p * c + ch] += wgt * image[off + ch];
    }
  }
  return out;
}

inline Tensor warp_map(const Field& u) {
  Tensor m = identity_map(u.dims());
  for (int64_t i = 0; i < m.numel(); ++i) m[i] += u.grid[i];
  return m;
}

// result(x) displaces x to outer(inner(x)); both warps are id + u.
inline Field compose_warps(const Field& outer, const Field& inner) {
  if (outer.grid.shape() != inner.grid.shape()) throw shape_error("compose_warps grid mismatch");
  const int nd = inner.nd();
  Tensor targets = warp_map(inner);
  Tensor outer_at = resample(outer.grid, nd, targets, Interp::linear);
  Field out = inner;
  for (int64_t i = 0; i < out.grid.numel(); ++i) out.grid[i] += outer_at[i];
  out.kind = FieldKind::displacement;
  return out;
}

// Displacement of phi = exp(v) by scaling and squaring.
inline Field integrate_svf(const Field& v, int steps = 10) {
  if (steps < 1) throw domain_error("integrate_svf needs steps >= 1");
  Field u = v;
  u.kind = FieldKind::displacement;
  const double scale = std::ldexp(1.0, -steps);
  for (int64_t i = 0; i < u.grid.numel(); ++i) u.grid[i] *= scale;
  for (int s = 0; s < steps; ++s) u = compose_warps(u, u);
  return u;
}

// Single coordinate map evaluating T_pre, then phi, then T_post per voxel.
inline Tensor compose_affine_warp(const AffineTransform& t_pre, const Field& phi,
                                  const AffineTransform& t_post) {
  const int nd = phi.nd();
  Tensor coords = affine_map(t_pre, phi.dims());
  Tensor u_at = resample(phi.grid, nd, coords, Interp::linear);
  for (int64_t i = 0; i < coords.numel(); ++i) coords[i] += u_at[i];
  const auto& m = t_post.matrix();
  const int64_t npix = coords.numel() / nd;
  std::vector<double> x(static_cast<size_t>(nd));
  for (int64_t p = 0; p < npix; ++p) {
    for (int a = 0; a < nd; ++a) x[static_cast<size_t>(a)] = coords[p * nd + a];
    for (int a = 0; a < nd; ++a) {
      double s = m(a, nd);
      for (int b = 0; b < nd; ++b) s += m(a, b) * x[static_cast<size_t>(b)];
      coords[p * nd + a] = s;
    }
  }
  return coords;
}

// Determinant of the map's spatial Jacobian per voxel; central differences in
// the interior, one-sided at boundaries. `coords` is a coordinate map dims x N.
inline Tensor jacobian_det_map(const Tensor& coords) {
  const int nd = static_cast<int>(coords.ndim()) - 1;
  Shape dims(coords.shape().begin(), coords.shape().end() - 1);
  for (int64_t d : dims)
    if (d < 3) throw shape_error("jacobian needs extents >= 3");
  Tensor out(dims);
  std::vector<int64_t> strides(static_cast<size_t>(nd));
  int64_t st = nd;
  for (int a = nd - 1; a >= 0; --a) {
    strides[static_cast<size_t>(a)] = st;
    st *= dims[static_cast<size_t>(a)];
  }
  int64_t p = 0;
  std::vector<std::vector<double>> J(static_cast<size_t>(nd), std::vector<double>(static_cast<size_t>(nd)));
  for_each_index(dims, [&](const std::vector<int64_t>& idx) {
    for (int a = 0; a < nd; ++a) {  // derivative along axis a
      const int64_t d = dims[static_cast<size_t>(a)];
      const int64_t i = idx[static_cast<size_t>(a)];
      int64_t plo, phi_;
      double h;
      if (i == 0) {
        plo = p * nd;
        phi_ = p * nd + strides[static_cast<size_t>(a)];
        h = 1.0;
      } else if (i == d - 1) {
        plo = p * nd - strides[static_cast<size_t>(a)];
        phi_ = p * nd;
        h = 1.0;
      } else {
        plo = p * nd - strides[static_cast<size_t>(a)];
        phi_ = p * nd + strides[static_cast<size_t>(a)];
        h = 2.0;
      }
      for (int comp = 0; comp < nd; ++comp)
        J[static_cast<size_t>(comp)][static_cast<size_t>(a)] =
            (coords[phi_ + comp] - coords[plo + comp]) / h;
    }
    double det;
    if (nd == 2) {
      det = J[0][0] * J[1][1] - J[0][1] * J[1][0];
    } else {
      det = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
            J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
            J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
    }
    out[p++] = det;
  });
  return out;
}

inline Tensor jacobian_det(const Field& phi) { return jacobian_det_map(warp_map(phi)); }

// Separable Gaussian smoothing over the first nd axes; sigma = fwhm/2.3548,
// kernel truncated at 3 sigma and renormalized to unit sum. fwhm 0 is identity.
inline Tensor gaussian_smooth(const Tensor& t, int nd, const std::vector<double>& fwhm) {
  if (static_cast<int>(fwhm.size()) != nd) throw shape_error("fwhm count mismatch");
  Tensor cur = t;
  const Shape& s = t.shape();
  for (int axis = 0; axis < nd; ++axis) {
    const double f = fwhm[static_cast<size_t>(axis)];
    if (f < 0.0) throw domain_error("fwhm must be >= 0");
    if (f == 0.0) continue;
    const double sigma = f / 2.3548200450309493;
    const int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
    if (radius < 1) continue;
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int64_t i = -radius; i <= radius; ++i) {
      const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
      k[static_cast<size_t>(i + radius)] = v;
      ksum += v;
    }
    for (double& v : k) v /= ksum;

    // replicate edges so constant inputs stay constant
    int64_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= s[static_cast<size_t>(a)];
    for (size_t a = static_cast<size_t>(axis) + 1; a < s.size(); ++a) inner *= s[a];
    const int64_t d = s[static_cast<size_t>(axis)];
    Tensor next(cur.shape());
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < d; ++i)
        for (int64_t in = 0; in < inner; ++in) {
          double acc = 0.0;
          for (int64_t ki = -radius; ki <= radius; ++ki) {
            const int64_t j = std::clamp<int64_t>(i + ki, 0, d - 1);
            acc += k[static_cast<size_t>(ki + radius)] * cur[(o * d + j) * inner + in];
          }
          next[(o * d + i) * inner + in] = acc;
        }
    cur = std::move(next);
  }
  return cur;
}

// Linear 1D resampling along one axis to a new extent (centers aligned).
inline Tensor resample_axis_linear(const Tensor& t, int axis, int64_t new_extent) {
  const Shape& s = t.shape();
  const int64_t d = s[static_cast<size_t>(axis)];
  if (new_extent == d) return t;
  int64_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= s[static_cast<size_t>(a)];
  for (size_t a = static_cast<size_t>(axis) + 1; a < s.size(); ++a) inner *= s[a];
  Shape os = s;
  os[static_cast<size_t>(axis)] = new_extent;
  Tensor out(os);
  const double scale = static_cast<double>(d) / static_cast<double>(new_extent);
  for (int64_t i = 0; i < new_extent; ++i) {
    // centers aligned under the scaling that maps the full axis span
    const double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    const int64_t i0 = static_cast<int64_t>(std::floor(src));
    const double f = src - static_cast<double>(i0);
    const int64_t a0 = std::clamp<int64_t>(i0, 0, d - 1);
    const int64_t a1 = std::clamp<int64_t>(i0 + 1, 0, d - 1);
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t in = 0; in < inner; ++in)
        out[(o * new_extent + i) * inner + in] = (1.0 - f) * t[(o * d + a0) * inner + in] +
                                                 f * t[(o * d + a1) * inner + in];
  }
  return out;
}

}  // namespace field
}  // namespace reglab
