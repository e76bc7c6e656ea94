#pragma once

#include <cmath>

#include "reglab/autodiff.hpp"

namespace reglab::ad {

// Constant grid of zero-centered voxel coordinates, shape [H,W,2].
inline Tensor identity_coords2d(int64_t h, int64_t w) {
  Tensor g({h, w, 2});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      g[(y * w + x) * 2 + 0] = centered_coord(y, h);
      g[(y * w + x) * 2 + 1] = centered_coord(x, w);
    }
  return g;
}

// Bilinear sampling of image at absolute zero-centered target coordinates.
// image [H,W] or [H,W,C]; coords [Ho,Wo,2]. Out-of-bounds reads are zero.
// Differentiable in both the image and the coordinates.
inline Var sample_at_coords(const Var& image, const Var& coords) {
  const Shape& is = image.shape();
  const Shape& cs = coords.shape();
  if ((is.size() != 2 && is.size() != 3) || cs.size() != 3 || cs[2] != 2)
    throw shape_error("sample_at_coords expects image [H,W(,C)] and coords [Ho,Wo,2]");
  const int64_t h = is[0], w = is[1];
  const int64_t c = is.size() == 3 ? is[2] : 1;
  const int64_t oh = cs[0], ow = cs[1];
  const double cy = 0.5 * static_cast<double>(h - 1);
  const double cx = 0.5 * static_cast<double>(w - 1);

  Shape os = is.size() == 3 ? Shape{oh, ow, c} : Shape{oh, ow};
  Tensor out(os, 0.0);
  const double* img = image.value().data();
  const double* cd = coords.value().data();
  for (int64_t p = 0; p < oh * ow; ++p) {
    const double iy = cd[p * 2 + 0] + cy;
    const double ix = cd[p * 2 + 1] + cx;
    const int64_t y0 = static_cast<int64_t>(std::floor(iy));
    const int64_t x0 = static_cast<int64_t>(std::floor(ix));
    const double fy = iy - static_cast<double>(y0);
    const double fx = ix - static_cast<double>(x0);
    for (int64_t dy = 0; dy < 2; ++dy) {
      const int64_t yy = y0 + dy;
      if (yy < 0 || yy >= h) continue;
      const double wy = dy ? fy : 1.0 - fy;
      for (int64_t dx = 0; dx < 2; ++dx) {
        const int64_t xx = x0 + dx;
        if (xx < 0 || xx >= w) continue;
        const double wgt = wy * (dx ? fx : 1.0 - fx);
        const double* ip = img + (yy * w + xx) * c;
        double* op = out.data() + p * c;
        for (int64_t ch = 0; ch < c; ++ch) op[ch] += wgt * ip[ch];
      }
    }
  }
  return make_op(std::move(out), {image, coords}, [h, w, c, oh, ow, cy, cx](Node& n) {
    const double* img = n.parents[0]->value.data();
    const double* cd = n.parents[1]->value.data();
    Tensor& gi = n.parents[0]->grad;
    Tensor& gc = n.parents[1]->grad;
    for (int64_t p = 0; p < oh * ow; ++p) {
      const double iy = cd[p * 2 + 0] + cy;
      const double ix = cd[p * 2 + 1] + cx;
      const int64_t y0 = static_cast<int64_t>(std::floor(iy));
      const int64_t x0 = static_cast<int64_t>(std::floor(ix));
      const double fy = iy - static_cast<double>(y0);
      const double fx = ix - static_cast<double>(x0);
      double d0 = 0.0, d1 = 0.0;  // accumulators for d out / d coord
      for (int64_t dy = 0; dy < 2; ++dy) {
        const int64_t yy = y0 + dy;
        if (yy < 0 || yy >= h) continue;
        const double wy = dy ? fy : 1.0 - fy;
        const double dwy = dy ? 1.0 : -1.0;
        for (int64_t dx = 0; dx < 2; ++dx) {
          const int64_t xx = x0 + dx;
          if (xx < 0 || xx >= w) continue;
          const double wx = dx ? fx : 1.0 - fx;
          const double dwx = dx ? 1.0 : -1.0;
          for (int64_t ch = 0; ch < c; ++ch) {
            const double g = n.grad[p * c + ch];
            if (g == 0.0) continue;
            const double v = img[(yy * w + xx) * c + ch];
            gi[(yy * w + xx) * c + ch] += g * wy * wx;
            d0 += g * v * dwy * wx;
            d1 += g * v * wy * dwx;
          }
        }
      }
      gc[p * 2 + 0] += d0;
      gc[p * 2 + 1] += d1;
    }
  });
}

// Coordinate field of an affine transform: out[y,x] = A (cy,cx)^T + v,
// with T a homogeneous [3,3] variable.
inline Var affine_coords2d(const Var& T, int64_t h, int64_t w) {
  if (T.shape() != Shape{3, 3}) throw shape_error("affine_coords2d expects T [3,3]");
  const Tensor& t = T.value();
  Tensor out({h, w, 2});
  for (int64_t y = 0; y < h; ++y) {
    const double c0 = centered_coord(y, h);
    for (int64_t x = 0; x < w; ++x) {
      const double c1 = centered_coord(x, w);
      out[(y * w + x) * 2 + 0] = t[0] * c0 + t[1] * c1 + t[2];
      out[(y * w + x) * 2 + 1] = t[3] * c0 + t[4] * c1 + t[5];
    }
  }
  return make_op(std::move(out), {T}, [h, w](Node& n) {
    Tensor& gt = n.parents[0]->grad;
    for (int64_t y = 0; y < h; ++y) {
      const double c0 = centered_coord(y, h);
      for (int64_t x = 0; x < w; ++x) {
        const double c1 = centered_coord(x, w);
        const double g0 = n.grad[(y * w + x) * 2 + 0];
        const double g1 = n.grad[(y * w + x) * 2 + 1];
        gt[0] += g0 * c0;
        gt[1] += g0 * c1;
        gt[2] += g0;
        gt[3] += g1 * c0;
        gt[4] += g1 * c1;
        gt[5] += g1;
      }
    }
  });
}

// Applies a constant homogeneous matrix to a [H,W,2] coordinate variable.
inline Var apply_affine_const(const Var& coords, const Tensor& T) {
  const Shape& cs = coords.shape();
  if (cs.size() != 3 || cs[2] != 2 || T.shape() != Shape{3, 3})
    throw shape_error("apply_affine_const expects coords [H,W,2] and T [3,3]");
  const int64_t n = cs[0] * cs[1];
  Tensor out(cs);
  for (int64_t p = 0; p < n; ++p) {
    const double c0 = coords.value()[p * 2 + 0], c1 = coords.value()[p * 2 + 1];
    out[p * 2 + 0] = T[0] * c0 + T[1] * c1 + T[2];
    out[p * 2 + 1] = T[3] * c0 + T[4] * c1 + T[5];
  }
  const double a00 = T[0], a01 = T[1], a10 = T[3], a11 = T[4];
  return make_op(std::move(out), {coords}, [n, a00, a01, a10, a11](Node& nd) {
    for (int64_t p = 0; p < n; ++p) {
      const double g0 = nd.grad[p * 2 + 0], g1 = nd.grad[p * 2 + 1];
      nd.parents[0]->grad[p * 2 + 0] += a00 * g0 + a10 * g1;
      nd.parents[0]->grad[p * 2 + 1] += a01 * g0 + a11 * g1;
    }
  });
}

// T = V R Z E from 2D parameters [v1, v2, r_deg, z1, z2, e], differentiable.
inline Var affine_build2d_ad(const Var& params) {
  if (params.value().numel() != 6) throw shape_error("affine_build2d_ad expects 6 parameters");
  auto p = [&](int64_t i) { return slice_flat(params, i, {1}); };
  Var v1 = p(0), v2 = p(1), z1 = p(3), z2 = p(4), e = p(5);
  Var rad = mul(p(2), M_PI / 180.0);
  Var c = cos_(rad), s = sin_(rad);
  // A = R (Z E) with ZE = [[z1, z1 e], [0, z2]]
  Var a00 = mul(c, z1);
  Var a01 = sub(mul(c, mul(z1, e)), mul(s, z2));
  Var a10 = mul(s, z1);
  Var a11 = add(mul(s, mul(z1, e)), mul(c, z2));
  Var zero = Var::constant(Tensor::scalar(0.0));
  Var one = Var::constant(Tensor::scalar(1.0));
  return reshape(concat_last({a00, a01, v1, a10, a11, v2, zero, zero, one}), {3, 3});
}

}  // namespace reglab::ad
