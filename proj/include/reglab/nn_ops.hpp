#pragma once

#include <cmath>
#include <vector>

#include "reglab/autodiff.hpp"

namespace reglab::ad {

// 3x3 cross-correlation, zero padding, spatial extents preserved.
// input [H,W,Cin], kernels [3,3,Cin,Cout], bias [Cout] -> [H,W,Cout].
inline Var conv3x3(const Var& input, const Var& kernels, const Var& bias) {
  const Shape& is = input.shape();
  const Shape& ks = kernels.shape();
  if (is.size() != 3 || ks.size() != 4 || ks[0] != 3 || ks[1] != 3)
    throw shape_error("conv3x3 expects input [H,W,Cin] and kernels [3,3,Cin,Cout]");
  const int64_t h = is[0], w = is[1], cin = is[2], cout = ks[3];
  if (ks[2] != cin) throw shape_error("conv3x3 channel mismatch");
  if (bias.shape() != Shape{cout}) throw shape_error("conv3x3 bias shape mismatch");

  Tensor out({h, w, cout});
  const double* in = input.value().data();
  const double* kn = kernels.value().data();
  const double* bs = bias.value().data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double* op = out.data() + (y * w + x) * cout;
      for (int64_t co = 0; co < cout; ++co) op[co] = bs[co];
      for (int64_t dy = -1; dy <= 1; ++dy) {
        const int64_t yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int64_t dx = -1; dx <= 1; ++dx) {
          const int64_t xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          const double* ip = in + (yy * w + xx) * cin;
          const double* kp = kn + (((dy + 1) * 3 + (dx + 1)) * cin) * cout;
          for (int64_t ci = 0; ci < cin; ++ci) {
            const double v = ip[ci];
            const double* kc = kp + ci * cout;
            for (int64_t co = 0; co < cout; ++co) op[co] += v * kc[co];
          }
        }
      }
    }
  return make_op(std::move(out), {input, kernels, bias}, [h, w, cin, cout](Node& n) {
    Tensor& gi = n.parents[0]->grad;
    Tensor& gk = n.parents[1]->grad;
    Tensor& gb = n.parents[2]->grad;
    const double* in = n.parents[0]->value.data();
    const double* kn = n.parents[1]->value.data();
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const double* gp = n.grad.data() + (y * w + x) * cout;
        for (int64_t co = 0; co < cout; ++co) gb[co] += gp[co];
        for (int64_t dy = -1; dy <= 1; ++dy) {
          const int64_t yy = y + dy;
          if (yy < 0 || yy >= h) continue;
          for (int64_t dx = -1; dx <= 1; ++dx) {
            const int64_t xx = x + dx;
            if (xx < 0 || xx >= w) continue;
            const int64_t ibase = (yy * w + xx) * cin;
            const int64_t kbase = ((dy + 1) * 3 + (dx + 1)) * cin * cout;
            for (int64_t ci = 0; ci < cin; ++ci) {
              const double v = in[ibase + ci];
              double gsum = 0.0;
              for (int64_t co = 0; co < cout; ++co) {
                const double g = gp[co];
                gk[kbase + ci * cout + co] += v * g;
                gsum += kn[kbase + ci * cout + co] * g;
              }
              gi[ibase + ci] += gsum;
            }
          }
        }
      }
  });
}

// Non-overlapping 2x2 max pooling; ties go to the first index in row-major order.
inline Var maxpool2(const Var& input) {
  const Shape& is = input.shape();
  if (is.size() != 3) throw shape_error("maxpool2 expects [H,W,C]");
  const int64_t h = is[0], w = is[1], c = is[2];
  if (h % 2 != 0 || w % 2 != 0) throw shape_error("maxpool2 requires even spatial extents");
  const int64_t oh = h / 2, ow = w / 2;
  Tensor out({oh, ow, c});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(oh * ow * c));
  const double* in = input.value().data();
  for (int64_t y = 0; y < oh; ++y)
    for (int64_t x = 0; x < ow; ++x)
      for (int64_t ch = 0; ch < c; ++ch) {
        double best = -1e300;
        int64_t bi = 0;
        for (int64_t dy = 0; dy < 2; ++dy)
          for (int64_t dx = 0; dx < 2; ++dx) {
            const int64_t i = ((2 * y + dy) * w + (2 * x + dx)) * c + ch;
            if (in[i] > best) {
              best = in[i];
              bi = i;
            }
          }
        const int64_t o = (y * ow + x) * c + ch;
        out[o] = best;
        (*argmax)[static_cast<size_t>(o)] = bi;
      }
  return make_op(std::move(out), {input}, [argmax](Node& n) {
    for (int64_t o = 0; o < n.grad.numel(); ++o)
      n.parents[0]->grad[(*argmax)[static_cast<size_t>(o)]] += n.grad[o];
  });
}

// Factor-2 bilinear upsampling with center-aligned grids and replicated borders.
inline Var upsample2_linear(const Var& input) {
  const Shape& is = input.shape();
  if (is.size() != 3) throw shape_error("upsample2_linear expects [H,W,C]");
  const int64_t h = is[0], w = is[1], c = is[2];
  const int64_t oh = 2 * h, ow = 2 * w;
  Tensor out({oh, ow, c});
  const double* in = input.value().data();
  auto src = [](int64_t i) { return 0.5 * static_cast<double>(i) - 0.25; };
  for (int64_t y = 0; y < oh; ++y) {
    const double sy = src(y);
    int64_t y0 = static_cast<int64_t>(std::floor(sy));
    double fy = sy - static_cast<double>(y0);
    int64_t y0c = std::clamp<int64_t>(y0, 0, h - 1), y1c = std::clamp<int64_t>(y0 + 1, 0, h - 1);
    for (int64_t x = 0; x < ow; ++x) {
      const double sx = src(x);
      int64_t x0 = static_cast<int64_t>(std::floor(sx));
      double fx = sx - static_cast<double>(x0);
      int64_t x0c = std::clamp<int64_t>(x0, 0, w - 1), x1c = std::clamp<int64_t>(x0 + 1, 0, w - 1);
      for (int64_t ch = 0; ch < c; ++ch) {
        out[(y * ow + x) * c + ch] =
            (1 - fy) * ((1 - fx) * in[(y0c * w + x0c) * c + ch] + fx * in[(y0c * w + x1c) * c + ch]) +
            fy * ((1 - fx) * in[(y1c * w + x0c) * c + ch] + fx * in[(y1c * w + x1c) * c + ch]);
      }
    }
  }
  return make_op(std::move(out), {input}, [h, w, c, oh, ow](Node& n) {
    auto src = [](int64_t i) { return 0.5 * static_cast<double>(i) - 0.25; };
    Tensor& gi = n.parents[0]->grad;
    for (int64_t y = 0; y < oh; ++y) {
      const double sy = src(y);
      int64_t y0 = static_cast<int64_t>(std::floor(sy));
      double fy = sy - static_cast<double>(y0);
      int64_t y0c = std::clamp<int64_t>(y0, 0, h - 1), y1c = std::clamp<int64_t>(y0 + 1, 0, h - 1);
      for (int64_t x = 0; x < ow; ++x) {
        const double sx = src(x);
        int64_t x0 = static_cast<int64_t>(std::floor(sx));
        double fx = sx - static_cast<double>(x0);
        int64_t x0c = std::clamp<int64_t>(x0, 0, w - 1), x1c = std::clamp<int64_t>(x0 + 1, 0, w - 1);
        for (int64_t ch = 0; ch < c; ++ch) {
          const double g = n.grad[(y * ow + x) * c + ch];
          gi[(y0c * w + x0c) * c + ch] += (1 - fy) * (1 - fx) * g;
          gi[(y0c * w + x1c) * c + ch] += (1 - fy) * fx * g;
          gi[(y1c * w + x0c) * c + ch] += fy * (1 - fx) * g;
          gi[(y1c * w + x1c) * c + ch] += fy * fx * g;
        }
      }
    }
  });
}

// input [n] (or [1,n]) x weights [n,m] + bias [m] -> [m].
inline Var dense(const Var& input, const Var& weights, const Var& bias) {
  const int64_t n = input.value().numel();
  const Shape& ws = weights.shape();
  if (ws.size() != 2 || ws[0] != n) throw shape_error("dense dimension mismatch");
  const int64_t m = ws[1];
  if (bias.shape() != Shape{m}) throw shape_error("dense bias shape mismatch");
  Tensor out({m});
  for (int64_t j = 0; j < m; ++j) out[j] = bias.value()[j];
  for (int64_t i = 0; i < n; ++i) {
    const double v = input.value()[i];
    if (v == 0.0) continue;
    for (int64_t j = 0; j < m; ++j) out[j] += v * weights.value()[i * m + j];
  }
  return make_op(std::move(out), {input, weights, bias}, [n, m](Node& nd) {
    const Tensor& in = nd.parents[0]->value;
    const Tensor& wv = nd.parents[1]->value;
    for (int64_t j = 0; j < m; ++j) nd.parents[2]->grad[j] += nd.grad[j];
    for (int64_t i = 0; i < n; ++i) {
      double gi = 0.0;
      for (int64_t j = 0; j < m; ++j) {
        gi += wv[i * m + j] * nd.grad[j];
        nd.parents[1]->grad[i * m + j] += in[i] * nd.grad[j];
      }
      nd.parents[0]->grad[i] += gi;
    }
  });
}

// Integer shift with zero fill; linear op.
inline Var shift2d(const Var& input, int64_t dy, int64_t dx) {
  const Shape& is = input.shape();
  if (is.size() != 3) throw shape_error("shift2d expects [H,W,C]");
  const int64_t h = is[0], w = is[1], c = is[2];
  Tensor out(is, 0.0);
  for (int64_t y = 0; y < h; ++y) {
    const int64_t sy = y + dy;
    if (sy < 0 || sy >= h) continue;
    for (int64_t x = 0; x < w; ++x) {
      const int64_t sx = x + dx;
      if (sx < 0 || sx >= w) continue;
      for (int64_t ch = 0; ch < c; ++ch)
        out[(y * w + x) * c + ch] = input.value()[(sy * w + sx) * c + ch];
    }
  }
  return make_op(std::move(out), {input}, [h, w, c, dy, dx](Node& n) {
    for (int64_t y = 0; y < h; ++y) {
      const int64_t sy = y + dy;
      if (sy < 0 || sy >= h) continue;
      for (int64_t x = 0; x < w; ++x) {
        const int64_t sx = x + dx;
        if (sx < 0 || sx >= w) continue;
        for (int64_t ch = 0; ch < c; ++ch)
          n.parents[0]->grad[(sy * w + sx) * c + ch] += n.grad[(y * w + x) * c + ch];
      }
    }
  });
}

// Per-voxel channel max, broadcast back to all channels; gradient goes to the
// first argmax channel.
inline Var channel_max_bcast(const Var& input) {
  const Shape& is = input.shape();
  if (is.size() != 3) throw shape_error("channel_max_bcast expects [H,W,C]");
  const int64_t hw = is[0] * is[1], c = is[2];
  Tensor out(is);
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(hw));
  for (int64_t p = 0; p < hw; ++p) {
    double best = input.value()[p * c];
    int64_t bi = 0;
    for (int64_t ch = 1; ch < c; ++ch)
      if (input.value()[p * c + ch] > best) {
        best = input.value()[p * c + ch];
        bi = ch;
      }
    (*argmax)[static_cast<size_t>(p)] = bi;
    for (int64_t ch = 0; ch < c; ++ch) out[p * c + ch] = best;
  }
  return make_op(std::move(out), {input}, [hw, c, argmax](Node& n) {
    for (int64_t p = 0; p < hw; ++p) {
      double g = 0.0;
      for (int64_t ch = 0; ch < c; ++ch) g += n.grad[p * c + ch];
      n.parents[0]->grad[p * c + (*argmax)[static_cast<size_t>(p)]] += g;
    }
  });
}

// Mean of squared forward differences of u over spatial axes and components.
inline Var grad_sq_mean(const Var& u) {
  const Shape& s = u.shape();
  if (s.size() != 3) throw shape_error("grad_sq_mean expects [H,W,C]");
  const int64_t h = s[0], w = s[1], c = s[2];
  if (h < 2 || w < 2) throw shape_error("grad_sq_mean needs extents >= 2");
  const int64_t count = ((h - 1) * w + h * (w - 1)) * c;
  const double* d = u.value().data();
  double acc = 0.0;
  for (int64_t y = 0; y + 1 < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t ch = 0; ch < c; ++ch) {
        const double dd = d[((y + 1) * w + x) * c + ch] - d[(y * w + x) * c + ch];
        acc += dd * dd;
      }
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x + 1 < w; ++x)
      for (int64_t ch = 0; ch < c; ++ch) {
        const double dd = d[(y * w + x + 1) * c + ch] - d[(y * w + x) * c + ch];
        acc += dd * dd;
      }
  Tensor out = Tensor::scalar(acc / static_cast<double>(count));
  return make_op(std::move(out), {u}, [h, w, c, count](Node& n) {
    const double g = n.grad[0] * 2.0 / static_cast<double>(count);
    const Tensor& uv = n.parents[0]->value;
    Tensor& gu = n.parents[0]->grad;
    for (int64_t y = 0; y + 1 < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        for (int64_t ch = 0; ch < c; ++ch) {
          const int64_t a = (y * w + x) * c + ch, b = ((y + 1) * w + x) * c + ch;
          const double dd = uv[b] - uv[a];
          gu[b] += g * dd;
          gu[a] -= g * dd;
        }
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x + 1 < w; ++x)
        for (int64_t ch = 0; ch < c; ++ch) {
          const int64_t a = (y * w + x) * c + ch, b = (y * w + x + 1) * c + ch;
          const double dd = uv[b] - uv[a];
          gu[b] += g * dd;
          gu[a] -= g * dd;
        }
  });
}

}  // namespace reglab::ad
