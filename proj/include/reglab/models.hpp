#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "reglab/affine.hpp"
#include "reglab/autodiff.hpp"
#include "reglab/field.hpp"
#include "reglab/nn_ops.hpp"
#include "reglab/rng.hpp"
#include "reglab/warp_ops.hpp"
#include "reglab/wls.hpp"

namespace reglab::models {

using ad::Var;

// Named, ordered parameter collection. Order is insertion order and defines
// the flattened layout used by the hypernetwork and checkpoints.
struct ModelParams {
  std::vector<std::pair<std::string, Var>> items;

  void add(const std::string& name, Tensor t, bool requires_grad = true) {
    items.emplace_back(name, Var(std::move(t), requires_grad));
  }
  void add_var(const std::string& name, Var v) { items.emplace_back(name, std::move(v)); }

  Var& at(const std::string& name) {
    for (auto& [n, v] : items)
      if (n == name) return v;
    throw config_error("unknown parameter: " + name);
  }
  const Var& at(const std::string& name) const {
    for (auto& [n, v] : items)
      if (n == name) return v;
    throw config_error("unknown parameter: " + name);
  }
  bool has(const std::string& name) const {
    for (auto& [n, v] : items)
      if (n == name) return true;
    return false;
  }
  int64_t total_count() const {
    int64_t c = 0;
    for (auto& [n, v] : items) c += v.value().numel();
    return c;
  }
  std::vector<Var> vars() const {
    std::vector<Var> out;
    for (auto& [n, v] : items) out.push_back(v);
    return out;
  }
  void assert_finite() const {
    for (auto& [n, v] : items)
      for (int64_t i = 0; i < v.value().numel(); ++i)
        if (!std::isfinite(v.value()[i]))
          throw numeric_error("non-finite parameter: " + n, v.value()[i]);
  }
};

struct ArchConfig {
  int64_t height = 64, width = 64;  // training grid
  int det_width = 32, det_features = 16, det_levels = 3;
  int enc_cascades = 2, enc_levels = 3, enc_width = 16;
  bool enc_shared = true;
  int dec_upsamples = 2, dec_width = 16;  // resolution 1/2^(4-n)
  int unet_width = 16, unet_levels = 3;
  int hyper_hidden = 32, hyper_layers = 4;

  void validate() const {
    if (det_width < 1 || det_features < 1 || enc_cascades < 1 || dec_upsamples < 1 ||
        unet_width < 1 || hyper_hidden < 1)
      throw config_error("model widths and counts must be >= 1");
    if (enc_cascades > 16) throw config_error("encoder cascades bounded at 16");
    if (dec_upsamples > 4) throw config_error("decomposer upsamples bounded at 4");
  }
};

namespace detail {

inline Tensor he_conv(Rng& rng, int64_t cin, int64_t cout) {
  return rng.normal_tensor({3, 3, cin, cout}, 0.0, std::sqrt(2.0 / (9.0 * static_cast<double>(cin))));
}

inline Tensor he_dense(Rng& rng, int64_t n, int64_t m) {
  return rng.normal_tensor({n, m}, 0.0, std::sqrt(2.0 / static_cast<double>(n)));
}

inline Var conv_block(const Var& x, const ModelParams& p, const std::string& name,
                      double alpha = 0.2) {
  return ad::leaky_relu(ad::conv3x3(x, p.at(name + ".w"), p.at(name + ".b")), alpha);
}

inline double condition_number(const Tensor& m3) {
  Eigen::Matrix3d m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = m3[i * 3 + j];
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m);
  const double smin = svd.singularValues()(2);
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return svd.singularValues()(0) / smin;
}

// Closed-form WLS solve in the graph: X [P,3] rows (b_y, b_x, 1), y [P,2]
// rows a, w [P] nonnegative weights. Returns the homogeneous [3,3] transform
// mapping b -> a.
inline Var wls_solve_graph(const Var& X, const Var& y, const Var& w) {
  const int64_t p = X.shape()[0];
  if (X.shape() != Shape{p, 3} || y.shape() != Shape{p, 2} || w.shape() != Shape{p})
    throw shape_error("wls_solve_graph shape mismatch");
  Var wc = ad::reshape(w, {p, 1});
  Var w3 = ad::concat_last({wc, wc, wc});
  Var w2 = ad::concat_last({wc, wc});
  Var xt = ad::transpose2(X);
  Var m = ad::matmul(xt, ad::mul(w3, X));  // [3,3]
  if (!std::isfinite(condition_number(m.value())) || condition_number(m.value()) > 1e12)
    throw singular_fit_error("weighted normal matrix ill-conditioned",
                             condition_number(m.value()));
  Var rhs = ad::matmul(xt, ad::mul(w2, y));              // [3,2]
  Var sol = ad::matmul(ad::mat_inverse(m), rhs);         // [3,2] = B^T
  Var b = ad::transpose2(sol);                           // [2,3] = [A v]
  Var bottom = Var::constant(Tensor({3}, {0.0, 0.0, 1.0}));
  return ad::reshape(ad::concat_last({ad::reshape(b, {6}), bottom}), {3, 3});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Detector: shared convolutional encoder -> nonnegative feature maps ->
// barycentric WLS fit.

inline ModelParams init_detector(const ArchConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p;
  int64_t cin = 1;
  for (int l = 0; l < cfg.det_levels; ++l) {
    p.add("det.l" + std::to_string(l) + ".a.w", detail::he_conv(rng, cin, cfg.det_width));
    p.add("det.l" + std::to_string(l) + ".a.b", Tensor({cfg.det_width}, 0.0));
    p.add("det.l" + std::to_string(l) + ".b.w", detail::he_conv(rng, cfg.det_width, cfg.det_width));
    p.add("det.l" + std::to_string(l) + ".b.b", Tensor({cfg.det_width}, 0.0));
    cin = cfg.det_width;
  }
  p.add("det.out.w", detail::he_conv(rng, cfg.det_width, cfg.det_features));
  p.add("det.out.b", Tensor({cfg.det_features}, 0.0));
  return p;
}

// Nonnegative feature maps at 1/2^levels resolution, [h', w', k].
inline Var detector_features(const Var& image, const ModelParams& p, const ArchConfig& cfg) {
  if (image.shape().size() != 2) throw shape_error("detector expects a 2D image");
  Shape s3 = image.shape();
  s3.push_back(1);
  Var x = ad::reshape(image, s3);
  for (int l = 0; l < cfg.det_levels; ++l) {
    const std::string n = "det.l" + std::to_string(l);
    x = detail::conv_block(x, p, n + ".a");
    x = detail::conv_block(x, p, n + ".b");
    x = ad::maxpool2(x);
  }
  return ad::relu(ad::conv3x3(x, p.at("det.out.w"), p.at("det.out.b")));
}

struct MomentsGraph {
  Var power;  // [k]
  Var bary;   // [k,2] rows (y,x) in original-grid coordinates
};

// Channel barycenters and powers in the original coordinate frame; the
// feature grid is 2^levels coarser, and the centered-coordinate convention
// makes the frames align under an exact factor of 2^levels.
inline MomentsGraph channel_moments_graph(const Var& feats, int levels) {
  const Shape& s = feats.shape();
  if (s.size() != 3) throw shape_error("channel_moments_graph expects [H,W,C]");
  const int64_t h = s[0], w = s[1], k = s[2];
  const double scale = std::ldexp(1.0, levels);
  Tensor cy({h, w, k}), cx({h, w, k});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < k; ++c) {
        cy[(y * w + x) * k + c] = scale * centered_coord(y, h);
        cx[(y * w + x) * k + c] = scale * centered_coord(x, w);
      }
  MomentsGraph m;
  m.power = ad::reduce_sum_spatial(feats);
  Var by = ad::safe_div(ad::reduce_sum_spatial(ad::mul(feats, Var::constant(cy))), m.power);
  Var bx = ad::safe_div(ad::reduce_sum_spatial(ad::mul(feats, Var::constant(cx))), m.power);
  m.bary = ad::concat_last({ad::reshape(by, {k, 1}), ad::reshape(bx, {k, 1})});
  return m;
}

// In-graph Detector fit: T maps fixed -> moving (rows of X come from f).
inline Var detector_fit_graph(const Var& m, const Var& f, const ModelParams& p,
                              const ArchConfig& cfg) {
  if (m.shape() != f.shape()) throw shape_error("detector image dims mismatch");
  MomentsGraph mm = channel_moments_graph(detector_features(m, p, cfg), cfg.det_levels);
  MomentsGraph mf = channel_moments_graph(detector_features(f, p, cfg), cfg.det_levels);
  const int64_t k = cfg.det_features;
  Var wm = ad::safe_div(mm.power, ad::reduce_sum(mm.power));
  Var wf = ad::safe_div(mf.power, ad::reduce_sum(mf.power));
  Var w = ad::mul(wm, wf);
  Var ones = Var::constant(Tensor({k, 1}, 1.0));
  Var x = ad::concat_last({mf.bary, ones});
  return detail::wls_solve_graph(x, mm.bary, w);
}

inline AffineTransform detector_register(const Tensor& m, const Tensor& f,
                                         const ModelParams& p, const ArchConfig& cfg) {
  Var t = detector_fit_graph(Var::constant(m), Var::constant(f), p, cfg);
  return AffineTransform::from_tensor(t.value());
}

// ---------------------------------------------------------------------------
// Encoder cascade: per-stage conv + FC network emitting N(N+1) parameters,
// rescaled by learnable per-parameter weights, composed incrementally.

inline ModelParams init_encoder(const ArchConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p;
  int64_t h = cfg.height, w = cfg.width;
  const int stages = cfg.enc_shared ? 1 : cfg.enc_cascades;
  for (int s = 0; s < stages; ++s) {
    const std::string sn = cfg.enc_shared ? "enc" : "enc.s" + std::to_string(s);
    int64_t cin = 2;
    h = cfg.height;
    w = cfg.width;
    for (int l = 0; l < cfg.enc_levels; ++l) {
      p.add(sn + ".l" + std::to_string(l) + ".w", detail::he_conv(rng, cin, cfg.enc_width));
      p.add(sn + ".l" + std::to_string(l) + ".b", Tensor({cfg.enc_width}, 0.0));
      cin = cfg.enc_width;
      h /= 2;
      w /= 2;
    }
    const int64_t flat = h * w * cfg.enc_width;
    p.add(sn + ".fc.w", rng.normal_tensor({flat, 6}, 0.0, std::sqrt(1.0 / static_cast<double>(flat))));
    p.add(sn + ".fc.b", Tensor({6}, 0.0));
  }
  // translation/rotation weights 1, scale/shear weights 0.05
  p.add("enc.rescale", Tensor({6}, {1.0, 1.0, 1.0, 0.05, 0.05, 0.05}));
  return p;
}

// Raw 6-vector of one stage before rescaling; order (v1, v2, r, z1', z2', e).
inline Var encoder_stage_raw(const Var& moving, const Var& fixed, const ModelParams& p,
                             const ArchConfig& cfg, int stage) {
  const std::string sn = cfg.enc_shared ? "enc" : "enc.s" + std::to_string(stage);
  Shape s3{cfg.height, cfg.width, 1};
  Var x = ad::concat_last({ad::reshape(moving, s3), ad::reshape(fixed, s3)});
  for (int l = 0; l < cfg.enc_levels; ++l)
    x = ad::maxpool2(detail::conv_block(x, p, sn + ".l" + std::to_string(l)));
  x = ad::reshape(x, {x.value().numel()});
  return ad::dense(x, p.at(sn + ".fc.w"), p.at(sn + ".fc.b"));
}

// T_i = T_{i-1} * h_i with the moving image resampled from the original at
// every stage; zero network output yields the identity (scales offset by 1).
inline Var encoder_fit_graph(const Var& m, const Var& f, const ModelParams& p,
                             const ArchConfig& cfg) {
  if (m.shape() != Shape{cfg.height, cfg.width} || f.shape() != m.shape())
    throw shape_error("encoder image dims must match the configured training dims");
  const Tensor neutral_offset({6}, {0.0, 0.0, 0.0, 1.0, 1.0, 0.0});
  Var total = Var::constant(AffineTransform::identity(2).to_tensor());
  for (int s = 0; s < cfg.enc_cascades; ++s) {
    Var coords = ad::affine_coords2d(total, cfg.height, cfg.width);
    Var mi = ad::sample_at_coords(m, coords);
    Var raw = encoder_stage_raw(mi, f, p, cfg, s);
    Var params = ad::add(ad::mul(raw, p.at("enc.rescale")), Var::constant(neutral_offset));
    total = ad::matmul(total, ad::affine_build2d_ad(params));
  }
  return total;
}

inline AffineTransform encoder_register(const Tensor& m, const Tensor& f,
                                        const ModelParams& p, const ArchConfig& cfg) {
  Var t = encoder_fit_graph(Var::constant(m), Var::constant(f), p, cfg);
  return AffineTransform::from_tensor(t.value());
}

// ---------------------------------------------------------------------------
// Decomposer: fully convolutional net emits a dense coordinate field phi (no
// activation) and weights kappa (ReLU) at resolution 1/2^(4-n); a dense WLS
// fit decomposes the field into the output transform.

enum class FitMode { ols, wls };

inline int decomposer_pools(const ArchConfig& cfg) { return 4 - cfg.dec_upsamples; }

inline ModelParams init_decomposer(const ArchConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p;
  int64_t cin = 2;
  for (int l = 0; l < decomposer_pools(cfg); ++l) {
    p.add("dec.l" + std::to_string(l) + ".w", detail::he_conv(rng, cin, cfg.dec_width));
    p.add("dec.l" + std::to_string(l) + ".b", Tensor({cfg.dec_width}, 0.0));
    cin = cfg.dec_width;
  }
  p.add("dec.trunk.w", detail::he_conv(rng, cin, cfg.dec_width));
  p.add("dec.trunk.b", Tensor({cfg.dec_width}, 0.0));
  p.add("dec.phi.w", detail::he_conv(rng, cfg.dec_width, 2));
  p.add("dec.phi.b", Tensor({2}, 0.0));
  p.add("dec.kappa.w", detail::he_conv(rng, cfg.dec_width, 1));
  p.add("dec.kappa.b", Tensor({1}, 0.0));
  return p;
}

struct DecomposerHeads {
  Var phi;    // [h', w', 2] coordinate field in original units
  Var kappa;  // [h', w', 1] nonnegative weights
};

inline DecomposerHeads decomposer_heads(const Var& m, const Var& f, const ModelParams& p,
                                        const ArchConfig& cfg) {
  if (m.shape() != f.shape()) throw shape_error("decomposer image dims mismatch");
  Shape s3 = m.shape();
  s3.push_back(1);
  Var x = ad::concat_last({ad::reshape(m, s3), ad::reshape(f, s3)});
  for (int l = 0; l < decomposer_pools(cfg); ++l)
    x = ad::maxpool2(detail::conv_block(x, p, "dec.l" + std::to_string(l)));
  x = detail::conv_block(x, p, "dec.trunk");
  DecomposerHeads h;
  h.phi = ad::conv3x3(x, p.at("dec.phi.w"), p.at("dec.phi.b"));
  h.kappa = ad::relu(ad::conv3x3(x, p.at("dec.kappa.w"), p.at("dec.kappa.b")));
  return h;
}

// Fits T to the dense field: every reduced-grid voxel contributes the row
// (position -> phi value), weighted by kappa (WLS) or uniformly (OLS).
inline Var decompose_field_fit(const Var& phi, const Var& kappa, int pools, FitMode mode) {
  const Shape& s = phi.shape();
  if (s.size() != 3 || s[2] != 2) throw shape_error("decompose_field_fit expects phi [h,w,2]");
  const int64_t h = s[0], w = s[1], n = h * w;
  const double scale = std::ldexp(1.0, pools);
  Tensor x({n, 3});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t xc = 0; xc < w; ++xc) {
      const int64_t r = y * w + xc;
      x[r * 3 + 0] = scale * centered_coord(y, h);
      x[r * 3 + 1] = scale * centered_coord(xc, w);
      x[r * 3 + 2] = 1.0;
    }
  Var wv = mode == FitMode::wls ? ad::reshape(kappa, {n}) : Var::constant(Tensor({n}, 1.0));
  return detail::wls_solve_graph(Var::constant(x), ad::reshape(phi, {n, 2}), wv);
}

// In pretrain mode returns the field phi ⊙ kappa instead of a transform.
inline Var decomposer_pretrain_field(const DecomposerHeads& h) {
  return ad::mul(h.phi, ad::concat_last({h.kappa, h.kappa}));
}

inline Var decomposer_fit_graph(const Var& m, const Var& f, const ModelParams& p,
                                const ArchConfig& cfg, FitMode mode) {
  DecomposerHeads h = decomposer_heads(m, f, p, cfg);
  return decompose_field_fit(h.phi, h.kappa, decomposer_pools(cfg), mode);
}

inline AffineTransform decomposer_register(const Tensor& m, const Tensor& f,
                                           const ModelParams& p, const ArchConfig& cfg,
                                           FitMode mode) {
  Var t = decomposer_fit_graph(Var::constant(m), Var::constant(f), p, cfg, mode);
  return AffineTransform::from_tensor(t.value());
}

// ---------------------------------------------------------------------------
// SVF U-Net with explicit symmetrization v = 0.5 [g(m,f) - g(f,m)].

inline ModelParams init_unet(const ArchConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p;
  const int64_t w = cfg.unet_width;
  p.add("unet.e0.w", detail::he_conv(rng, 2, w));
  p.add("unet.e0.b", Tensor({w}, 0.0));
  p.add("unet.e1.w", detail::he_conv(rng, w, w));
  p.add("unet.e1.b", Tensor({w}, 0.0));
  p.add("unet.e2.w", detail::he_conv(rng, w, w));
  p.add("unet.e2.b", Tensor({w}, 0.0));
  p.add("unet.d1.w", detail::he_conv(rng, 2 * w, w));
  p.add("unet.d1.b", Tensor({w}, 0.0));
  p.add("unet.d0.w", detail::he_conv(rng, 2 * w, w));
  p.add("unet.d0.b", Tensor({w}, 0.0));
  p.add("unet.out.w", rng.normal_tensor({3, 3, w, 2}, 0.0, 1e-3));
  p.add("unet.out.b", Tensor({2}, 0.0));
  return p;
}

namespace detail {

inline Var unet_raw(const Var& moving, const Var& fixed, const ModelParams& p) {
  Shape s3 = moving.shape();
  s3.push_back(1);
  Var in = ad::concat_last({ad::reshape(moving, s3), ad::reshape(fixed, s3)});
  Var x0 = conv_block(in, p, "unet.e0");
  Var x1 = conv_block(ad::maxpool2(x0), p, "unet.e1");
  Var x2 = conv_block(ad::maxpool2(x1), p, "unet.e2");
  Var d1 = conv_block(ad::concat_last({ad::upsample2_linear(x2), x1}), p, "unet.d1");
  Var d0 = conv_block(ad::concat_last({ad::upsample2_linear(d1), x0}), p, "unet.d0");
  return ad::conv3x3(d0, p.at("unet.out.w"), p.at("unet.out.b"));
}

}  // namespace detail

// Symmetrized stationary velocity field; swapping inputs negates the output
// bit-exactly because a-b and b-a are exact IEEE negations.
inline Var svf_unet_graph(const Var& m, const Var& f, const ModelParams& p) {
  if (m.shape() != f.shape()) throw shape_error("svf_unet image dims mismatch");
  return ad::mul(ad::sub(detail::unet_raw(m, f, p), detail::unet_raw(f, m, p)), 0.5);
}

inline Field svf_unet(const Tensor& m, const Tensor& f, const ModelParams& p) {
  Field v = Field::zeros(m.shape(), FieldKind::velocity);
  v.grid = svf_unet_graph(Var::constant(m), Var::constant(f), p).value();
  return v;
}

// Differentiable scaling-and-squaring integration of a velocity variable.
inline Var integrate_svf_graph(const Var& v, int steps) {
  const Shape& s = v.shape();
  if (s.size() != 3 || s[2] != 2) throw shape_error("integrate_svf_graph expects [H,W,2]");
  Shape dims{s[0], s[1]};
  Var idc = Var::constant(field::identity_map(dims));
  Var u = ad::mul(v, std::ldexp(1.0, -steps));
  for (int i = 0; i < steps; ++i) u = ad::add(u, ad::sample_at_coords(u, ad::add(idc, u)));
  return u;
}

// ---------------------------------------------------------------------------
// Hypernetwork: lambda -> flattened U-Net weights, sliced per template entry.

inline ModelParams init_hyper(const ArchConfig& cfg, Rng& rng, const ModelParams& unet_template) {
  cfg.validate();
  ModelParams p;
  int64_t nin = 1;
  for (int l = 0; l < cfg.hyper_layers; ++l) {
    p.add("hyper.h" + std::to_string(l) + ".w", detail::he_dense(rng, nin, cfg.hyper_hidden));
    p.add("hyper.h" + std::to_string(l) + ".b", Tensor({cfg.hyper_hidden}, 0.0));
    nin = cfg.hyper_hidden;
  }
  // near-zero head so the early generated network is close to neutral
  p.add("hyper.out.w", rng.normal_tensor({nin, unet_template.total_count()}, 0.0, 1e-3));
  p.add("hyper.out.b", Tensor({unet_template.total_count()}, 0.0));
  return p;
}

inline ModelParams hypernet_graph(double lambda, const ModelParams& xi,
                                  const ModelParams& unet_template, const ArchConfig& cfg) {
  if (lambda < 0.0 || lambda > 1.0) throw domain_error("lambda must be in [0,1]");
  Var x = Var::constant(Tensor({1}, {lambda}));
  for (int l = 0; l < cfg.hyper_layers; ++l) {
    const std::string n = "hyper.h" + std::to_string(l);
    x = ad::relu(ad::dense(x, xi.at(n + ".w"), xi.at(n + ".b")));
  }
  Var flat = ad::dense(x, xi.at("hyper.out.w"), xi.at("hyper.out.b"));
  ModelParams eta;
  int64_t off = 0;
  for (auto& [name, v] : unet_template.items) {
    eta.add_var(name, ad::slice_flat(flat, off, v.shape()));
    off += v.value().numel();
  }
  return eta;
}

// ---------------------------------------------------------------------------
// Joint transform assembly.

enum class JointMode { midspace, moved };

struct JointResult {
  AffineTransform t;  // affine component
  Field phi;          // deformable displacement field
  Tensor psi;         // composite coordinate map
};

// Affine stage via the Detector, deformable stage via the hypernetwork-
// generated SVF U-Net. Midspace: psi(x) = T^1/2(phi(T^1/2 x)); moved:
// psi(x) = T(phi(x)). Each deformable input is resampled once.
inline JointResult joint_register(const Tensor& m, const Tensor& f, double lambda,
                                  const ModelParams& theta, const ModelParams& xi,
                                  const ModelParams& unet_template, const ArchConfig& cfg,
                                  JointMode mode, int steps = 10) {
  JointResult out;
  out.t = detector_register(m, f, theta, cfg);
  ModelParams eta = hypernet_graph(lambda, xi, unet_template, cfg);
  const int nd = 2;
  Tensor md, fd;
  AffineTransform pre = AffineTransform::identity(nd), post = AffineTransform::identity(nd);
  if (mode == JointMode::midspace) {
    AffineTransform th = affine::sqrt_transform(out.t);
    md = field::resample(m, nd, field::affine_map(th, m.shape()), Interp::linear);
    fd = field::resample(f, nd, field::affine_map(affine::invert(th), f.shape()), Interp::linear);
    pre = post = th;
  } else {
    md = field::resample(m, nd, field::affine_map(out.t, m.shape()), Interp::linear);
    fd = f;
    post = out.t;
  }
  Field v = svf_unet(md, fd, eta);
  out.phi = field::integrate_svf(v, steps);
  out.psi = field::compose_affine_warp(pre, out.phi, post);
  return out;
}

}  // namespace reglab::models
