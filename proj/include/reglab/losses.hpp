#pragma once

#include "reglab/autodiff.hpp"
#include "reglab/nn_ops.hpp"

// Differentiable training losses. All functions build onto the caller's graph.
namespace reglab::losses {

using ad::Var;

// Ratio-of-sums soft Dice averaged over label channels, negated so lower is
// better; channels with empty union contribute 0.
inline Var soft_dice_loss(const Var& moved_onehot, const Var& fixed_onehot) {
  if (moved_onehot.shape() != fixed_onehot.shape())
    throw shape_error("soft_dice_loss shape mismatch");
  Var num = ad::mul(ad::reduce_sum_spatial(ad::mul(moved_onehot, fixed_onehot)), 2.0);
  Var den = ad::reduce_sum_spatial(ad::add(moved_onehot, fixed_onehot));
  return ad::neg(ad::reduce_mean(ad::safe_div(num, den)));
}

inline Var onehot_mse_loss(const Var& moved_onehot, const Var& fixed_onehot) {
  if (moved_onehot.shape() != fixed_onehot.shape())
    throw shape_error("onehot_mse_loss shape mismatch");
  Var d = ad::sub(moved_onehot, fixed_onehot);
  return ad::reduce_mean(ad::mul(d, d));
}

// Diffusion regularizer: mean squared forward-difference gradient of the
// displacement field [H,W,C].
inline Var grad_regularizer(const Var& u) { return ad::grad_sq_mean(u); }

inline Var joint_loss(double lambda, const Var& overlap, const Var& reg) {
  if (lambda < 0.0 || lambda > 1.0) throw domain_error("lambda must be in [0,1]");
  return ad::add(ad::mul(overlap, 1.0 - lambda), ad::mul(reg, lambda));
}

// Global zero-normalized cross-correlation of two same-shape images.
inline Var ncc_var(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw shape_error("ncc shape mismatch");
  Var za = ad::sub(a, ad::reduce_mean(a));
  Var zb = ad::sub(b, ad::reduce_mean(b));
  Var num = ad::reduce_sum(ad::mul(za, zb));
  Var den = ad::sqrt_(ad::mul(ad::reduce_sum(ad::mul(za, za)),
                              ad::reduce_sum(ad::mul(zb, zb))));
  if (den.value()[0] == 0.0) throw degenerate_input_error("ncc: zero image variance");
  return ad::div(num, den);
}

inline Var ncc_loss(const Var& a, const Var& b) { return ad::neg(ncc_var(a, b)); }

namespace detail {

inline Var box3_sum(const Var& x) {  // [H,W,1] -> 3x3 patch sums, zero padded
  return ad::conv3x3(x, Var::constant(Tensor({3, 3, 1, 1}, 1.0)),
                     Var::constant(Tensor({1}, 0.0)));
}

}  // namespace detail

// Modality-independent neighborhood descriptor: 4 self-similarity channels
// over the 2N-neighborhood, patch radius 1, max-normalized per voxel.
inline Var mind_descriptor(const Var& image) {
  if (image.shape().size() != 2) throw shape_error("mind_descriptor expects [H,W]");
  Shape s3 = image.shape();
  s3.push_back(1);
  Var img = ad::reshape(image, s3);
  const int64_t offs[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  std::vector<Var> dist;
  Var vsum;
  for (int r = 0; r < 4; ++r) {
    Var d = ad::sub(img, ad::shift2d(img, offs[r][0], offs[r][1]));
    Var dp = detail::box3_sum(ad::mul(d, d));
    dist.push_back(dp);
    vsum = r == 0 ? dp : ad::add(vsum, dp);
  }
  Var dcat = ad::concat_last(dist);                      // [H,W,4]
  Var v = ad::mul(vsum, 0.25);                           // local mean distance
  Var v4 = ad::concat_last({v, v, v, v});
  // additive variance floor of 1e-6 x (global mean distance) keeps the ratio
  // finite; the absolute term covers perfectly flat images
  Var vf = ad::add(ad::add(v4, ad::mul(ad::reduce_mean(dcat), 1e-6)), 1e-12);
  Var e = ad::exp_(ad::neg(ad::div(dcat, vf)));
  return ad::div(e, ad::channel_max_bcast(e));
}

inline Var mind_mse_loss(const Var& a, const Var& b) {
  Var d = ad::sub(mind_descriptor(a), mind_descriptor(b));
  return ad::reduce_mean(ad::mul(d, d));
}

}  // namespace reglab::losses
