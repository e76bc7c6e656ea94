#include <cmath>

#include "doctest.h"
#include "fd_check.hpp"
#include "reglab/losses.hpp"
#include "reglab/metrics.hpp"

using namespace reglab;
using ad::Var;

namespace {

Tensor smooth_random_image(uint64_t seed, int64_t h, int64_t w, double fwhm = 4.0) {
  Rng rng(seed);
  Tensor t = field::gaussian_smooth(rng.normal_tensor({h, w}), 2, {fwhm, fwhm});
  const double lo = t.min(), hi = t.max();
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = (t[i] - lo) / (hi - lo);
  return t;
}

}  // namespace

TEST_CASE("soft dice of identical one-hots with populated channels is -1") {
  Tensor p({4, 4, 2}, 0.0);
  for (int64_t i = 0; i < 16; ++i) p[i * 2 + (i < 8 ? 0 : 1)] = 1.0;
  Var l = losses::soft_dice_loss(Var::constant(p), Var::constant(p));
  CHECK(l.value()[0] == doctest::Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("soft dice of disjoint supports is 0") {
  Tensor p({4, 4, 1}, 0.0), q({4, 4, 1}, 0.0);
  for (int64_t i = 0; i < 8; ++i) p[i] = 1.0;
  for (int64_t i = 8; i < 16; ++i) q[i] = 1.0;
  Var l = losses::soft_dice_loss(Var::constant(p), Var::constant(q));
  CHECK(l.value()[0] == doctest::Approx(0.0));
}

TEST_CASE("soft dice hand-derived partial overlap") {
  // |A| = 4, |B| = 2, B inside A: 2*2 / (4+2) = 2/3
  Tensor p({8, 1, 1}, 0.0), q({8, 1, 1}, 0.0);
  for (int64_t i = 0; i < 4; ++i) p[i] = 1.0;
  q[0] = q[1] = 1.0;
  Var l = losses::soft_dice_loss(Var::constant(p), Var::constant(q));
  CHECK(l.value()[0] == doctest::Approx(-2.0 / 3.0));
}

TEST_CASE("soft dice ignores channels with empty union") {
  Tensor p({4, 1, 2}, 0.0), q({4, 1, 2}, 0.0);
  p[0] = q[0] = 1.0;  // channel 0 overlaps fully, channel 1 empty in both
  Var l = losses::soft_dice_loss(Var::constant(p), Var::constant(q));
  CHECK(l.value()[0] == doctest::Approx(-0.5));  // (1 + 0) / 2
}

TEST_CASE("one-hot MSE basics") {
  Tensor p({3, 3, 2}, 0.0), q({3, 3, 2}, 0.0);
  for (int64_t i = 0; i < 9; ++i) {
    p[i * 2] = 1.0;      // every voxel label A
    q[i * 2 + 1] = 1.0;  // every voxel label B
  }
  CHECK(losses::onehot_mse_loss(Var::constant(p), Var::constant(p)).value()[0] == 0.0);
  // every voxel differs in both channels: mean of ones = 1 = 2/|J|
  CHECK(losses::onehot_mse_loss(Var::constant(p), Var::constant(q)).value()[0] ==
        doctest::Approx(1.0));
  CHECK(losses::onehot_mse_loss(Var::constant(p), Var::constant(q)).value()[0] ==
        losses::onehot_mse_loss(Var::constant(q), Var::constant(p)).value()[0]);
}

TEST_CASE("losses are invariant to channel permutation") {
  Rng rng(3);
  Tensor p = rng.normal_tensor({5, 5, 2}), q = rng.normal_tensor({5, 5, 2});
  for (int64_t i = 0; i < p.numel(); ++i) {
    p[i] = std::fabs(p[i]);
    q[i] = std::fabs(q[i]);
  }
  Tensor ps({5, 5, 2}), qs({5, 5, 2});
  for (int64_t i = 0; i < 25; ++i)
    for (int64_t c = 0; c < 2; ++c) {
      ps[i * 2 + c] = p[i * 2 + (1 - c)];
      qs[i * 2 + c] = q[i * 2 + (1 - c)];
    }
  CHECK(losses::soft_dice_loss(Var::constant(p), Var::constant(q)).value()[0] ==
        doctest::Approx(
            losses::soft_dice_loss(Var::constant(ps), Var::constant(qs)).value()[0]));
  CHECK(losses::onehot_mse_loss(Var::constant(p), Var::constant(q)).value()[0] ==
        doctest::Approx(
            losses::onehot_mse_loss(Var::constant(ps), Var::constant(qs)).value()[0]));
}

TEST_CASE("grad regularizer analytic values") {
  CHECK(losses::grad_regularizer(Var::constant(Tensor({5, 6, 2}, 3.7))).value()[0] == 0.0);

  const int64_t h = 5, w = 7;
  Tensor u({h, w, 1});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) u[y * w + x] = static_cast<double>(x);
  // x-differences are 1 (h*(w-1) terms), y-differences 0 ((h-1)*w terms)
  const double expect = static_cast<double>(h * (w - 1)) /
                        static_cast<double>((h - 1) * w + h * (w - 1));
  CHECK(losses::grad_regularizer(Var::constant(u)).value()[0] == doctest::Approx(expect));

  Tensor u3 = u;
  for (int64_t i = 0; i < u3.numel(); ++i) u3[i] *= 3.0;
  CHECK(losses::grad_regularizer(Var::constant(u3)).value()[0] ==
        doctest::Approx(9.0 * expect));
}

TEST_CASE("joint loss interpolates and validates lambda") {
  Var lo = Var::constant(Tensor::scalar(-0.8));
  Var lr = Var::constant(Tensor::scalar(0.2));
  CHECK(losses::joint_loss(0.0, lo, lr).value()[0] == doctest::Approx(-0.8));
  CHECK(losses::joint_loss(1.0, lo, lr).value()[0] == doctest::Approx(0.2));
  CHECK(losses::joint_loss(0.5, lo, lr).value()[0] == doctest::Approx(-0.3));
  CHECK_THROWS_AS(losses::joint_loss(1.2, lo, lr), domain_error);
  CHECK_THROWS_AS(losses::joint_loss(-0.1, lo, lr), domain_error);
}

TEST_CASE("loss gradients pass finite-difference checks") {
  Rng rng(7);
  Tensor p = rng.normal_tensor({4, 4, 2}), q = rng.normal_tensor({4, 4, 2});
  for (int64_t i = 0; i < p.numel(); ++i) {
    p[i] = 0.2 + 0.6 * std::fabs(std::fmod(p[i], 1.0));
    q[i] = 0.2 + 0.6 * std::fabs(std::fmod(q[i], 1.0));
  }
  CHECK(testutil::fd_max_rel_error({p, q}, [](const std::vector<Var>& v) {
          return losses::soft_dice_loss(v[0], v[1]);
        }) < 1e-5);
  CHECK(testutil::fd_max_rel_error({p, q}, [](const std::vector<Var>& v) {
          return losses::onehot_mse_loss(v[0], v[1]);
        }) < 1e-5);
  CHECK(testutil::fd_max_rel_error({rng.normal_tensor({4, 5, 2})},
                                   [](const std::vector<Var>& v) {
                                     return losses::grad_regularizer(v[0]);
                                   }) < 1e-5);
  CHECK(testutil::fd_max_rel_error({p, q}, [](const std::vector<Var>& v) {
          return losses::joint_loss(0.3, losses::onehot_mse_loss(v[0], v[1]),
                                    losses::grad_regularizer(v[0]));
        }) < 1e-5);
}

TEST_CASE("differentiable NCC values and gradient") {
  Tensor a = smooth_random_image(11, 8, 8);
  Tensor na = a;
  for (int64_t i = 0; i < na.numel(); ++i) na[i] = -na[i];
  CHECK(losses::ncc_var(Var::constant(a), Var::constant(a)).value()[0] ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(losses::ncc_var(Var::constant(a), Var::constant(na)).value()[0] ==
        doctest::Approx(-1.0).epsilon(1e-12));
  CHECK_THROWS_AS(losses::ncc_var(Var::constant(Tensor({4, 4}, 1.0)),
                                  Var::constant(Tensor({4, 4}, 2.0))),
                  degenerate_input_error);

  Tensor b = smooth_random_image(12, 8, 8);
  CHECK(testutil::fd_max_rel_error({a, b}, [](const std::vector<Var>& v) {
          return losses::ncc_loss(v[0], v[1]);
        }) < 1e-5);
}

TEST_CASE("MIND descriptor channel range and self distance") {
  Tensor a = smooth_random_image(13, 10, 10);
  Tensor d = losses::mind_descriptor(Var::constant(a)).value();
  REQUIRE(d.shape() == Shape({10, 10, 4}));
  for (int64_t p = 0; p < 100; ++p) {
    double mx = 0.0;
    for (int64_t c = 0; c < 4; ++c) {
      CHECK(d[p * 4 + c] > 0.0);
      CHECK(d[p * 4 + c] <= 1.0);
      mx = std::max(mx, d[p * 4 + c]);
    }
    CHECK(mx == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(losses::mind_mse_loss(Var::constant(a), Var::constant(a)).value()[0] == 0.0);
}

TEST_CASE("MIND gradient passes finite differences") {
  Tensor a = smooth_random_image(14, 6, 6);
  Tensor b = smooth_random_image(15, 6, 6);
  CHECK(testutil::fd_max_rel_error({a, b}, [](const std::vector<Var>& v) {
          return losses::mind_mse_loss(v[0], v[1]);
        }, 1e-6) < 1e-4);
}

TEST_CASE("MIND distance is nearly invariant to intensity inversion") {
  // Piecewise-constant phantom pair: image vs its slight translation.
  Rng gen(21);
  auto lm = synth::gen_phantom_labels(gen, {32, 32}, 2, 2);
  Tensor img(lm.grid.shape());
  std::map<int, double> means{{0, 0.1}, {1, 0.9}, {2, 0.5}, {3, 0.7}, {4, 0.3}};
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = means[static_cast<int>(lm.grid[i])];
  AffineParams p = AffineParams::neutral(2);
  p.translations = {1.0, 0.0};
  Tensor moved =
      field::resample(img, 2, field::affine_map(affine::build(p), img.shape()), Interp::nearest);
  Tensor inv = img;
  for (int64_t i = 0; i < inv.numel(); ++i) inv[i] = 1.0 - inv[i];

  Tensor mask(img.shape(), 1.0);
  const double m1 = metrics::mind_mse(img, moved, mask);
  const double m2 = metrics::mind_mse(inv, moved, mask);
  REQUIRE(m1 > 0.0);
  CHECK(std::fabs(m1 - m2) / m1 < 0.05);
}

TEST_CASE("hard dice counting") {
  LabelMap a, b;
  a.grid = Tensor({20, 20}, 0.0);
  b.grid = Tensor({20, 20}, 0.0);
  for (int64_t i = 0; i < 100; ++i) a.grid[i] = 1.0;
  for (int64_t i = 50; i < 150; ++i) b.grid[i] = 1.0;
  for (int64_t i = 200; i < 210; ++i) a.grid[i] = 2.0;
  for (int64_t i = 220; i < 230; ++i) b.grid[i] = 2.0;
  auto d = metrics::hard_dice(a, b, {1, 2, 9});
  CHECK(d.at(1) == doctest::Approx(0.5));  // 100/100 with 50 shared
  CHECK(d.at(2) == doctest::Approx(0.0));  // disjoint
  CHECK(d.count(9) == 0);                  // absent from both: excluded
  auto self = metrics::hard_dice(a, a, {1, 2});
  CHECK(self.at(1) == 1.0);
  CHECK(self.at(2) == 1.0);
  CHECK(metrics::dice_mean(d) == doctest::Approx(0.25));
}

TEST_CASE("metric NCC matches and is scale invariant") {
  Tensor a = smooth_random_image(31, 12, 12), b = smooth_random_image(32, 12, 12);
  Tensor mask(a.shape(), 1.0);
  const double v = metrics::ncc(a, b, mask);
  CHECK(v >= -1.0);
  CHECK(v <= 1.0);
  CHECK(metrics::ncc(a, a, mask) == doctest::Approx(1.0).epsilon(1e-12));
  Tensor a2 = a, b2 = b;
  for (int64_t i = 0; i < a.numel(); ++i) {
    a2[i] = 3.5 * a[i] + 0.7;
    b2[i] = 0.2 * b[i] - 1.1;
  }
  CHECK(std::fabs(metrics::ncc(a2, b2, mask) - v) < 1e-12);
  CHECK_THROWS_AS(metrics::ncc(a, b, Tensor(a.shape(), 0.0)), degenerate_input_error);
  CHECK_THROWS_AS(metrics::ncc(Tensor({4, 4}, 1.0), Tensor({4, 4}, 0.5), Tensor({4, 4}, 1.0)),
                  degenerate_input_error);
}

TEST_CASE("log-Jacobian spread analytic oracles") {
  const Shape dims{16, 16};
  Tensor mask(dims, 0.0);
  for (int64_t y = 4; y < 12; ++y)
    for (int64_t x = 4; x < 12; ++x) mask[y * 16 + x] = 1.0;

  Tensor id = field::identity_map(dims);
  CHECK(metrics::log_jacobian_spread(id, mask) == doctest::Approx(0.0));

  AffineParams p = AffineParams::neutral(2);
  p.scales = {1.3, 0.8};  // det = 1.04
  Tensor am = field::affine_map(affine::build(p), dims);
  CHECK(metrics::log_jacobian_spread(am, mask) ==
        doctest::Approx(std::fabs(std::log(1.3 * 0.8))).epsilon(1e-6));
}

TEST_CASE("folding fraction detects reflections and clears smooth integrals") {
  const Shape dims{16, 16};
  Tensor mask(dims, 1.0);
  Tensor id = field::identity_map(dims);
  CHECK(metrics::folding_fraction(id, mask) == 0.0);

  Tensor refl = id;
  for (int64_t p = 0; p < 256; ++p) refl[p * 2 + 1] = -id[p * 2 + 1];  // mirror x
  CHECK(metrics::folding_fraction(refl, mask) == 100.0);

  Rng rng(41);
  Field v = Field::zeros(dims);
  v.grid = field::gaussian_smooth(rng.normal_tensor(v.grid.shape(), 0.0, 3.0), 2, {8.0, 8.0});
  Field phi = field::integrate_svf(v, 10);
  CHECK(metrics::folding_fraction(field::warp_map(phi), mask) == 0.0);
}

TEST_CASE("inverse consistency oracles") {
  const Shape dims{24, 24};
  Tensor mask(dims, 0.0);
  for (int64_t y = 8; y < 16; ++y)
    for (int64_t x = 8; x < 16; ++x) mask[y * 24 + x] = 1.0;

  AffineParams p = AffineParams::neutral(2);
  p.rotations[0] = 9.0;
  p.translations = {0.8, -0.5};
  AffineTransform t = affine::build(p);
  Tensor t1 = field::affine_map(t, dims);
  Tensor t2 = field::affine_map(affine::invert(t), dims);
  CHECK(metrics::inverse_consistency(t1, t2, mask) < 1e-10);

  AffineParams tr = AffineParams::neutral(2);
  tr.translations = {2.0, 1.0};
  Tensor tm = field::affine_map(affine::build(tr), dims);
  CHECK(metrics::inverse_consistency(tm, tm, mask) ==
        doctest::Approx(2.0 * std::sqrt(5.0)).epsilon(1e-10));

  CHECK(metrics::symmetric_ic(t1, tm, mask) ==
        doctest::Approx(metrics::symmetric_ic(tm, t1, mask)));
}

TEST_CASE("metric report serializes with fixed field names") {
  metrics::MetricReport r;
  r.dice_mean = 0.75;
  r.dice_per_label = {{1, 0.7}, {2, 0.8}};
  r.ncc = 0.9;
  r.folding_pct = 0.0;
  nlohmann::json j = r;
  CHECK(j["dice_mean"] == 0.75);
  CHECK(j["dice_per_label"]["1"] == 0.7);
  CHECK(j["dice_per_label"]["2"] == 0.8);
  CHECK(j["ncc"] == 0.9);
  CHECK(j["folding_pct"] == 0.0);
  CHECK_FALSE(j.contains("mse_mind"));
}
