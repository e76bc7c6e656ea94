#include <cmath>

#include "doctest.h"
#include "reglab/field.hpp"
#include "reglab/rng.hpp"

using namespace reglab;

namespace {

// Smooth random field with bounded magnitude.
Field random_smooth_field(Rng& rng, const Shape& dims, double max_mag, double fwhm = 8.0) {
  Field v = Field::zeros(dims, FieldKind::velocity);
  v.grid = rng.normal_tensor(v.grid.shape());
  v.grid = field::gaussian_smooth(v.grid, static_cast<int>(dims.size()),
                                  std::vector<double>(dims.size(), fwhm));
  double m = v.grid.max_abs();
  if (m > 0) v.grid *= max_mag / m;
  return v;
}

}  // namespace

TEST_CASE("resample identity leaves image unchanged") {
  Rng rng(31);
  Tensor img = rng.uniform_tensor({8, 9});
  Tensor out = field::resample(img, 2, field::identity_map({8, 9}), Interp::linear);
  for (int64_t i = 0; i < img.numel(); ++i) CHECK(out[i] == doctest::Approx(img[i]).epsilon(1e-14));
}

TEST_CASE("integer translation shifts a ramp with boundary zeros") {
  Tensor img({4, 4});
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 0; x < 4; ++x) img.at({y, x}) = static_cast<double>(y);
  AffineParams p = AffineParams::neutral(2);
  p.translations = {1.0, 0.0};  // sample source at y+1
  Tensor out = field::resample(img, 2, field::affine_map(affine::build(p), {4, 4}), Interp::linear);
  for (int64_t y = 0; y < 3; ++y)
    for (int64_t x = 0; x < 4; ++x) CHECK(out.at({y, x}) == doctest::Approx(y + 1.0));
  for (int64_t x = 0; x < 4; ++x) CHECK(out.at({3, x}) == 0.0);
}

TEST_CASE("linear resample exact on globally linear intensity under affine") {
  Rng rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor img({16, 16});
    const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1), c = rng.uniform(-1, 1);
    for (int64_t y = 0; y < 16; ++y)
      for (int64_t x = 0; x < 16; ++x)
        img.at({y, x}) = a * centered_coord(y, 16) + b * centered_coord(x, 16) + c;
    auto params = affine::sample_params(affine::AffineRanges{2.0, 20.0, 0.05, 0.05}, 1.0, 2, rng);
    auto t = affine::build(params);
    Tensor coords = field::affine_map(t, {16, 16});
    Tensor out = field::resample(img, 2, coords, Interp::linear);
    for (int64_t p = 0; p < 256; ++p) {
      const double cy = coords[p * 2 + 0], cx = coords[p * 2 + 1];
      if (std::fabs(cy) > 6.0 || std::fabs(cx) > 6.0) continue;  // interior only
      CHECK(std::fabs(out[p] - (a * cy + b * cx + c)) < 1e-12);
    }
  }
}

TEST_CASE("nearest resample returns existing labels only") {
  Tensor lab({6, 6});
  for (int64_t i = 0; i < 36; ++i) lab[i] = static_cast<double>(i % 3);
  AffineParams p = AffineParams::neutral(2);
  p.rotations[0] = 17.0;
  Tensor out = field::resample(lab, 2, field::affine_map(affine::build(p), {6, 6}), Interp::nearest);
  for (int64_t i = 0; i < 36; ++i) {
    const double v = out[i];
    CHECK((v == 0.0 || v == 1.0 || v == 2.0));
  }
}

TEST_CASE("integrate_svf of constant field is translation") {
  Field v = Field::zeros({48, 48}, FieldKind::velocity);
  for (int64_t p = 0; p < 48 * 48; ++p) {
    v.grid[p * 2 + 0] = 1.25;
    v.grid[p * 2 + 1] = -0.75;
  }
  Field u = field::integrate_svf(v, 10);
  // interior voxels; each squaring's interpolation reads one voxel further
  // out, so zero padding contaminates a rim of roughly steps + |u| voxels
  for (int64_t y = 16; y < 32; ++y)
    for (int64_t x = 16; x < 32; ++x) {
      CHECK(std::fabs(u.grid.at({y, x, 0}) - 1.25) < 1e-9);
      CHECK(std::fabs(u.grid.at({y, x, 1}) + 0.75) < 1e-9);
    }
}

TEST_CASE("integrate_svf of zero field is zero") {
  Field v = Field::zeros({8, 8}, FieldKind::velocity);
  Field u = field::integrate_svf(v, 10);
  CHECK(u.grid.max_abs() == 0.0);
}

TEST_CASE("integrate_svf inverse composition residual small") {
  Rng rng(33);
  Field v = random_smooth_field(rng, {32, 32}, 3.0);
  Field u = field::integrate_svf(v, 10);
  Field nv = v;
  nv.grid *= -1.0;
  Field ui = field::integrate_svf(nv, 10);
  Field comp = field::compose_warps(ui, u);
  // mean residual over interior (boundary reads outside the grid)
  double acc = 0.0;
  int64_t n = 0;
  for (int64_t y = 6; y < 26; ++y)
    for (int64_t x = 6; x < 26; ++x) {
      acc += std::hypot(comp.grid.at({y, x, 0}), comp.grid.at({y, x, 1}));
      ++n;
    }
  CHECK(acc / static_cast<double>(n) < 0.05);
}

TEST_CASE("doubling integration steps converges") {
  Rng rng(34);
  Field v = random_smooth_field(rng, {32, 32}, 3.0);
  Field u10 = field::integrate_svf(v, 10);
  Field u11 = field::integrate_svf(v, 11);
  double acc = 0.0;
  for (int64_t i = 0; i < u10.grid.numel(); ++i) acc += std::fabs(u10.grid[i] - u11.grid[i]);
  CHECK(acc / static_cast<double>(u10.grid.numel()) < 1e-3);
}

TEST_CASE("compose_warps: identity outer, translations, pointwise oracle") {
  Rng rng(35);
  Field inner = random_smooth_field(rng, {9, 9}, 1.0, 3.0);
  Field id = Field::zeros({9, 9});
  Field c = field::compose_warps(id, inner);
  for (int64_t i = 0; i < c.grid.numel(); ++i) CHECK(c.grid[i] == doctest::Approx(inner.grid[i]));

  // two pure translations add in the interior
  Field a = Field::zeros({12, 12}), b = Field::zeros({12, 12});
  for (int64_t p = 0; p < 144; ++p) {
    a.grid[p * 2] = 0.5;
    b.grid[p * 2 + 1] = -0.5;
  }
  Field ab = field::compose_warps(a, b);
  for (int64_t y = 3; y < 9; ++y)
    for (int64_t x = 3; x < 9; ++x) {
      CHECK(ab.grid.at({y, x, 0}) == doctest::Approx(0.5));
      CHECK(ab.grid.at({y, x, 1}) == doctest::Approx(-0.5));
    }

  // brute-force pointwise evaluation oracle on a 9x9 grid
  Field outer = random_smooth_field(rng, {9, 9}, 1.0, 3.0);
  Field comp = field::compose_warps(outer, inner);
  Tensor targets = field::warp_map(inner);
  for (int64_t p = 0; p < 81; ++p) {
    Tensor one_coord({1, 2}, {targets[p * 2], targets[p * 2 + 1]});
    Tensor s = field::resample(outer.grid, 2, one_coord, Interp::linear);
    CHECK(std::fabs(comp.grid[p * 2 + 0] - (inner.grid[p * 2 + 0] + s[0])) < 1e-12);
    CHECK(std::fabs(comp.grid[p * 2 + 1] - (inner.grid[p * 2 + 1] + s[1])) < 1e-12);
  }
}

TEST_CASE("compose_affine_warp: identities and two-pass oracle") {
  Rng rng(36);
  Field phi = random_smooth_field(rng, {16, 16}, 1.0);
  auto id = AffineTransform::identity(2);
  Tensor m = field::compose_affine_warp(id, phi, id);
  Tensor wm = field::warp_map(phi);
  for (int64_t i = 0; i < m.numel(); ++i) CHECK(m[i] == doctest::Approx(wm[i]).epsilon(1e-12));

  // zero phi reduces to the affine product
  Field zero = Field::zeros({16, 16});
  auto t1 = affine::build(affine::sample_params(affine::AffineRanges{1, 10, 0.02, 0.02}, 1, 2, rng));
  auto t2 = affine::build(affine::sample_params(affine::AffineRanges{1, 10, 0.02, 0.02}, 1, 2, rng));
  Tensor m2 = field::compose_affine_warp(t1, zero, t2);
  Tensor m3 = field::affine_map(affine::compose(t2, t1), {16, 16});
  for (int64_t i = 0; i < m2.numel(); ++i) CHECK(m2[i] == doctest::Approx(m3[i]).epsilon(1e-10));

  // one-interpolation map vs sequential resampling on a smooth image
  Tensor img({16, 16});
  for (int64_t y = 0; y < 16; ++y)
    for (int64_t x = 0; x < 16; ++x)
      img.at({y, x}) = 0.5 + 0.5 * std::sin(0.3 * y) * std::cos(0.4 * x);
  Tensor once = field::resample(img, 2, field::compose_affine_warp(t1, phi, t2), Interp::linear);
  // two-pass: first warp by t2, then by phi, then t1 (innermost applied last)
  Tensor step1 = field::resample(img, 2, field::affine_map(t2, {16, 16}), Interp::linear);
  Tensor step2 = field::resample(step1, 2, field::warp_map(phi), Interp::linear);
  Tensor twice = field::resample(step2, 2, field::affine_map(t1, {16, 16}), Interp::linear);
  double worst = 0.0;
  for (int64_t y = 4; y < 12; ++y)
    for (int64_t x = 4; x < 12; ++x)
      worst = std::max(worst, std::fabs(once.at({y, x}) - twice.at({y, x})));
  CHECK(worst < 0.02);
}

TEST_CASE("jacobian_det: identity, affine, uniform scale") {
  Field id = Field::zeros({8, 8});
  Tensor j = field::jacobian_det(id);
  for (int64_t i = 0; i < j.numel(); ++i) CHECK(j[i] == doctest::Approx(1.0));

  Rng rng(37);
  auto t = affine::build(affine::sample_params(affine::AffineRanges{}, 1.0, 2, rng));
  Tensor ja = field::jacobian_det_map(field::affine_map(t, {10, 10}));
  const double da = t.linear().determinant();
  for (int64_t y = 1; y < 9; ++y)
    for (int64_t x = 1; x < 9; ++x) CHECK(ja.at({y, x}) == doctest::Approx(da).epsilon(1e-9));

  AffineParams ps = AffineParams::neutral(2);
  ps.scales = {1.3, 1.3};
  Tensor js = field::jacobian_det_map(field::affine_map(affine::build(ps), {10, 10}));
  CHECK(js.at({5, 5}) == doctest::Approx(1.3 * 1.3));
}

TEST_CASE("gaussian_smooth: identity at fwhm 0, constants, unit kernel sum") {
  Rng rng(38);
  Tensor img = rng.uniform_tensor({12, 12});
  Tensor same = field::gaussian_smooth(img, 2, {0.0, 0.0});
  for (int64_t i = 0; i < img.numel(); ++i) CHECK(same[i] == img[i]);

  Tensor c({12, 12}, 2.5);
  Tensor sc = field::gaussian_smooth(c, 2, {4.0, 6.0});
  for (int64_t i = 0; i < sc.numel(); ++i) CHECK(sc[i] == doctest::Approx(2.5).epsilon(1e-12));

  // impulse response sums to 1
  Tensor imp({33, 33}, 0.0);
  imp.at({16, 16}) = 1.0;
  Tensor r = field::gaussian_smooth(imp, 2, {5.0, 5.0});
  CHECK(r.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("jacobian of integrated smooth field stays positive") {
  Rng rng(39);
  for (int trial = 0; trial < 5; ++trial) {
    Field v = random_smooth_field(rng, {24, 24}, 3.0);
    Tensor j = field::jacobian_det(field::integrate_svf(v, 10));
    for (int64_t i = 0; i < j.numel(); ++i) CHECK(j[i] > 0.0);
  }
}
