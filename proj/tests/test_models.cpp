#include <cmath>

#include "doctest.h"
#include "fd_check.hpp"
#include "reglab/models.hpp"
#include "reglab/synth.hpp"

using namespace reglab;
using ad::Var;
using models::ArchConfig;
using models::ModelParams;

namespace {

ArchConfig small_cfg() {
  ArchConfig c;
  c.height = c.width = 32;
  c.det_width = 8;
  c.det_features = 8;
  c.det_levels = 2;
  c.enc_width = 8;
  c.enc_levels = 3;
  c.enc_cascades = 2;
  c.dec_width = 8;
  c.dec_upsamples = 2;
  c.unet_width = 8;
  return c;
}

Tensor phantom_image(uint64_t seed, int64_t n = 32) {
  Rng gen(seed);
  auto lm = synth::gen_phantom_labels(gen, {n, n}, 3, 2);
  SynthConfig cfg = SynthConfig::neutral();
  auto img = synth::synth_image(lm, gen, cfg);
  return img.image;
}

void zero_params(ModelParams& p) {
  for (auto& [n, v] : p.items) v.value().fill(0.0);
}

}  // namespace

TEST_CASE("detector maps identical images to the identity") {
  ArchConfig cfg = small_cfg();
  Rng rng(1);
  ModelParams p = models::init_detector(cfg, rng);
  Tensor img = phantom_image(5);
  AffineTransform t = models::detector_register(img, img, p, cfg);
  Tensor id = AffineTransform::identity(2).to_tensor();
  Tensor tt = t.to_tensor();
  for (int64_t i = 0; i < 9; ++i) CHECK(std::fabs(tt[i] - id[i]) < 1e-9);
}

TEST_CASE("detector in-graph fit matches the point-cloud WLS oracle") {
  ArchConfig cfg = small_cfg();
  Rng rng(2);
  ModelParams p = models::init_detector(cfg, rng);
  Tensor m = phantom_image(6), f = phantom_image(7);

  Var tg = models::detector_fit_graph(Var::constant(m), Var::constant(f), p, cfg);

  Tensor fm = models::detector_features(Var::constant(m), p, cfg).value();
  Tensor ff = models::detector_features(Var::constant(f), p, cfg).value();
  PointCloud cm = wls::channel_moments(fm);
  PointCloud cf = wls::channel_moments(ff);
  const double sc = std::ldexp(1.0, cfg.det_levels);
  for (auto& pt : cm.points)
    for (double& c : pt) c *= sc;
  for (auto& pt : cf.points)
    for (double& c : pt) c *= sc;
  auto w = wls::channel_weights(cm.powers, cf.powers);
  AffineTransform oracle = wls::fit_wls_points(cm, cf, w);
  Tensor ot = oracle.to_tensor();
  for (int64_t i = 0; i < 9; ++i) CHECK(tg.value()[i] == doctest::Approx(ot[i]).epsilon(1e-9));
}

TEST_CASE("untrained detector never returns silent garbage") {
  ArchConfig cfg = small_cfg();
  Tensor m = phantom_image(8), f = phantom_image(9);
  int ok = 0, flagged = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    ModelParams p = models::init_detector(cfg, rng);
    try {
      AffineTransform t = models::detector_register(m, f, p, cfg);
      Tensor tt = t.to_tensor();
      for (int64_t i = 0; i < 9; ++i) REQUIRE(std::isfinite(tt[i]));
      const double det = tt[0] * tt[4] - tt[1] * tt[3];
      REQUIRE(det != 0.0);
      ++ok;
    } catch (const singular_fit_error&) {
      ++flagged;
    }
  }
  CHECK(ok + flagged == 100);
  CHECK(ok > 0);
}

TEST_CASE("detector fit gradient passes finite differences") {
  ArchConfig cfg = small_cfg();
  cfg.height = cfg.width = 16;
  cfg.det_width = 4;
  cfg.det_features = 4;
  cfg.det_levels = 2;
  Rng rng(3);
  ModelParams base = models::init_detector(cfg, rng);
  base.at("det.out.b").value().fill(0.05);  // keep feature maps off the ReLU kink
  Rng ir(44);
  Tensor m = field::gaussian_smooth(ir.normal_tensor({16, 16}), 2, {4.0, 4.0});
  Tensor f = field::gaussian_smooth(ir.normal_tensor({16, 16}), 2, {4.0, 4.0});

  std::vector<std::string> probe{"det.out.w", "det.l0.a.b"};
  std::vector<Tensor> leaves;
  for (auto& n : probe) leaves.push_back(base.at(n).value());
  const double err = testutil::fd_max_rel_error(
      leaves,
      [&](const std::vector<Var>& v) {
        ModelParams p;
        for (auto& [name, var] : base.items) {
          bool probed = false;
          for (size_t i = 0; i < probe.size(); ++i)
            if (name == probe[i]) {
              p.add_var(name, v[i]);
              probed = true;
            }
          if (!probed) p.add_var(name, Var::constant(var.value()));
        }
        Var t = models::detector_fit_graph(Var::constant(m), Var::constant(f), p, cfg);
        return ad::reduce_mean(ad::mul(t, t));
      },
      1e-6);
  CHECK(err < 1e-5);
}

TEST_CASE("encoder with zero FC output is the identity") {
  ArchConfig cfg = small_cfg();
  Rng rng(4);
  ModelParams p = models::init_encoder(cfg, rng);
  p.at("enc.fc.w").value().fill(0.0);
  p.at("enc.fc.b").value().fill(0.0);
  Tensor m = phantom_image(12), f = phantom_image(13);
  Tensor t = models::encoder_register(m, f, p, cfg).to_tensor();
  Tensor id = AffineTransform::identity(2).to_tensor();
  for (int64_t i = 0; i < 9; ++i) CHECK(t[i] == id[i]);
}

TEST_CASE("two-cascade encoder equals the explicit stage composition") {
  ArchConfig cfg = small_cfg();
  REQUIRE(cfg.enc_cascades == 2);
  Rng rng(5);
  ModelParams p = models::init_encoder(cfg, rng);
  Tensor m = phantom_image(14), f = phantom_image(15);
  Tensor total = models::encoder_register(m, f, p, cfg).to_tensor();

  const Tensor offset({6}, {0.0, 0.0, 0.0, 1.0, 1.0, 0.0});
  auto stage_mat = [&](const Tensor& moving) {
    Var raw = models::encoder_stage_raw(Var::constant(moving), Var::constant(f), p, cfg, 0);
    Var pr = ad::add(ad::mul(raw, Var::constant(p.at("enc.rescale").value())),
                     Var::constant(offset));
    return ad::affine_build2d_ad(pr).value();
  };
  Tensor t1 = stage_mat(m);
  AffineTransform a1 = AffineTransform::from_tensor(t1);
  Tensor m1 = field::resample(m, 2, field::affine_map(a1, m.shape()), Interp::linear);
  Tensor t2 = stage_mat(m1);
  AffineTransform expect = affine::compose(a1, AffineTransform::from_tensor(t2));
  Tensor et = expect.to_tensor();
  for (int64_t i = 0; i < 9; ++i) CHECK(total[i] == doctest::Approx(et[i]).epsilon(1e-12));
}

TEST_CASE("rescaling weights shrink scale and shear gradients by 0.05 at step zero") {
  ArchConfig cfg = small_cfg();
  Tensor m = phantom_image(16), f = phantom_image(17);

  auto fc_bias_grad = [&](const Tensor& rescale) {
    Rng rng(6);
    ModelParams p = models::init_encoder(cfg, rng);
    p.at("enc.fc.w").value().fill(0.0);
    p.at("enc.fc.b").value().fill(0.0);  // neutral forward in both runs
    p.at("enc.rescale") = Var(rescale, false);
    Var t = models::encoder_fit_graph(Var::constant(m), Var::constant(f), p, cfg);
    ad::backward(ad::reduce_mean(ad::mul(t, t)));
    return p.at("enc.fc.b").grad();
  };
  Tensor g_init = fc_bias_grad(Tensor({6}, {1.0, 1.0, 1.0, 0.05, 0.05, 0.05}));
  Tensor g_ones = fc_bias_grad(Tensor({6}, 1.0));
  for (int64_t j = 0; j < 3; ++j)
    CHECK(g_init[j] == doctest::Approx(g_ones[j]).epsilon(1e-12));
  for (int64_t j = 3; j < 6; ++j)
    CHECK(g_init[j] == doctest::Approx(0.05 * g_ones[j]).epsilon(1e-12));
}

TEST_CASE("decomposer field fit recovers an injected affine exactly") {
  const int pools = 2;
  const int64_t h = 8, w = 8;
  AffineParams ap = AffineParams::neutral(2);
  ap.rotations[0] = 12.0;
  ap.translations = {1.5, -0.8};
  ap.scales = {1.05, 0.97};
  ap.shears = {0.03};
  AffineTransform a = affine::build(ap);
  const Tensor at = a.to_tensor();

  const double sc = std::ldexp(1.0, pools);
  Tensor phi({h, w, 2});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double cy = sc * centered_coord(y, h), cx = sc * centered_coord(x, w);
      phi[(y * w + x) * 2 + 0] = at[0] * cy + at[1] * cx + at[2];
      phi[(y * w + x) * 2 + 1] = at[3] * cy + at[4] * cx + at[5];
    }
  Var fit = models::decompose_field_fit(Var::constant(phi),
                                        Var::constant(Tensor({h, w, 1}, 1.0)), pools,
                                        models::FitMode::wls);
  for (int64_t i = 0; i < 9; ++i) CHECK(fit.value()[i] == doctest::Approx(at[i]).epsilon(1e-9));

  SUBCASE("kappa masks out distractor-region noise exactly") {
    Tensor noisy = phi;
    Tensor kappa({h, w, 1}, 1.0);
    Rng rng(7);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        if (x >= w / 2) {
          kappa[y * w + x] = 0.0;
          noisy[(y * w + x) * 2 + 0] += 10.0 * rng.normal();
          noisy[(y * w + x) * 2 + 1] += 10.0 * rng.normal();
        }
    Var masked = models::decompose_field_fit(Var::constant(noisy), Var::constant(kappa),
                                             pools, models::FitMode::wls);
    for (int64_t i = 0; i < 9; ++i)
      CHECK(masked.value()[i] == doctest::Approx(at[i]).epsilon(1e-9));
    // OLS on the same noisy field does not
    Var ols = models::decompose_field_fit(Var::constant(noisy), Var::constant(kappa), pools,
                                          models::FitMode::ols);
    double diff = 0.0;
    for (int64_t i = 0; i < 9; ++i) diff = std::max(diff, std::fabs(ols.value()[i] - at[i]));
    CHECK(diff > 1e-3);
  }
}

TEST_CASE("decomposer pretrain field is zero when kappa is zero") {
  ArchConfig cfg = small_cfg();
  Rng rng(8);
  ModelParams p = models::init_decomposer(cfg, rng);
  p.at("dec.kappa.w").value().fill(0.0);
  p.at("dec.kappa.b").value().fill(0.0);
  Tensor m = phantom_image(18), f = phantom_image(19);
  auto heads = models::decomposer_heads(Var::constant(m), Var::constant(f), p, cfg);
  Var field = models::decomposer_pretrain_field(heads);
  CHECK(field.value().max_abs() == 0.0);
}

TEST_CASE("decomposer register returns a finite transform on random params") {
  ArchConfig cfg = small_cfg();
  Rng rng(9);
  ModelParams p = models::init_decomposer(cfg, rng);
  Tensor m = phantom_image(20), f = phantom_image(21);
  try {
    Tensor t = models::decomposer_register(m, f, p, cfg, models::FitMode::wls).to_tensor();
    for (int64_t i = 0; i < 9; ++i) CHECK(std::isfinite(t[i]));
  } catch (const singular_fit_error&) {
    // acceptable on untrained weights
  }
}

TEST_CASE("SVF U-Net is antisymmetric bit-exactly") {
  ArchConfig cfg = small_cfg();
  Rng rng(10);
  ModelParams p = models::init_unet(cfg, rng);
  for (auto& [n, v] : p.items)
    if (n == "unet.out.w") v.value() = rng.normal_tensor(v.shape(), 0.0, 0.1);
  Tensor m = phantom_image(22), f = phantom_image(23);

  Tensor v1 = models::svf_unet(m, f, p).grid;
  Tensor v2 = models::svf_unet(f, m, p).grid;
  CHECK(v1.max_abs() > 0.0);
  for (int64_t i = 0; i < v1.numel(); ++i) CHECK(v1[i] == -v2[i]);

  Tensor v0 = models::svf_unet(m, m, p).grid;
  CHECK(v0.max_abs() == 0.0);
}

TEST_CASE("graph SVF integration matches the plain integrator") {
  Rng rng(11);
  Field v = Field::zeros({16, 16}, FieldKind::velocity);
  v.grid = field::gaussian_smooth(rng.normal_tensor(v.grid.shape(), 0.0, 1.5), 2, {6.0, 6.0});
  Tensor plain = field::integrate_svf(v, 10).grid;
  Tensor graph = models::integrate_svf_graph(Var::constant(v.grid), 10).value();
  for (int64_t i = 0; i < plain.numel(); ++i)
    CHECK(graph[i] == doctest::Approx(plain[i]).epsilon(1e-12));
}

TEST_CASE("overlap loss gradient through SVF integration passes finite differences") {
  Rng rng(12);
  const int64_t n = 12;
  Tensor v0 = field::gaussian_smooth(rng.normal_tensor({n, n, 2}, 0.0, 1.0), 2, {5.0, 5.0});
  Tensor img = field::gaussian_smooth(rng.normal_tensor({n, n}), 2, {4.0, 4.0});
  Tensor target = field::gaussian_smooth(rng.normal_tensor({n, n}), 2, {4.0, 4.0});
  Tensor idc = field::identity_map({n, n});

  const double err = testutil::fd_max_rel_error(
      {v0},
      [&](const std::vector<Var>& vars) {
        Var u = models::integrate_svf_graph(vars[0], 6);
        Var moved = ad::sample_at_coords(Var::constant(img),
                                         ad::add(Var::constant(idc), u));
        Var d = ad::sub(moved, Var::constant(target));
        return ad::reduce_mean(ad::mul(d, d));
      },
      1e-6);
  CHECK(err < 1e-4);
}

TEST_CASE("hypernet emits the exact U-Net parameter count, deterministically") {
  ArchConfig cfg = small_cfg();
  Rng rng(13);
  ModelParams tpl = models::init_unet(cfg, rng);
  ModelParams xi = models::init_hyper(cfg, rng, tpl);

  ModelParams e1 = models::hypernet_graph(0.4, xi, tpl, cfg);
  ModelParams e2 = models::hypernet_graph(0.4, xi, tpl, cfg);
  REQUIRE(e1.items.size() == tpl.items.size());
  int64_t count = 0;
  for (size_t i = 0; i < e1.items.size(); ++i) {
    REQUIRE(e1.items[i].second.shape() == tpl.items[i].second.shape());
    count += e1.items[i].second.value().numel();
    for (int64_t j = 0; j < e1.items[i].second.value().numel(); ++j)
      CHECK(e1.items[i].second.value()[j] == e2.items[i].second.value()[j]);
  }
  CHECK(count == tpl.total_count());
  CHECK_THROWS_AS(models::hypernet_graph(1.5, xi, tpl, cfg), domain_error);
  CHECK_THROWS_AS(models::hypernet_graph(-0.2, xi, tpl, cfg), domain_error);
}

TEST_CASE("hypernet output is continuous in lambda") {
  ArchConfig cfg = small_cfg();
  Rng rng(14);
  ModelParams tpl = models::init_unet(cfg, rng);
  ModelParams xi = models::init_hyper(cfg, rng, tpl);
  ModelParams a = models::hypernet_graph(0.3, xi, tpl, cfg);
  ModelParams b = models::hypernet_graph(0.3 + 1e-6, xi, tpl, cfg);
  double diff = 0.0, scale = 0.0;
  for (size_t i = 0; i < a.items.size(); ++i)
    for (int64_t j = 0; j < a.items[i].second.value().numel(); ++j) {
      diff = std::max(diff, std::fabs(a.items[i].second.value()[j] -
                                      b.items[i].second.value()[j]));
      scale = std::max(scale, std::fabs(a.items[i].second.value()[j]));
    }
  REQUIRE(scale > 0.0);
  CHECK(diff < 1e-3 * scale);
}

TEST_CASE("joint register reduces to the affine when the deformable stage is zero") {
  ArchConfig cfg = small_cfg();
  Rng rng(15);
  ModelParams theta = models::init_detector(cfg, rng);
  ModelParams tpl = models::init_unet(cfg, rng);
  ModelParams xi = models::init_hyper(cfg, rng, tpl);
  zero_params(xi);  // hypernet output 0 -> U-Net weights 0 -> phi = identity
  Tensor m = phantom_image(24), f = phantom_image(25);

  for (auto mode : {models::JointMode::midspace, models::JointMode::moved}) {
    auto r = models::joint_register(m, f, 0.5, theta, xi, tpl, cfg, mode);
    CHECK(r.phi.grid.max_abs() == 0.0);
    Tensor expect = field::affine_map(r.t, m.shape());
    for (int64_t i = 0; i < expect.numel(); ++i)
      CHECK(r.psi[i] == doctest::Approx(expect[i]).epsilon(1e-9));
  }
}

TEST_CASE("midspace joint register of an image with itself is the identity map") {
  ArchConfig cfg = small_cfg();
  Rng rng(16);
  ModelParams theta = models::init_detector(cfg, rng);
  ModelParams tpl = models::init_unet(cfg, rng);
  ModelParams xi = models::init_hyper(cfg, rng, tpl);
  Tensor m = phantom_image(26);
  auto r = models::joint_register(m, m, 0.5, theta, xi, tpl, cfg, models::JointMode::midspace);
  Tensor id = field::identity_map(m.shape());
  for (int64_t i = 0; i < id.numel(); ++i) CHECK(std::fabs(r.psi[i] - id[i]) < 1e-9);
}

TEST_CASE("model forward passes are deterministic") {
  ArchConfig cfg = small_cfg();
  Rng rng(17);
  ModelParams det = models::init_detector(cfg, rng);
  Tensor m = phantom_image(27), f = phantom_image(28);
  Tensor t1 = models::detector_register(m, f, det, cfg).to_tensor();
  Tensor t2 = models::detector_register(m, f, det, cfg).to_tensor();
  for (int64_t i = 0; i < 9; ++i) CHECK(t1[i] == t2[i]);
}

TEST_CASE("shared-weight encoder parameter count is independent of cascades") {
  ArchConfig a = small_cfg(), b = small_cfg();
  a.enc_cascades = 1;
  b.enc_cascades = 4;
  Rng r1(18), r2(18);
  CHECK(models::init_encoder(a, r1).total_count() == models::init_encoder(b, r2).total_count());
}
