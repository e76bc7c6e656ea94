#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "reglab/checkpoint.hpp"
#include "reglab/losses.hpp"
#include "reglab/metrics.hpp"
#include "reglab/models.hpp"
#include "reglab/synth.hpp"

namespace reglab::train {

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct AdamState {
  std::map<std::string, Tensor> m, v;
  int64_t step = 0;
};

// One Adam update from the accumulated leaf gradients. Returns false (and
// applies no update) when any gradient is non-finite; consumed gradients are
// zeroed either way.
inline bool adam_step(models::ModelParams& params, AdamState& st, double lr,
                      const AdamConfig& cfg = {}) {
  bool finite = true;
  for (auto& [name, p] : params.items) {
    if (!p.requires_grad()) continue;
    for (int64_t i = 0; i < p.grad().numel(); ++i)
      if (!std::isfinite(p.grad()[i])) finite = false;
  }
  if (!finite) {
    for (auto& [name, p] : params.items) p.zero_grad();
    return false;
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (auto& [name, p] : params.items) {
    if (!p.requires_grad()) continue;
    Tensor& m = st.m.try_emplace(name, Tensor(p.shape(), 0.0)).first->second;
    Tensor& v = st.v.try_emplace(name, Tensor(p.shape(), 0.0)).first->second;
    for (int64_t i = 0; i < p.value().numel(); ++i) {
      const double g = p.grad()[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      p.value()[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
    p.zero_grad();
  }
  return true;
}

// ---------------------------------------------------------------------------
// Strip stopping criterion: P = mean(D)/max(D) over the strip.

struct StripProgress {
  double p = 0.0;
  bool stop = false;
};

inline StripProgress strip_progress(const std::vector<double>& history,
                                    double threshold = 0.999) {
  if (history.empty()) throw domain_error("strip_progress needs a nonempty history");
  const double mx = *std::max_element(history.begin(), history.end());
  const double mean = std::accumulate(history.begin(), history.end(), 0.0) /
                      static_cast<double>(history.size());
  StripProgress sp;
  sp.p = mx > 0.0 ? mean / mx : 1.0;
  sp.stop = sp.p > threshold;
  return sp;
}

// ---------------------------------------------------------------------------
// Training configuration and state

struct TrainConfig {
  int64_t grid = 32;
  int n_targets = 3, n_distractors = 3;
  int steps_per_strip = 400;
  int max_strips = 8;
  int val_every = 100;
  int val_pairs = 8;
  int coarse_strips = 1;  // leading strips optimize coarse label groups
  std::vector<double> lrs{1e-4, 1e-5, 1e-6};
  double p_stop = 0.999;
  uint64_t seed = 1;
  SynthConfig synth = desk_synth();
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string out_dir;       // metrics/ and checkpoints/ live here when set

  // Table-A2 shape scaled to the 32-voxel desk grid.
  static SynthConfig desk_synth() {
    SynthConfig s;
    s.affine_ranges = affine::AffineRanges{4.0, 30.0, 0.10, 0.10};
    s.warp_sd = Range{0.0, 1.0};
    s.warp_blur = Range{8.0, 16.0};
    s.bias_blur = Range{16.0, 24.0};
    s.crop_pct = Range{0.0, 10.0};
    s.down_factor = Range{1.0, 4.0};
    return s;
  }
};

struct Pair {
  LabelMap sm, sf;
  Tensor im, imf;
};

inline Pair make_pair(Rng& rng, const TrainConfig& tc) {
  auto base = synth::gen_phantom_labels(rng, {tc.grid, tc.grid}, tc.n_targets,
                                        tc.n_distractors);
  Pair p;
  p.sm = synth::augment_labels(base, rng, tc.synth);
  p.sf = synth::augment_labels(base, rng, tc.synth);
  p.im = synth::synth_image(p.sm, rng, tc.synth).image;
  p.imf = synth::synth_image(p.sf, rng, tc.synth).image;
  return p;
}

// Held-out pairs come from a disjoint seed range.
inline Pair eval_pair(uint64_t seed_base, int index, const TrainConfig& tc) {
  Rng rng(seed_base + 900000 + static_cast<uint64_t>(index));
  return make_pair(rng, tc);
}

// Coarse mapping collapses all targets into one group; fine keeps J.
inline std::map<int, int> label_groups(const LabelMap& s, bool coarse) {
  std::map<int, int> g;
  for (int j : s.targets) g[j] = coarse ? 1 : j;
  return g;
}

// Background channel included: without it, warping every label out of view is
// a trivial minimum of the one-hot MSE.
inline std::vector<int> onehot_channels(const LabelMap& s) {
  std::vector<int> chans{0};
  chans.insert(chans.end(), s.targets.begin(), s.targets.end());
  return chans;
}

struct LogRow {
  int64_t step;
  double loss, val_dice, lr;
  int strip;
};

struct TrainState {
  int64_t step = 0;
  int strip = 0;
  size_t lr_idx = 0;
  int diverged_in_row = 0;
  AdamState adam;
  std::vector<double> strip_history;
  std::vector<LogRow> log;
  Rng data_rng;
};

inline void write_log_csv(const std::string& path, const std::vector<LogRow>& rows) {
  std::ostringstream os;
  os << "step,loss,val_dice,lr,strip\n";
  os.precision(17);
  for (const auto& r : rows)
    os << r.step << "," << r.loss << "," << r.val_dice << "," << r.lr << "," << r.strip
       << "\n";
  io::detail::write_file_atomic(path, os.str());
}

inline io::Checkpoint state_to_checkpoint(const models::ModelParams& params,
                                          const TrainState& st) {
  io::Checkpoint c;
  for (auto& [name, v] : params.items) c.tensors["param." + name] = v.value();
  for (auto& [name, t] : st.adam.m) c.tensors["adam.m." + name] = t;
  for (auto& [name, t] : st.adam.v) c.tensors["adam.v." + name] = t;
  c.tensors["state.strip_history"] =
      Tensor({static_cast<int64_t>(st.strip_history.size())}, st.strip_history);
  nlohmann::json j{{"step", st.step},
                   {"strip", st.strip},
                   {"lr_idx", st.lr_idx},
                   {"diverged_in_row", st.diverged_in_row},
                   {"adam_step", st.adam.step}};
  c.strings["state.scalars"] = j.dump();
  c.strings["state.rng"] = st.data_rng.serialize();
  return c;
}

inline void checkpoint_to_state(const io::Checkpoint& c, models::ModelParams& params,
                                TrainState& st) {
  for (auto& [name, v] : params.items) {
    auto it = c.tensors.find("param." + name);
    if (it == c.tensors.end()) throw io_error("checkpoint missing parameter: " + name);
    if (it->second.shape() != v.shape())
      throw shape_error("checkpoint shape mismatch for " + name);
    v.value() = it->second;
  }
  st.adam = AdamState{};
  for (auto& [name, t] : c.tensors) {
    if (name.rfind("adam.m.", 0) == 0) st.adam.m[name.substr(7)] = t;
    if (name.rfind("adam.v.", 0) == 0) st.adam.v[name.substr(7)] = t;
  }
  const Tensor& h = c.tensors.at("state.strip_history");
  st.strip_history.assign(h.data(), h.data() + h.numel());
  nlohmann::json j = nlohmann::json::parse(c.strings.at("state.scalars"));
  st.step = j.at("step").get<int64_t>();
  st.strip = j.at("strip").get<int>();
  st.lr_idx = j.at("lr_idx").get<size_t>();
  st.diverged_in_row = j.at("diverged_in_row").get<int>();
  st.adam.step = j.at("adam_step").get<int64_t>();
  st.data_rng.deserialize(c.strings.at("state.rng"));
  st.log.clear();
}

// ---------------------------------------------------------------------------
// Generic strip-scheduled loop. The loss callback builds a fresh graph per
// step; singular fits and non-finite gradients count as divergence, which
// drops the learning rate (never to return). Repeated divergence at the
// smallest rate aborts.

struct Callbacks {
  std::function<ad::Var(Rng& rng, int strip)> loss;
  std::function<double()> validate;  // mean validation Dice
};

inline void run_training(models::ModelParams& params, const TrainConfig& tc,
                         const Callbacks& cb, TrainState& st) {
  namespace fs = std::filesystem;
  if (!tc.out_dir.empty()) {
    fs::create_directories(fs::path(tc.out_dir) / "checkpoints");
    fs::create_directories(fs::path(tc.out_dir) / "metrics");
  }
  if (st.step == 0) st.data_rng = Rng(tc.seed);

  auto drop_lr = [&]() {
    if (st.lr_idx + 1 < tc.lrs.size()) {
      ++st.lr_idx;
      return true;
    }
    return false;
  };

  const int64_t total = static_cast<int64_t>(tc.steps_per_strip) * tc.max_strips;
  while (st.step < total && st.strip < tc.max_strips) {
    // A singular fit or failed sqrt on a hard sample is a skipped step; only a
    // non-finite loss or gradient counts as divergence and costs learning rate.
    bool diverged = false;
    double loss_val = std::numeric_limits<double>::quiet_NaN();
    try {
      ad::Var loss = cb.loss(st.data_rng, st.strip);
      loss_val = loss.value()[0];
      ad::backward(loss);
      diverged = !std::isfinite(loss_val) || !adam_step(params, st.adam, tc.lrs[st.lr_idx]);
    } catch (const numeric_error&) {
      for (auto& [name, p] : params.items) p.zero_grad();
      ++st.diverged_in_row;
      if (st.diverged_in_row > 500)
        throw divergence_error("model never produces a usable fit");
      ++st.step;
      continue;
    }
    if (diverged) {
      ++st.diverged_in_row;
      if (!drop_lr() && st.diverged_in_row > 50)
        throw divergence_error("repeated divergence at the smallest learning rate");
    } else {
      st.diverged_in_row = 0;
    }
    ++st.step;

    if (st.step % tc.val_every == 0) {
      double vd = 0.0;
      try {
        vd = cb.validate();
      } catch (const numeric_error&) {  // early models may not register at all
      }
      st.strip_history.push_back(vd);
      st.log.push_back({st.step, loss_val, vd, tc.lrs[st.lr_idx], st.strip});
    }
    if (tc.checkpoint_every > 0 && !tc.out_dir.empty() &&
        st.step % tc.checkpoint_every == 0)
      io::write_checkpoint(tc.out_dir + "/checkpoints/step_" + std::to_string(st.step) +
                               ".ckpt",
                           state_to_checkpoint(params, st));

    if (st.step % tc.steps_per_strip == 0) {  // strip boundary
      ++st.strip;
      if (!st.strip_history.empty() &&
          strip_progress(st.strip_history, tc.p_stop).stop) {
        if (!drop_lr()) break;  // plateau at the smallest rate: done
      }
      st.strip_history.clear();
    }
  }
  if (!tc.out_dir.empty()) {
    write_log_csv(tc.out_dir + "/metrics/log.csv", st.log);
    io::write_checkpoint(tc.out_dir + "/checkpoints/final.ckpt",
                         state_to_checkpoint(params, st));
  }
}

// ---------------------------------------------------------------------------
// Shared evaluation helpers

inline LabelMap warp_labels_affine(const LabelMap& s, const AffineTransform& t) {
  LabelMap out = s;
  out.grid = field::resample(s.grid, 2, field::affine_map(t, s.grid.shape()), Interp::nearest);
  return out;
}

inline LabelMap warp_labels_coords(const LabelMap& s, const Tensor& coords) {
  LabelMap out = s;
  out.grid = field::resample(s.grid, 2, coords, Interp::nearest);
  return out;
}

inline double pair_dice(const LabelMap& a, const LabelMap& b) {
  auto d = metrics::hard_dice(a, b, a.targets);
  return d.empty() ? 0.0 : metrics::dice_mean(d);
}

using RegisterFn = std::function<AffineTransform(const Tensor& m, const Tensor& f)>;

struct EvalResult {
  std::vector<double> registered, baseline;
  double mean_registered = 0.0, mean_baseline = 0.0;
};

inline EvalResult eval_affine_model(const RegisterFn& reg, const TrainConfig& tc,
                                    int npairs, uint64_t seed_base) {
  EvalResult r;
  for (int i = 0; i < npairs; ++i) {
    Pair p = eval_pair(seed_base, i, tc);
    double base = pair_dice(p.sm, p.sf);
    double moved = base;
    try {
      moved = pair_dice(warp_labels_affine(p.sm, reg(p.im, p.imf)), p.sf);
    } catch (const numeric_error&) {
      // fall back to the unregistered baseline for this pair
    }
    r.registered.push_back(moved);
    r.baseline.push_back(base);
  }
  const auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  r.mean_registered = mean(r.registered);
  r.mean_baseline = mean(r.baseline);
  return r;
}

// ---------------------------------------------------------------------------
// Architecture-specific trainers

// Detector: one-hot MSE through the differentiable WLS fit, coarse-group
// curriculum on the first strips.
inline void train_detector(models::ModelParams& params, const models::ArchConfig& arch,
                           const TrainConfig& tc, TrainState& st) {
  Callbacks cb;
  cb.loss = [&params, &arch, &tc](Rng& rng, int strip) {
    Pair p = make_pair(rng, tc);
    const bool coarse = strip < tc.coarse_strips;
    LabelMap rm = synth::recode_labels(p.sm, label_groups(p.sm, coarse));
    LabelMap rf = synth::recode_labels(p.sf, label_groups(p.sf, coarse));
    ad::Var t = models::detector_fit_graph(ad::Var::constant(p.im),
                                           ad::Var::constant(p.imf), params, arch);
    ad::Var coords = ad::affine_coords2d(t, tc.grid, tc.grid);
    ad::Var moved = ad::sample_at_coords(
        ad::Var::constant(synth::one_hot(rm, onehot_channels(rm))), coords);
    return losses::onehot_mse_loss(moved,
                                   ad::Var::constant(synth::one_hot(rf, onehot_channels(rf))));
  };
  cb.validate = [&params, &arch, &tc]() {
    auto reg = [&](const Tensor& m, const Tensor& f) {
      return models::detector_register(m, f, params, arch);
    };
    return eval_affine_model(reg, tc, tc.val_pairs, tc.seed).mean_registered;
  };
  run_training(params, tc, cb, st);
}

// Appendix-A style: unsupervised NCC between the moved and fixed image.
inline void train_encoder_ncc(models::ModelParams& params, const models::ArchConfig& arch,
                              const TrainConfig& tc, TrainState& st) {
  Callbacks cb;
  cb.loss = [&params, &arch, &tc](Rng& rng, int) {
    Pair p = make_pair(rng, tc);
    ad::Var m = ad::Var::constant(p.im);
    ad::Var t = models::encoder_fit_graph(m, ad::Var::constant(p.imf), params, arch);
    ad::Var moved = ad::sample_at_coords(m, ad::affine_coords2d(t, tc.grid, tc.grid));
    return losses::ncc_loss(moved, ad::Var::constant(p.imf));
  };
  cb.validate = [&params, &arch, &tc]() {
    auto reg = [&](const Tensor& m, const Tensor& f) {
      return models::encoder_register(m, f, params, arch);
    };
    return eval_affine_model(reg, tc, tc.val_pairs, tc.seed).mean_registered;
  };
  run_training(params, tc, cb, st);
}

// Decomposer: optional 500-iteration pretraining of the raw field phi ⊙ kappa
// (upsampled to full resolution), then NCC through the dense WLS fit.
inline void train_decomposer(models::ModelParams& params, const models::ArchConfig& arch,
                             const TrainConfig& tc, models::FitMode mode, TrainState& st,
                             int pretrain_iters = 500) {
  const int pools = models::decomposer_pools(arch);
  if (pretrain_iters > 0) {
    TrainConfig ptc = tc;
    ptc.steps_per_strip = pretrain_iters;
    ptc.max_strips = 1;
    ptc.out_dir.clear();
    Callbacks pcb;
    pcb.loss = [&params, &arch, &tc, pools](Rng& rng, int) {
      Pair p = make_pair(rng, tc);
      auto heads = models::decomposer_heads(ad::Var::constant(p.im),
                                            ad::Var::constant(p.imf), params, arch);
      ad::Var u = models::decomposer_pretrain_field(heads);
      for (int i = 0; i < pools; ++i) u = ad::upsample2_linear(u);
      ad::Var coords = ad::add(ad::Var::constant(field::identity_map(p.im.shape())), u);
      ad::Var moved = ad::sample_at_coords(ad::Var::constant(p.im), coords);
      return losses::ncc_loss(moved, ad::Var::constant(p.imf));
    };
    pcb.validate = []() { return 0.0; };
    TrainState pst;
    run_training(params, ptc, pcb, pst);
  }
  Callbacks cb;
  cb.loss = [&params, &arch, &tc, mode](Rng& rng, int) {
    Pair p = make_pair(rng, tc);
    ad::Var m = ad::Var::constant(p.im);
    ad::Var t =
        models::decomposer_fit_graph(m, ad::Var::constant(p.imf), params, arch, mode);
    ad::Var moved = ad::sample_at_coords(m, ad::affine_coords2d(t, tc.grid, tc.grid));
    return losses::ncc_loss(moved, ad::Var::constant(p.imf));
  };
  cb.validate = [&params, &arch, &tc, mode]() {
    auto reg = [&](const Tensor& m, const Tensor& f) {
      return models::decomposer_register(m, f, params, arch, mode);
    };
    return eval_affine_model(reg, tc, tc.val_pairs, tc.seed).mean_registered;
  };
  run_training(params, tc, cb, st);
}

enum class DeformLoss { onehot, mind };

// Plain deformable U-Net trained with a fixed regularization weight.
inline void train_unet(models::ModelParams& params, const TrainConfig& tc,
                       DeformLoss kind, double reg_weight, TrainState& st,
                       int svf_steps = 10) {
  const Tensor idc = field::identity_map({tc.grid, tc.grid});
  Callbacks cb;
  cb.loss = [&params, &tc, kind, reg_weight, svf_steps, idc](Rng& rng, int) {
    Pair p = make_pair(rng, tc);
    ad::Var v = models::svf_unet_graph(ad::Var::constant(p.im),
                                       ad::Var::constant(p.imf), params);
    ad::Var u = models::integrate_svf_graph(v, svf_steps);
    ad::Var coords = ad::add(ad::Var::constant(idc), u);
    ad::Var overlap;
    if (kind == DeformLoss::onehot) {
      ad::Var moved = ad::sample_at_coords(
          ad::Var::constant(synth::one_hot(p.sm, onehot_channels(p.sm))), coords);
      overlap = losses::onehot_mse_loss(
          moved, ad::Var::constant(synth::one_hot(p.sf, onehot_channels(p.sf))));
    } else {
      ad::Var moved = ad::sample_at_coords(ad::Var::constant(p.im), coords);
      overlap = losses::mind_mse_loss(moved, ad::Var::constant(p.imf));
    }
    return losses::joint_loss(reg_weight, overlap, losses::grad_regularizer(u));
  };
  cb.validate = [&params, &tc, svf_steps]() {
    double acc = 0.0;
    for (int i = 0; i < tc.val_pairs; ++i) {
      Pair p = eval_pair(tc.seed, i, tc);
      Field v = models::svf_unet(p.im, p.imf, params);
      acc += pair_dice(
          warp_labels_coords(p.sm, field::warp_map(field::integrate_svf(v, svf_steps))),
          p.sf);
    }
    return acc / static_cast<double>(tc.val_pairs);
  };
  run_training(params, tc, cb, st);
}

inline models::ModelParams freeze(const models::ModelParams& p) {
  models::ModelParams out;
  for (auto& [name, v] : p.items) out.add(name, v.value(), false);
  return out;
}

// Hypernetwork training: theta frozen, lambda ~ U(0,1) per step, soft-Dice
// overlap on target labels plus the gradient regularizer per the joint loss.
inline void train_hyper(const models::ModelParams& theta, models::ModelParams& xi,
                        const models::ModelParams& unet_template,
                        const models::ArchConfig& arch, const TrainConfig& tc,
                        TrainState& st, int svf_steps = 10) {
  const models::ModelParams theta_c = freeze(theta);
  Callbacks cb;
  cb.loss = [&](Rng& rng, int) {
    const double lambda = rng.uniform();
    Pair p = make_pair(rng, tc);
    AffineTransform t = models::detector_register(p.im, p.imf, theta_c, arch);
    AffineTransform th = affine::sqrt_transform(t);
    Tensor md = field::resample(p.im, 2, field::affine_map(th, p.im.shape()), Interp::linear);
    Tensor fd = field::resample(p.imf, 2, field::affine_map(affine::invert(th), p.im.shape()),
                                Interp::linear);
    models::ModelParams eta = models::hypernet_graph(lambda, xi, unet_template, arch);
    ad::Var v = models::svf_unet_graph(ad::Var::constant(md), ad::Var::constant(fd), eta);
    ad::Var u = models::integrate_svf_graph(v, svf_steps);
    // psi(x) = T^1/2( phi(T^1/2 x) ), differentiable through u only
    Tensor c0 = field::affine_map(th, p.im.shape());
    ad::Var inner = ad::add(ad::Var::constant(c0), ad::sample_at_coords(u, ad::Var::constant(c0)));
    ad::Var psi = ad::apply_affine_const(inner, th.to_tensor());
    ad::Var moved =
        ad::sample_at_coords(ad::Var::constant(synth::one_hot(p.sm, onehot_channels(p.sm))), psi);
    ad::Var overlap = losses::soft_dice_loss(
        moved, ad::Var::constant(synth::one_hot(p.sf, onehot_channels(p.sf))));
    return losses::joint_loss(lambda, overlap, losses::grad_regularizer(u));
  };
  cb.validate = [&]() {
    double acc = 0.0;
    for (int i = 0; i < tc.val_pairs; ++i) {
      Pair p = eval_pair(tc.seed, i, tc);
      auto r = models::joint_register(p.im, p.imf, 0.2, theta_c, xi, unet_template, arch,
                                      models::JointMode::midspace, svf_steps);
      acc += pair_dice(warp_labels_coords(p.sm, r.psi), p.sf);
    }
    return acc / static_cast<double>(tc.val_pairs);
  };
  run_training(xi, tc, cb, st);
}

// ---------------------------------------------------------------------------
// Experiment protocols

struct SweepRow {
  double x = 0.0;
  std::vector<double> values;
};

inline void write_sweep_csv(const std::string& path, const std::string& xname,
                            const std::vector<std::string>& cols,
                            const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << xname;
  for (auto& c : cols) os << "," << c;
  os << "\n";
  os.precision(17);
  for (auto& r : rows) {
    os << r.x;
    for (double v : r.values) os << "," << v;
    os << "\n";
  }
  io::detail::write_file_atomic(path, os.str());
}

// Mean Dice per gamma for each model, on pairs whose affine augmentation is
// modulated by gamma (deformation off, per the protocol).
inline std::vector<SweepRow> gamma_sweep(const std::vector<RegisterFn>& regs,
                                         const std::vector<double>& gammas,
                                         const TrainConfig& tc, int npairs,
                                         uint64_t seed_base) {
  std::vector<SweepRow> rows;
  for (double g : gammas) {
    SweepRow row;
    row.x = g;
    std::vector<double> acc(regs.size(), 0.0);
    for (int i = 0; i < npairs; ++i) {
      Rng rng(seed_base + 700000 + static_cast<uint64_t>(i));
      auto base = synth::gen_phantom_labels(rng, {tc.grid, tc.grid}, tc.n_targets,
                                            tc.n_distractors);
      SynthConfig sc = tc.synth;
      sc.warp_sd = Range{0.0, 0.0};
      sc.crop_pct = Range{0.0, 0.0};
      LabelMap sf = base;
      // gamma-modulated affine applied to the moving side only
      const AffineParams ap =
          affine::sample_params(sc.affine_ranges, g, 2, rng);
      LabelMap sm = base;
      sm.grid = field::resample(base.grid, 2,
                                field::affine_map(affine::build(ap), base.grid.shape()),
                                Interp::nearest);
      Tensor im = synth::synth_image(sm, rng, sc).image;
      Tensor imf = synth::synth_image(sf, rng, sc).image;
      for (size_t k = 0; k < regs.size(); ++k) {
        double d = pair_dice(sm, sf);
        try {
          d = pair_dice(warp_labels_affine(sm, regs[k](im, imf)), sf);
        } catch (const numeric_error&) {
        }
        acc[k] += d;
      }
    }
    for (double& a : acc) row.values.push_back(a / static_cast<double>(npairs));
    rows.push_back(std::move(row));
  }
  return rows;
}

// Dice, folding %, and log-Jacobian spread per lambda for a trained joint
// model, evaluated on held-out pairs.
inline std::vector<SweepRow> lambda_sweep(const models::ModelParams& theta,
                                          const models::ModelParams& xi,
                                          const models::ModelParams& unet_template,
                                          const models::ArchConfig& arch,
                                          const std::vector<double>& lambdas,
                                          const TrainConfig& tc, int npairs,
                                          uint64_t seed_base) {
  std::vector<SweepRow> rows;
  const Tensor mask(Shape{tc.grid, tc.grid}, 1.0);
  for (double lam : lambdas) {
    double dice = 0.0, fold = 0.0, spread = 0.0;
    for (int i = 0; i < npairs; ++i) {
      Pair p = eval_pair(seed_base, i, tc);
      auto r = models::joint_register(p.im, p.imf, lam, theta, xi, unet_template, arch,
                                      models::JointMode::midspace);
      dice += pair_dice(warp_labels_coords(p.sm, r.psi), p.sf);
      const Tensor wm = field::warp_map(r.phi);
      fold += metrics::folding_fraction(wm, mask);
      spread += metrics::log_jacobian_spread(wm, mask);
    }
    rows.push_back(
        {lam, {dice / npairs, fold / npairs, spread / npairs}});
  }
  return rows;
}

struct LossComparison {
  double dice_label = 0.0, dice_image = 0.0;     // hard Dice per trained model
  double mind_label = 0.0, mind_image = 0.0;     // MIND-MSE per trained model
  double dice_baseline = 0.0, mind_baseline = 0.0;
};

inline LossComparison compare_deform_losses(const models::ModelParams& label_model,
                                            const models::ModelParams& image_model,
                                            const TrainConfig& tc, int npairs,
                                            uint64_t seed_base, int svf_steps = 10) {
  LossComparison r;
  const Tensor mask(Shape{tc.grid, tc.grid}, 1.0);
  for (int i = 0; i < npairs; ++i) {
    Pair p = eval_pair(seed_base, i, tc);
    r.dice_baseline += pair_dice(p.sm, p.sf);
    r.mind_baseline += metrics::mind_mse(p.im, p.imf, mask);
    for (int which = 0; which < 2; ++which) {
      const models::ModelParams& mp = which == 0 ? label_model : image_model;
      Field v = models::svf_unet(p.im, p.imf, mp);
      Tensor coords = field::warp_map(field::integrate_svf(v, svf_steps));
      const double d = pair_dice(warp_labels_coords(p.sm, coords), p.sf);
      const double mm = metrics::mind_mse(
          field::resample(p.im, 2, coords, Interp::linear), p.imf, mask);
      (which == 0 ? r.dice_label : r.dice_image) += d;
      (which == 0 ? r.mind_label : r.mind_image) += mm;
    }
  }
  const double n = npairs;
  r.dice_label /= n;
  r.dice_image /= n;
  r.mind_label /= n;
  r.mind_image /= n;
  r.dice_baseline /= n;
  r.mind_baseline /= n;
  return r;
}

// Appendix-D style decomposition rows: pair_id, axis, |v|, |r|, |z-1|, |e|.
struct DecompRow {
  int pair_id = 0, axis = 0;
  double v = 0.0, r = 0.0, z = 0.0, e = 0.0;
};

inline std::vector<DecompRow> transform_analysis(const std::vector<AffineTransform>& ts) {
  std::vector<DecompRow> rows;
  for (size_t i = 0; i < ts.size(); ++i) {
    AffineParams p = affine::decompose(ts[i]);
    const int nd = p.ndim;
    for (int a = 0; a < nd; ++a) {
      DecompRow row;
      row.pair_id = static_cast<int>(i);
      row.axis = a;
      row.v = std::fabs(p.translations[static_cast<size_t>(a)]);
      row.r = std::fabs(p.rotations[static_cast<size_t>(a < static_cast<int>(p.rotations.size()) ? a : 0)]);
      row.z = std::fabs(p.scales[static_cast<size_t>(a)] - 1.0);
      row.e = std::fabs(p.shears[static_cast<size_t>(a < static_cast<int>(p.shears.size()) ? a : 0)]);
      rows.push_back(row);
    }
  }
  return rows;
}

inline void write_decomp_csv(const std::string& path, const std::vector<DecompRow>& rows) {
  std::ostringstream os;
  os << "pair_id,axis,|v|,|r|,|z-1|,|e|\n";
  os.precision(17);
  for (auto& r : rows)
    os << r.pair_id << "," << r.axis << "," << r.v << "," << r.r << "," << r.z << ","
       << r.e << "\n";
  io::detail::write_file_atomic(path, os.str());
}

// Spearman rank correlation, used by the sweep trend checks.
inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw domain_error("spearman needs n >= 2 pairs");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (size_t i = 0; i < idx.size();) {
      size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw degenerate_input_error("constant ranks");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace reglab::train
