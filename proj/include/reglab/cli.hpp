#pragma once

#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "reglab/train.hpp"

// JSON bindings live beside ArchConfig's namespace so ADL finds them.
namespace reglab::models {

inline void to_json(nlohmann::json& j, const ArchConfig& c) {
  j = nlohmann::json{{"height", c.height},
                     {"width", c.width},
                     {"det_width", c.det_width},
                     {"det_features", c.det_features},
                     {"det_levels", c.det_levels},
                     {"enc_cascades", c.enc_cascades},
                     {"enc_levels", c.enc_levels},
                     {"enc_width", c.enc_width},
                     {"enc_shared", c.enc_shared},
                     {"dec_upsamples", c.dec_upsamples},
                     {"dec_width", c.dec_width},
                     {"unet_width", c.unet_width},
                     {"unet_levels", c.unet_levels},
                     {"hyper_hidden", c.hyper_hidden},
                     {"hyper_layers", c.hyper_layers}};
}

inline void from_json(const nlohmann::json& j, ArchConfig& c) {
  c = ArchConfig{};
  auto rd = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).template get<std::decay_t<decltype(field)>>();
  };
  rd("height", c.height);
  rd("width", c.width);
  rd("det_width", c.det_width);
  rd("det_features", c.det_features);
  rd("det_levels", c.det_levels);
  rd("enc_cascades", c.enc_cascades);
  rd("enc_levels", c.enc_levels);
  rd("enc_width", c.enc_width);
  rd("enc_shared", c.enc_shared);
  rd("dec_upsamples", c.dec_upsamples);
  rd("dec_width", c.dec_width);
  rd("unet_width", c.unet_width);
  rd("unet_levels", c.unet_levels);
  rd("hyper_hidden", c.hyper_hidden);
  rd("hyper_layers", c.hyper_layers);
}

}  // namespace reglab::models

// Command layer behind the reglab tool: each cmd_* returns a process exit
// code (0 success, 2 usage, 3 input/shape, 4 numeric, 5 I/O). Argument
// parsing stays in the executable; these take already-parsed options.
namespace reglab::cli {

namespace fs = std::filesystem;

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const io_error*>(&e)) return 5;
  if (dynamic_cast<const numeric_error*>(&e)) return 4;  // singular, divergence
  if (dynamic_cast<const shape_error*>(&e) || dynamic_cast<const domain_error*>(&e) ||
      dynamic_cast<const config_error*>(&e) ||
      dynamic_cast<const degenerate_input_error*>(&e))
    return 3;
  return 1;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    try {
      throw;
    } catch (const std::exception& inner) {
      return exit_code_for(inner);
    }
  }
}

struct TrainFileConfig {
  train::TrainConfig train;
  models::ArchConfig arch;
  std::string theta_model;  // required by arch unet-hyper
  double reg_weight = 0.5;  // plain U-Net runs
  std::string unet_loss = "onehot";
};

inline TrainFileConfig load_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open config: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(path + ": " + e.what());
  }
  TrainFileConfig c;
  auto rd = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).template get<std::decay_t<decltype(field)>>();
  };
  rd("grid", c.train.grid);
  rd("n_targets", c.train.n_targets);
  rd("n_distractors", c.train.n_distractors);
  rd("steps_per_strip", c.train.steps_per_strip);
  rd("max_strips", c.train.max_strips);
  rd("val_every", c.train.val_every);
  rd("val_pairs", c.train.val_pairs);
  rd("coarse_strips", c.train.coarse_strips);
  rd("lrs", c.train.lrs);
  rd("seed", c.train.seed);
  rd("checkpoint_every", c.train.checkpoint_every);
  if (j.contains("synth")) c.train.synth = j.at("synth").get<SynthConfig>();
  if (j.contains("arch")) c.arch = j.at("arch").get<models::ArchConfig>();
  c.arch.height = c.arch.width = c.train.grid;
  rd("theta_model", c.theta_model);
  rd("reg_weight", c.reg_weight);
  rd("unet_loss", c.unet_loss);
  if (c.unet_loss != "onehot" && c.unet_loss != "mind")
    throw config_error(path + ": unet_loss must be onehot or mind");
  return c;
}

// ---------------------------------------------------------------------------
// Model checkpoints: parameters plus kind/arch metadata.

struct Model {
  std::string kind;  // detector | encoder | decomposer | unet | joint
  models::ArchConfig arch;
  models::ModelParams params;          // primary parameter set
  models::ModelParams theta, xi, tpl;  // joint models only
  double reg_weight = 0.5;             // unet models: weight used in training
};

namespace detail {

inline void pack_params(io::Checkpoint& c, const std::string& prefix,
                        const models::ModelParams& p) {
  for (auto& [name, v] : p.items) c.tensors[prefix + name] = v.value();
}

inline void unpack_params(const io::Checkpoint& c, const std::string& prefix,
                          models::ModelParams& p) {
  for (auto& [name, v] : p.items) {
    auto it = c.tensors.find(prefix + name);
    if (it == c.tensors.end()) throw io_error("model missing tensor: " + prefix + name);
    if (it->second.shape() != v.shape())
      throw shape_error("model tensor shape mismatch: " + prefix + name);
    v.value() = it->second;
  }
}

}  // namespace detail

inline void save_model(const std::string& path, const Model& m) {
  io::Checkpoint c;
  c.strings["model.kind"] = m.kind;
  c.strings["model.arch"] = nlohmann::json(m.arch).dump();
  c.strings["model.reg_weight"] = std::to_string(m.reg_weight);
  if (m.kind == "joint") {
    detail::pack_params(c, "theta.", m.theta);
    detail::pack_params(c, "xi.", m.xi);
    detail::pack_params(c, "tpl.", m.tpl);
  } else {
    detail::pack_params(c, "param.", m.params);
  }
  io::write_checkpoint(path, c);
}

inline Model load_model(const std::string& path) {
  io::Checkpoint c = io::read_checkpoint(path);
  Model m;
  if (!c.strings.count("model.kind")) throw io_error("not a model checkpoint: " + path);
  m.kind = c.strings.at("model.kind");
  m.arch = nlohmann::json::parse(c.strings.at("model.arch")).get<models::ArchConfig>();
  if (c.strings.count("model.reg_weight"))
    m.reg_weight = std::stod(c.strings.at("model.reg_weight"));
  Rng init(0);
  if (m.kind == "detector") {
    m.params = models::init_detector(m.arch, init);
  } else if (m.kind == "encoder") {
    m.params = models::init_encoder(m.arch, init);
  } else if (m.kind == "decomposer") {
    m.params = models::init_decomposer(m.arch, init);
  } else if (m.kind == "unet") {
    m.params = models::init_unet(m.arch, init);
  } else if (m.kind == "joint") {
    m.theta = models::init_detector(m.arch, init);
    m.tpl = models::init_unet(m.arch, init);
    m.xi = models::init_hyper(m.arch, init, m.tpl);
  } else {
    throw io_error("unknown model kind in " + path + ": " + m.kind);
  }
  if (m.kind == "joint") {
    detail::unpack_params(c, "theta.", m.theta);
    detail::unpack_params(c, "xi.", m.xi);
    detail::unpack_params(c, "tpl.", m.tpl);
  } else {
    detail::unpack_params(c, "param.", m.params);
  }
  return m;
}

inline train::RegisterFn affine_register_fn(const Model& m) {
  if (m.kind == "detector")
    return [&m](const Tensor& a, const Tensor& b) {
      return models::detector_register(a, b, m.params, m.arch);
    };
  if (m.kind == "encoder")
    return [&m](const Tensor& a, const Tensor& b) {
      return models::encoder_register(a, b, m.params, m.arch);
    };
  if (m.kind == "decomposer")
    return [&m](const Tensor& a, const Tensor& b) {
      return models::decomposer_register(a, b, m.params, m.arch, models::FitMode::wls);
    };
  throw domain_error("model kind has no affine registrar: " + m.kind);
}

// ---------------------------------------------------------------------------
// Manifest helper shared by all commands: records the invocation and digests.

inline void emit_manifest(const std::string& path, const std::string& command,
                          uint64_t seed, const std::string& config_text,
                          const std::vector<std::string>& inputs,
                          const std::vector<std::string>& outputs) {
  io::RunManifest m;
  m.command = command;
  m.seed = seed;
  m.config_hash = io::fnv1a_hex(config_text);
  m.timestamp = io::now_iso8601();
  for (const auto& p : inputs)
    if (!p.empty()) m.inputs[p] = io::file_digest(p);
  for (const auto& p : outputs)
    if (!p.empty() && fs::exists(p)) m.outputs[p] = io::file_digest(p);
  io::write_manifest(path, m);
}

// ---------------------------------------------------------------------------
// Minimal self-contained SVG line plot (one polyline per series).

inline void write_svg_plot(const std::string& path, const std::string& xlabel,
                           const std::vector<std::string>& series,
                           const std::vector<train::SweepRow>& rows) {
  if (rows.empty()) throw domain_error("nothing to plot");
  const double W = 640, H = 400, L = 60, B = 40, T = 20, R = 20;
  double xmin = rows.front().x, xmax = rows.back().x;
  double ymin = 1e300, ymax = -1e300;
  for (auto& r : rows)
    for (double v : r.values) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << W << " " << H
     << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\""
     << H - B << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << (W / 2) << "\" y=\"" << H - 8 << "\" font-size=\"14\" "
     << "text-anchor=\"middle\">" << xlabel << "</text>\n";
  for (size_t s = 0; s < series.size(); ++s) {
    os << "<polyline fill=\"none\" stroke=\"" << colors[s % 5] << "\" points=\"";
    for (auto& r : rows)
      if (s < r.values.size()) os << px(r.x) << "," << py(r.values[s]) << " ";
    os << "\"/>\n<text x=\"" << W - R - 5 << "\" y=\"" << T + 16 * (s + 1)
       << "\" font-size=\"12\" text-anchor=\"end\" fill=\"" << colors[s % 5] << "\">"
       << series[s] << "</text>\n";
  }
  os << "</svg>\n";
  io::detail::write_file_atomic(path, os.str());
}

// ---------------------------------------------------------------------------
// Commands

struct SynthOpts {
  uint64_t seed = 0;
  std::vector<int64_t> dims{64, 64};
  int labels = 3;
  int distractors = 3;
  std::string out_labels, out_image, config, preview;
  std::string command;
};

inline int cmd_synth(const SynthOpts& o) {
  return guarded([&] {
    SynthConfig sc;
    std::string cfg_text;
    if (!o.config.empty()) {
      sc = load_synth_config(o.config);
      std::ifstream f(o.config);
      cfg_text.assign(std::istreambuf_iterator<char>(f), {});
    }
    if (o.dims.size() != 2) throw domain_error("--dims takes exactly two extents");
    Rng rng(o.seed);
    LabelMap base = synth::gen_phantom_labels(rng, {o.dims[0], o.dims[1]}, o.labels,
                                              o.distractors);
    LabelMap aug = synth::augment_labels(base, rng, sc);
    synth::SynthImage img = synth::synth_image(aug, rng, sc);

    std::vector<std::string> outs;
    auto phantom_path = [&](const std::string& p) {
      fs::path f(p);
      return (f.parent_path() / (f.stem().string() + "_phantom" + f.extension().string()))
          .string();
    };
    if (!o.out_labels.empty()) {
      io::write_mvol(phantom_path(o.out_labels), io::make_mvol(base.grid, 1, io::Dtype::i32));
      io::write_mvol(o.out_labels, io::make_mvol(aug.grid, 1, io::Dtype::i32));
      outs.push_back(phantom_path(o.out_labels));
      outs.push_back(o.out_labels);
    }
    if (!o.out_image.empty()) {
      io::write_mvol(o.out_image, io::make_mvol(img.image));
      outs.push_back(o.out_image);
    }
    if (!o.preview.empty()) {
      io::write_pgm(o.preview, img.image);
      outs.push_back(o.preview);
    }
    const std::string anchor = !o.out_labels.empty() ? o.out_labels : o.out_image;
    if (!anchor.empty())
      emit_manifest(fs::path(anchor).replace_extension(".manifest.json").string(),
                    o.command, o.seed, cfg_text, {o.config}, outs);
  });
}

struct TrainOpts {
  std::string arch, config, out_dir, resume;
  std::string command;
};

inline int cmd_train(const TrainOpts& o) {
  static const std::set<std::string> kinds{"detector", "encoder", "decomposer",
                                          "unet", "unet-hyper"};
  if (!kinds.count(o.arch)) {
    std::string valid;
    for (auto& k : kinds) valid += (valid.empty() ? "" : ", ") + k;
    std::fprintf(stderr, "error: unknown --arch '%s' (valid: %s)\n", o.arch.c_str(),
                 valid.c_str());
    return 2;
  }
  return guarded([&] {
    TrainFileConfig cfg;
    std::string cfg_text = "{}";
    if (!o.config.empty()) {
      cfg = load_train_config(o.config);
      std::ifstream f(o.config);
      cfg_text.assign(std::istreambuf_iterator<char>(f), {});
    }
    cfg.train.out_dir = o.out_dir;
    cfg.arch.validate();
    Rng init(cfg.train.seed + 1);
    train::TrainState st;
    Model model;
    model.arch = cfg.arch;
    model.reg_weight = cfg.reg_weight;

    auto maybe_resume = [&](models::ModelParams& p) {
      if (o.resume.empty()) return;
      train::checkpoint_to_state(io::read_checkpoint(o.resume), p, st);
    };

    if (o.arch == "detector") {
      model.kind = "detector";
      model.params = models::init_detector(cfg.arch, init);
      maybe_resume(model.params);
      train::train_detector(model.params, cfg.arch, cfg.train, st);
    } else if (o.arch == "encoder") {
      model.kind = "encoder";
      model.params = models::init_encoder(cfg.arch, init);
      maybe_resume(model.params);
      train::train_encoder_ncc(model.params, cfg.arch, cfg.train, st);
    } else if (o.arch == "decomposer") {
      model.kind = "decomposer";
      model.params = models::init_decomposer(cfg.arch, init);
      maybe_resume(model.params);
      train::train_decomposer(model.params, cfg.arch, cfg.train,
                              models::FitMode::wls, st);
    } else if (o.arch == "unet") {
      model.kind = "unet";
      model.params = models::init_unet(cfg.arch, init);
      maybe_resume(model.params);
      train::DeformLoss kind = cfg.unet_loss == "mind" ? train::DeformLoss::mind
                                                       : train::DeformLoss::onehot;
      train::train_unet(model.params, cfg.train, kind, cfg.reg_weight, st);
    } else {  // unet-hyper
      if (cfg.theta_model.empty())
        throw config_error("arch unet-hyper needs theta_model in the config");
      Model theta = load_model(cfg.theta_model);
      if (theta.kind != "detector") throw config_error("theta_model must be a detector");
      model.kind = "joint";
      model.theta = std::move(theta.params);
      model.tpl = models::init_unet(cfg.arch, init);
      model.xi = models::init_hyper(cfg.arch, init, model.tpl);
      maybe_resume(model.xi);
      train::train_hyper(model.theta, model.xi, model.tpl, cfg.arch, cfg.train, st);
    }
    const std::string model_path = (fs::path(o.out_dir) / "model.ckpt").string();
    save_model(model_path, model);
    emit_manifest((fs::path(o.out_dir) / "manifest.json").string(), o.command,
                  cfg.train.seed, cfg_text, {o.config, cfg.theta_model, o.resume},
                  {model_path, o.out_dir + "/metrics/log.csv"});
  });
}

struct RegisterOpts {
  std::string moving, fixed, model;
  double lambda = 0.5;  // default joint trade-off
  std::string out_transform, out_warp, out_moved;
  std::string mode = "midspace";
  bool affine_only = false;
  std::string command;
};

inline int cmd_register(const RegisterOpts& o) {
  return guarded([&] {
    if (o.lambda < 0.0 || o.lambda > 1.0) throw domain_error("--lambda must be in [0,1]");
    if (o.mode != "midspace" && o.mode != "moved")
      throw domain_error("--mode must be midspace or moved");
    const Tensor m = io::read_mvol(o.moving).data;
    const Tensor f = io::read_mvol(o.fixed).data;
    if (m.shape() != f.shape()) throw shape_error("moving/fixed dims mismatch");
    Model model = load_model(o.model);
    if (m.shape() != Shape{model.arch.height, model.arch.width})
      throw shape_error("input dims do not match the model grid");

    AffineTransform t = AffineTransform::identity(2);
    Tensor coords;  // composite map; the moving image is resampled exactly once
    bool have_warp = false;
    Field phi = Field::zeros(m.shape());
    if (model.kind == "joint" && !o.affine_only) {
      auto r = models::joint_register(m, f, o.lambda, model.theta, model.xi, model.tpl,
                                      model.arch,
                                      o.mode == "midspace" ? models::JointMode::midspace
                                                           : models::JointMode::moved);
      t = r.t;
      phi = r.phi;
      coords = r.psi;
      have_warp = true;
    } else if (model.kind == "unet") {
      phi = field::integrate_svf(models::svf_unet(m, f, model.params));
      coords = field::warp_map(phi);
      have_warp = true;
    } else {
      const Model& mm = model;
      if (model.kind == "joint") {
        t = models::detector_register(m, f, mm.theta, mm.arch);
      } else {
        t = affine_register_fn(mm)(m, f);
      }
      coords = field::affine_map(t, m.shape());
    }

    std::vector<std::string> outs;
    if (!o.out_transform.empty()) {
      affine::write_text_file(t, o.out_transform);
      outs.push_back(o.out_transform);
    }
    if (!o.out_warp.empty() && have_warp) {
      io::write_mvol(o.out_warp, io::make_mvol(phi.grid, 2));
      outs.push_back(o.out_warp);
    }
    if (!o.out_moved.empty()) {
      io::write_mvol(o.out_moved,
                     io::make_mvol(field::resample(m, 2, coords, Interp::linear)));
      outs.push_back(o.out_moved);
    }
    if (!outs.empty())
      emit_manifest(fs::path(outs.front()).replace_extension(".manifest.json").string(),
                    o.command, 0, "", {o.moving, o.fixed, o.model}, outs);
  });
}

struct MetricsOpts {
  std::string moved_labels, fixed_labels, moved_image, fixed_image, warp, mask, out;
  std::string command;
};

inline LabelMap labelmap_from_mvol(const std::string& path) {
  io::Mvol v = io::read_mvol(path);
  LabelMap s;
  s.grid = v.data;
  std::set<int> labels;
  for (int64_t i = 0; i < s.grid.numel(); ++i) {
    const int j = static_cast<int>(s.grid[i]);
    if (j != 0) labels.insert(j);
  }
  s.targets.assign(labels.begin(), labels.end());
  return s;
}

inline int cmd_metrics(const MetricsOpts& o) {
  return guarded([&] {
    metrics::MetricReport r;
    Tensor mask;
    bool have_mask = false;
    if (!o.mask.empty()) {
      mask = io::read_mvol(o.mask).data;
      have_mask = true;
    }
    if (!o.moved_labels.empty() && !o.fixed_labels.empty()) {
      LabelMap a = labelmap_from_mvol(o.moved_labels);
      LabelMap b = labelmap_from_mvol(o.fixed_labels);
      std::set<int> uni(a.targets.begin(), a.targets.end());
      uni.insert(b.targets.begin(), b.targets.end());
      r.dice_per_label =
          metrics::hard_dice(a, b, std::vector<int>(uni.begin(), uni.end()));
      r.dice_mean = metrics::dice_mean(r.dice_per_label);
    }
    if (!o.moved_image.empty() && !o.fixed_image.empty()) {
      const Tensor a = io::read_mvol(o.moved_image).data;
      const Tensor b = io::read_mvol(o.fixed_image).data;
      if (a.shape() != b.shape()) throw shape_error("image dims mismatch");
      const Tensor msk = have_mask ? mask : Tensor(a.shape(), 1.0);
      r.ncc = metrics::ncc(a, b, msk);
      r.mse_mind = metrics::mind_mse(a, b, msk);
    }
    if (!o.warp.empty()) {
      io::Mvol w = io::read_mvol(o.warp);
      if (w.channels != 2) throw shape_error("warp must have two channels");
      const Tensor coords = field::warp_map(Field{w.data});
      const Tensor msk = have_mask ? mask : Tensor(Shape{w.dims[0], w.dims[1]}, 1.0);
      r.log_jac_spread = metrics::log_jacobian_spread(coords, msk);
      r.folding_pct = metrics::folding_fraction(coords, msk);
    }
    nlohmann::json j;
    metrics::to_json(j, r);
    io::detail::write_file_atomic(o.out, j.dump(2) + "\n");
    emit_manifest(fs::path(o.out).replace_extension(".manifest.json").string(), o.command,
                  0, "",
                  {o.moved_labels, o.fixed_labels, o.moved_image, o.fixed_image, o.warp,
                   o.mask},
                  {o.out});
  });
}

struct SweepOpts {
  std::string kind;  // gamma | lambda
  std::vector<std::string> models;
  std::vector<double> grid;
  int pairs = 10;
  uint64_t seed = 100;
  int64_t dims = 32;
  std::string out, svg;
  std::string command;
};

inline int cmd_sweep(const SweepOpts& o) {
  return guarded([&] {
    if (o.kind != "gamma" && o.kind != "lambda")
      throw domain_error("--kind must be gamma or lambda");
    if (o.grid.empty()) throw domain_error("--grid needs at least one value");
    if (o.models.empty()) throw domain_error("--model needed");
    std::vector<Model> models_;
    for (auto& p : o.models) models_.push_back(load_model(p));
    train::TrainConfig tc;
    tc.grid = o.dims;
    std::vector<train::SweepRow> rows;
    std::vector<std::string> cols;
    if (o.kind == "gamma") {
      std::vector<train::RegisterFn> regs;
      for (auto& m : models_) {
        regs.push_back(affine_register_fn(m));
        cols.push_back(m.kind);
      }
      rows = train::gamma_sweep(regs, o.grid, tc, o.pairs, o.seed);
    } else {
      if (models_.size() != 1 || models_[0].kind != "joint")
        throw domain_error("lambda sweep needs exactly one joint model");
      const Model& jm = models_[0];
      tc.grid = jm.arch.height;
      rows = train::lambda_sweep(jm.theta, jm.xi, jm.tpl, jm.arch, o.grid, tc, o.pairs,
                                 o.seed);
      cols = {"dice", "folding_pct", "log_jac_spread"};
    }
    train::write_sweep_csv(o.out, o.kind, cols, rows);
    if (!o.svg.empty()) write_svg_plot(o.svg, o.kind, cols, rows);
    std::vector<std::string> outs{o.out};
    if (!o.svg.empty()) outs.push_back(o.svg);
    emit_manifest(fs::path(o.out).replace_extension(".manifest.json").string(), o.command,
                  o.seed, "", o.models, outs);
  });
}

struct DecomposeOpts {
  std::string transforms;  // glob with * over the filename component
  std::string out;
  std::string command;
};

inline std::vector<std::string> expand_glob(const std::string& pattern) {
  fs::path pat(pattern);
  fs::path dir = pat.parent_path().empty() ? "." : pat.parent_path();
  const std::string name = pat.filename().string();
  const size_t star = name.find('*');
  std::vector<std::string> out;
  if (star == std::string::npos) {
    if (fs::exists(pat)) out.push_back(pat.string());
    return out;
  }
  const std::string pre = name.substr(0, star), post = name.substr(star + 1);
  if (!fs::is_directory(dir)) return out;
  for (auto& e : fs::directory_iterator(dir)) {
    const std::string n = e.path().filename().string();
    if (n.size() >= pre.size() + post.size() && n.rfind(pre, 0) == 0 &&
        n.compare(n.size() - post.size(), post.size(), post) == 0)
      out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline int cmd_decompose(const DecomposeOpts& o) {
  return guarded([&] {
    std::vector<std::string> files = expand_glob(o.transforms);
    if (files.empty()) throw degenerate_input_error("no transforms match: " + o.transforms);
    std::vector<AffineTransform> ts;
    for (auto& f : files) ts.push_back(affine::read_text_file(f));
    train::write_decomp_csv(o.out, train::transform_analysis(ts));
    emit_manifest(fs::path(o.out).replace_extension(".manifest.json").string(), o.command,
                  0, "", files, {o.out});
  });
}

}  // namespace reglab::cli
