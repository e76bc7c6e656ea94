#pragma once

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "json.hpp"
#include "reglab/affine.hpp"
#include "reglab/errors.hpp"
#include "reglab/field.hpp"
#include "reglab/rng.hpp"

namespace reglab {

// Integer-valued label grid. Background is 0; `targets` is the subset J of
// labels whose overlap the models optimize.
struct LabelMap {
  Tensor grid;  // integer values stored as doubles
  std::vector<int> targets;

  std::set<int> label_set() const {
    std::set<int> k;
    for (int64_t i = 0; i < grid.numel(); ++i) k.insert(static_cast<int>(grid[i]));
    return k;
  }
};

struct Range {
  double lo = 0.0, hi = 0.0;
  double sample(Rng& rng) const { return rng.uniform(lo, hi); }
};

// Uniform sampling ranges for label augmentation and image synthesis.
struct SynthConfig {
  affine::AffineRanges affine_ranges;  // translation +-30 vox, rotation +-45 deg,
                                       // scale 1+-0.10, shear +-0.10
  Range warp_sd{0.0, 2.0};             // voxels
  Range warp_blur{8.0, 32.0};          // FWHM, voxels
  Range label_mean{0.0, 1.0};
  Range noise_sd{0.10, 0.20};          // fraction of intensity scale
  Range image_blur{0.0, 8.0};
  Range bias_sd{0.0, 0.10};
  Range bias_blur{48.0, 64.0};
  Range crop_pct{0.0, 20.0};           // % of each axis extent
  Range down_factor{1.0, 8.0};
  Range gamma_exp{0.5, 1.5};

  void validate() const {
    for (const Range* r : {&warp_sd, &warp_blur, &label_mean, &noise_sd, &image_blur,
                           &bias_sd, &bias_blur, &crop_pct, &down_factor, &gamma_exp})
      if (r->lo > r->hi) throw config_error("range lower bound exceeds upper bound");
  }

  static SynthConfig neutral() {
    SynthConfig c;
    c.affine_ranges = affine::AffineRanges{0.0, 0.0, 0.0, 0.0};
    c.warp_sd = c.warp_blur = c.noise_sd = c.image_blur = c.bias_sd = c.bias_blur =
        c.crop_pct = Range{0.0, 0.0};
    c.down_factor = Range{1.0, 1.0};
    c.gamma_exp = Range{1.0, 1.0};
    return c;
  }
};

inline void to_json(nlohmann::json& j, const Range& r) { j = {r.lo, r.hi}; }
inline void from_json(const nlohmann::json& j, Range& r) {
  r.lo = j.at(0).get<double>();
  r.hi = j.at(1).get<double>();
}

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"translation", c.affine_ranges.translation},
                     {"rotation", c.affine_ranges.rotation},
                     {"scale", c.affine_ranges.scale},
                     {"shear", c.affine_ranges.shear},
                     {"warp_sd", c.warp_sd},
                     {"warp_blur", c.warp_blur},
                     {"label_mean", c.label_mean},
                     {"noise_sd", c.noise_sd},
                     {"image_blur", c.image_blur},
                     {"bias_sd", c.bias_sd},
                     {"bias_blur", c.bias_blur},
                     {"crop_pct", c.crop_pct},
                     {"down_factor", c.down_factor},
                     {"gamma_exp", c.gamma_exp}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  c = SynthConfig{};
  if (j.contains("translation")) c.affine_ranges.translation = j["translation"].get<double>();
  if (j.contains("rotation")) c.affine_ranges.rotation = j["rotation"].get<double>();
  if (j.contains("scale")) c.affine_ranges.scale = j["scale"].get<double>();
  if (j.contains("shear")) c.affine_ranges.shear = j["shear"].get<double>();
  auto rd = [&](const char* key, Range& r) {
    if (j.contains(key)) r = j[key].get<Range>();
  };
  rd("warp_sd", c.warp_sd);
  rd("warp_blur", c.warp_blur);
  rd("label_mean", c.label_mean);
  rd("noise_sd", c.noise_sd);
  rd("image_blur", c.image_blur);
  rd("bias_sd", c.bias_sd);
  rd("bias_blur", c.bias_blur);
  rd("crop_pct", c.crop_pct);
  rd("down_factor", c.down_factor);
  rd("gamma_exp", c.gamma_exp);
  c.validate();
}

inline SynthConfig load_synth_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open config: " + path);
  nlohmann::json j;
  try {
    f >> j;
    return j.get<SynthConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config parse error in ") + path + ": " + e.what());
  }
}

namespace synth {

namespace detail {

// Largest face-connected component of a boolean mask; returns voxel flags.
inline std::vector<char> largest_component(const std::vector<char>& mask, const Shape& dims) {
  const int nd = static_cast<int>(dims.size());
  std::vector<int64_t> strides(static_cast<size_t>(nd));
  int64_t st = 1;
  for (int a = nd - 1; a >= 0; --a) {
    strides[static_cast<size_t>(a)] = st;
    st *= dims[static_cast<size_t>(a)];
  }
  const int64_t n = st;
  std::vector<int32_t> comp(static_cast<size_t>(n), -1);
  int32_t ncomp = 0;
  int64_t best_size = 0;
  int32_t best = -1;
  std::deque<int64_t> queue;
  std::vector<int64_t> idx(static_cast<size_t>(nd));
  for (int64_t seed = 0; seed < n; ++seed) {
    if (!mask[static_cast<size_t>(seed)] || comp[static_cast<size_t>(seed)] >= 0) continue;
    const int32_t c = ncomp++;
    int64_t size = 0;
    queue.push_back(seed);
    comp[static_cast<size_t>(seed)] = c;
    while (!queue.empty()) {
      const int64_t p = queue.front();
      queue.pop_front();
      ++size;
      int64_t rem = p;
      for (int a = 0; a < nd; ++a) {
        idx[static_cast<size_t>(a)] = rem / strides[static_cast<size_t>(a)];
        rem %= strides[static_cast<size_t>(a)];
      }
      for (int a = 0; a < nd; ++a)
        for (int d = -1; d <= 1; d += 2) {
          const int64_t i = idx[static_cast<size_t>(a)] + d;
          if (i < 0 || i >= dims[static_cast<size_t>(a)]) continue;
          const int64_t q = p + d * strides[static_cast<size_t>(a)];
          if (mask[static_cast<size_t>(q)] && comp[static_cast<size_t>(q)] < 0) {
            comp[static_cast<size_t>(q)] = c;
            queue.push_back(q);
          }
        }
    }
    if (size > best_size) {
      best_size = size;
      best = c;
    }
  }
  std::vector<char> out(static_cast<size_t>(n), 0);
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = comp[static_cast<size_t>(i)] == best;
  return out;
}

// Partition the flagged voxels into `groups` near-equal bins by the rank of a
// smooth scalar field, so every bin is nonempty and bins follow level sets.
inline void rank_partition(const std::vector<int64_t>& voxels, const Tensor& field, int groups,
                           int first_label, Tensor& out) {
  std::vector<int64_t> order = voxels;
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return field[a] != field[b] ? field[a] < field[b] : a < b;
  });
  const int64_t n = static_cast<int64_t>(order.size());
  for (int64_t r = 0; r < n; ++r) {
    const int g = static_cast<int>((r * groups) / n);
    out[order[static_cast<size_t>(r)]] = static_cast<double>(first_label + g);
  }
}

}  // namespace detail

// Procedural phantom: a connected "organ" of n_target_labels regions (set J)
// surrounded by distractor structures and background. Deterministic per seed.
inline LabelMap gen_phantom_labels(Rng& rng, const Shape& dims, int n_target_labels,
                                   int n_distractor_labels) {
  for (int64_t d : dims)
    if (d < 32) throw domain_error("phantom dims must be >= 32 per axis");
  if (n_target_labels < 1 || n_distractor_labels < 1)
    throw domain_error("label counts must be >= 1");
  const int nd = static_cast<int>(dims.size());
  const double fwhm = static_cast<double>(*std::min_element(dims.begin(), dims.end())) / 3.0;
  auto smooth_noise = [&](double f) {
    return field::gaussian_smooth(rng.normal_tensor(dims), nd, std::vector<double>(dims.size(), f));
  };
  Tensor organ_field = smooth_noise(fwhm);
  Tensor target_part = smooth_noise(fwhm * 0.6);
  Tensor bg_field = smooth_noise(fwhm);
  Tensor distractor_part = smooth_noise(fwhm * 0.6);

  const int64_t n = shape_numel(dims);
  std::vector<double> sorted(organ_field.data(), organ_field.data() + n);
  std::sort(sorted.begin(), sorted.end());
  // pick a foreground fraction whose largest component covers 20-60%
  double ffrac = 0.4;
  std::vector<char> organ;
  for (int iter = 0; iter < 40; ++iter) {
    const double thr = sorted[static_cast<size_t>(
        std::clamp<int64_t>(static_cast<int64_t>((1.0 - ffrac) * static_cast<double>(n)), 0, n - 1))];
    std::vector<char> mask(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) mask[static_cast<size_t>(i)] = organ_field[i] >= thr;
    organ = detail::largest_component(mask, dims);
    const double cover = static_cast<double>(std::count(organ.begin(), organ.end(), char(1))) /
                         static_cast<double>(n);
    if (cover >= 0.2 && cover <= 0.6) break;
    ffrac *= cover < 0.2 ? 1.25 : 0.8;
    ffrac = std::clamp(ffrac, 0.05, 0.85);
  }

  LabelMap lm;
  lm.grid = Tensor(dims, 0.0);
  std::vector<int64_t> organ_vox, struct_vox;
  std::vector<double> ext_bg;
  for (int64_t i = 0; i < n; ++i)
    if (organ[static_cast<size_t>(i)])
      organ_vox.push_back(i);
    else
      ext_bg.push_back(bg_field[i]);
  std::nth_element(ext_bg.begin(), ext_bg.begin() + static_cast<int64_t>(ext_bg.size()) / 2,
                   ext_bg.end());
  const double bg_median = ext_bg[ext_bg.size() / 2];
  for (int64_t i = 0; i < n; ++i)
    if (!organ[static_cast<size_t>(i)] && bg_field[i] >= bg_median) struct_vox.push_back(i);

  detail::rank_partition(organ_vox, target_part, n_target_labels, 1, lm.grid);
  if (!struct_vox.empty())
    detail::rank_partition(struct_vox, distractor_part, n_distractor_labels,
                           n_target_labels + 1, lm.grid);
  for (int j = 1; j <= n_target_labels; ++j) lm.targets.push_back(j);
  return lm;
}

// Sorts nonzero image voxels outside the target structures into 6 intensity
// bins of near-equal population; ties broken by voxel index.
inline LabelMap bin_exterior(const Tensor& image, const LabelMap& target_mask) {
  if (image.shape() != target_mask.grid.shape()) throw shape_error("bin_exterior dims mismatch");
  std::vector<int64_t> ext;
  for (int64_t i = 0; i < image.numel(); ++i)
    if (target_mask.grid[i] == 0.0 && image[i] != 0.0) ext.push_back(i);
  constexpr int kBins = 6;
  if (static_cast<int>(ext.size()) < kBins)
    throw degenerate_input_error("fewer than 6 nonzero exterior voxels");
  std::sort(ext.begin(), ext.end(), [&](int64_t a, int64_t b) {
    return image[a] != image[b] ? image[a] < image[b] : a < b;
  });
  int max_label = 0;
  for (int64_t i = 0; i < target_mask.grid.numel(); ++i)
    max_label = std::max(max_label, static_cast<int>(target_mask.grid[i]));
  LabelMap out = target_mask;
  const int64_t m = static_cast<int64_t>(ext.size());
  for (int64_t r = 0; r < m; ++r)
    out.grid[ext[static_cast<size_t>(r)]] =
        static_cast<double>(max_label + 1 + static_cast<int>((r * kBins) / m));
  return out;
}

// Affine + smoothed random warp applied in a single nearest-neighbor
// interpolation, then a partial-FOV crop zeroing boundary slabs.
inline LabelMap augment_labels(const LabelMap& s, Rng& rng, const SynthConfig& cfg) {
  cfg.validate();
  const Shape dims = s.grid.shape();
  const int nd = static_cast<int>(dims.size());
  const AffineParams params = affine::sample_params(cfg.affine_ranges, 1.0, nd, rng);
  const double sd = cfg.warp_sd.sample(rng);
  const double blur = cfg.warp_blur.sample(rng);

  Field u = Field::zeros(dims);
  if (sd > 0.0) {
    u.grid = rng.normal_tensor(u.grid.shape(), 0.0, sd);
    if (blur > 0.0)
      u.grid = field::gaussian_smooth(u.grid, nd, std::vector<double>(dims.size(), blur));
  } else {
    rng.normal_tensor(u.grid.shape());  // keep the draw sequence stable
  }
  // single coordinate map: x -> T(x + u(x))
  Tensor coords = field::compose_affine_warp(AffineTransform::identity(nd), u,
                                             affine::build(params));
  LabelMap out = s;
  out.grid = field::resample(s.grid, nd, coords, Interp::nearest);

  // FOV crop: zero a boundary slab per axis
  std::vector<int64_t> strides(static_cast<size_t>(nd));
  int64_t st = 1;
  for (int a = nd - 1; a >= 0; --a) {
    strides[static_cast<size_t>(a)] = st;
    st *= dims[static_cast<size_t>(a)];
  }
  for (int a = 0; a < nd; ++a) {
    const double frac = cfg.crop_pct.sample(rng) / 100.0;
    const bool high_side = rng.uniform() < 0.5;
    const int64_t d = dims[static_cast<size_t>(a)];
    const int64_t width = static_cast<int64_t>(frac * static_cast<double>(d));
    if (width <= 0) continue;
    for (int64_t i = 0; i < out.grid.numel(); ++i) {
      const int64_t ai = (i / strides[static_cast<size_t>(a)]) % d;
      if (high_side ? ai >= d - width : ai < width) out.grid[i] = 0.0;
    }
  }
  return out;
}

struct SynthImage {
  Tensor image;
  Tensor raw;               // pre-normalization image, kept for diagnostics
  bool degenerate = false;  // constant pre-normalization image, returned as zeros
};

// Image synthesis pipeline: label means, noise, blur, bias, gamma,
// resolution degradation, min-max normalization.
inline SynthImage synth_image(const LabelMap& s, Rng& rng, const SynthConfig& cfg) {
  cfg.validate();
  const Shape dims = s.grid.shape();
  const int nd = static_cast<int>(dims.size());

  // (1) per-label mean intensity
  std::map<int, double> means;
  for (int k : s.label_set()) means[k] = cfg.label_mean.sample(rng);
  Tensor img(dims);
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = means[static_cast<int>(s.grid[i])];

  // (2) additive Gaussian noise
  const double nsd = cfg.noise_sd.sample(rng);
  if (nsd > 0.0)
    for (int64_t i = 0; i < img.numel(); ++i) img[i] += rng.normal(0.0, nsd);
  else
    rng.normal_tensor(dims);  // keep the draw sequence stable

  // (3) anisotropic blur
  std::vector<double> fwhm(dims.size());
  for (double& f : fwhm) f = cfg.image_blur.sample(rng);
  img = field::gaussian_smooth(img, nd, fwhm);

  // (4) multiplicative bias field exp(b)
  const double bsd = cfg.bias_sd.sample(rng);
  const double bblur = cfg.bias_blur.sample(rng);
  if (bsd > 0.0) {
    Tensor b = field::gaussian_smooth(rng.normal_tensor(dims, 0.0, bsd), nd,
                                      std::vector<double>(dims.size(), bblur));
    for (int64_t i = 0; i < img.numel(); ++i) img[i] *= std::exp(b[i]);
  } else {
    rng.normal_tensor(dims);
  }

  // (5) gamma exponentiation
  const double gamma = cfg.gamma_exp.sample(rng);
  for (int64_t i = 0; i < img.numel(); ++i)
    img[i] = std::pow(std::max(img[i], 0.0), gamma);

  // (6) downsample a random axis subset, then upsample back
  const double factor = cfg.down_factor.sample(rng);
  std::vector<bool> pick(dims.size());
  for (size_t a = 0; a < dims.size(); ++a) pick[a] = rng.uniform() < 0.5;
  if (factor > 1.0)
    for (size_t a = 0; a < dims.size(); ++a) {
      if (!pick[a]) continue;
      const int64_t low = std::max<int64_t>(
          1, static_cast<int64_t>(std::round(static_cast<double>(dims[a]) / factor)));
      if (low == dims[a]) continue;
      img = field::resample_axis_linear(img, static_cast<int>(a), low);
      img = field::resample_axis_linear(img, static_cast<int>(a), dims[a]);
    }

  // (7) min-max normalize to [0,1]
  const double lo = img.min(), hi = img.max();
  SynthImage out;
  out.raw = img;
  if (hi <= lo) {
    out.image = Tensor(dims, 0.0);
    out.degenerate = true;
    return out;
  }
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = (img[i] - lo) / (hi - lo);
  out.image = std::move(img);
  return out;
}

// Replace labels by group ids; unmapped labels become background.
inline LabelMap recode_labels(const LabelMap& s, const std::map<int, int>& groups) {
  LabelMap out;
  out.grid = Tensor(s.grid.shape());
  for (int64_t i = 0; i < s.grid.numel(); ++i) {
    auto it = groups.find(static_cast<int>(s.grid[i]));
    out.grid[i] = it == groups.end() ? 0.0 : static_cast<double>(it->second);
  }
  std::set<int> tg;
  for (int j : s.targets) {
    auto it = groups.find(j);
    if (it != groups.end() && it->second != 0) tg.insert(it->second);
  }
  out.targets.assign(tg.begin(), tg.end());
  return out;
}

// Indicator channels for the labels in J (trailing axis, J order as given).
inline Tensor one_hot(const LabelMap& s, const std::vector<int>& labels) {
  const int64_t j = static_cast<int64_t>(labels.size());
  Shape os = s.grid.shape();
  os.push_back(j);
  Tensor out(os, 0.0);
  for (int64_t i = 0; i < s.grid.numel(); ++i) {
    const int v = static_cast<int>(s.grid[i]);
    for (int64_t c = 0; c < j; ++c)
      if (labels[static_cast<size_t>(c)] == v) out[i * j + c] = 1.0;
  }
  return out;
}

}  // namespace synth
}  // namespace reglab
