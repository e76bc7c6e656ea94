#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "reglab/field.hpp"
#include "reglab/losses.hpp"
#include "reglab/synth.hpp"

// Evaluation metrics: plain (non-differentiable) scalar summaries.
namespace reglab::metrics {

// Per-label hard Dice. Labels absent from both maps are omitted.
inline std::map<int, double> hard_dice(const LabelMap& a, const LabelMap& b,
                                       const std::vector<int>& labels) {
  if (a.grid.shape() != b.grid.shape()) throw shape_error("hard_dice dims mismatch");
  std::map<int, double> out;
  for (int j : labels) {
    int64_t na = 0, nb = 0, ni = 0;
    for (int64_t i = 0; i < a.grid.numel(); ++i) {
      const bool ia = a.grid[i] == static_cast<double>(j);
      const bool ib = b.grid[i] == static_cast<double>(j);
      na += ia;
      nb += ib;
      ni += ia && ib;
    }
    if (na + nb > 0) out[j] = 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
  }
  return out;
}

inline double dice_mean(const std::map<int, double>& per_label) {
  if (per_label.empty()) throw degenerate_input_error("no labels present for Dice mean");
  double s = 0.0;
  for (auto& [j, d] : per_label) s += d;
  return s / static_cast<double>(per_label.size());
}

// Global zero-normalized cross-correlation over masked voxels.
inline double ncc(const Tensor& a, const Tensor& b, const Tensor& mask) {
  if (a.shape() != b.shape() || a.shape() != mask.shape())
    throw shape_error("ncc dims mismatch");
  int64_t n = 0;
  double ma = 0.0, mb = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (mask[i] != 0.0) {
      ++n;
      ma += a[i];
      mb += b[i];
    }
  if (n < 2) throw degenerate_input_error("ncc: mask selects fewer than 2 voxels");
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (mask[i] != 0.0) {
      const double da = a[i] - ma, db = b[i] - mb;
      saa += da * da;
      sbb += db * db;
      sab += da * db;
    }
  if (saa == 0.0 || sbb == 0.0) throw degenerate_input_error("ncc: zero variance");
  return sab / std::sqrt(saa * sbb);
}

// Mean squared MIND-descriptor difference over the mask. Images are masked
// before descriptor computation.
inline double mind_mse(const Tensor& a, const Tensor& b, const Tensor& mask) {
  if (a.shape() != b.shape() || a.shape() != mask.shape())
    throw shape_error("mind_mse dims mismatch");
  if (a.ndim() != 2) throw shape_error("mind_mse expects 2D images");
  Tensor am = a, bm = b;
  int64_t n = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double m = mask[i] != 0.0 ? 1.0 : 0.0;
    am[i] *= m;
    bm[i] *= m;
    n += m != 0.0;
  }
  if (n < 2) throw degenerate_input_error("mind_mse: mask selects fewer than 2 voxels");
  Tensor da = losses::mind_descriptor(ad::Var::constant(am)).value();
  Tensor db = losses::mind_descriptor(ad::Var::constant(bm)).value();
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (mask[i] == 0.0) continue;
    for (int64_t c = 0; c < 4; ++c) {
      const double d = da[i * 4 + c] - db[i * 4 + c];
      acc += d * d;
    }
  }
  return acc / static_cast<double>(n * 4);
}

// Mean |ln|J|| over masked voxels with nonzero Jacobian determinant.
inline double log_jacobian_spread(const Tensor& coords, const Tensor& mask) {
  Tensor jd = field::jacobian_det_map(coords);
  if (jd.shape() != mask.shape()) throw shape_error("log_jacobian_spread mask mismatch");
  double acc = 0.0;
  int64_t n = 0;
  for (int64_t i = 0; i < jd.numel(); ++i)
    if (mask[i] != 0.0 && jd[i] != 0.0) {
      acc += std::fabs(std::log(std::fabs(jd[i])));
      ++n;
    }
  if (n == 0) throw degenerate_input_error("log_jacobian_spread: no usable voxels");
  return acc / static_cast<double>(n);
}

// Percentage of masked voxels with negative Jacobian determinant.
inline double folding_fraction(const Tensor& coords, const Tensor& mask) {
  Tensor jd = field::jacobian_det_map(coords);
  if (jd.shape() != mask.shape()) throw shape_error("folding_fraction mask mismatch");
  int64_t n = 0, neg = 0;
  for (int64_t i = 0; i < jd.numel(); ++i)
    if (mask[i] != 0.0) {
      ++n;
      neg += jd[i] < 0.0;
    }
  if (n == 0) throw degenerate_input_error("folding_fraction: empty mask");
  return 100.0 * static_cast<double>(neg) / static_cast<double>(n);
}

// E: mean displacement after chaining two coordinate maps, ||T2(T1(x)) - x||.
inline double inverse_consistency(const Tensor& t1, const Tensor& t2, const Tensor& mask) {
  if (t1.shape() != t2.shape()) throw shape_error("inverse_consistency map mismatch");
  const int nd = static_cast<int>(t1.shape().back());
  Shape dims(t1.shape().begin(), t1.shape().end() - 1);
  if (mask.shape() != dims) throw shape_error("inverse_consistency mask mismatch");
  Tensor chained = field::resample(t2, nd, t1, Interp::linear);
  Tensor id = field::identity_map(dims);
  double acc = 0.0;
  int64_t n = 0;
  for (int64_t p = 0; p < mask.numel(); ++p) {
    if (mask[p] == 0.0) continue;
    double d2 = 0.0;
    for (int a = 0; a < nd; ++a) {
      const double d = chained[p * nd + a] - id[p * nd + a];
      d2 += d * d;
    }
    acc += std::sqrt(d2);
    ++n;
  }
  if (n == 0) throw degenerate_input_error("inverse_consistency: empty mask");
  return acc / static_cast<double>(n);
}

// I: symmetric inverse consistency, 0.5 [E(T1,T2) + E(T2,T1)].
inline double symmetric_ic(const Tensor& t1, const Tensor& t2, const Tensor& mask) {
  return 0.5 * (inverse_consistency(t1, t2, mask) + inverse_consistency(t2, t1, mask));
}

struct MetricReport {
  double dice_mean = 0.0;
  std::map<int, double> dice_per_label;
  std::optional<double> ncc;
  std::optional<double> mse_mind;
  std::optional<double> log_jac_spread;
  std::optional<double> folding_pct;
  std::optional<double> inverse_consistency;
};

inline void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json{{"dice_mean", r.dice_mean}, {"dice_per_label", nlohmann::json::object()}};
  for (auto& [label, d] : r.dice_per_label) j["dice_per_label"][std::to_string(label)] = d;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("ncc", r.ncc);
  put("mse_mind", r.mse_mind);
  put("log_jac_spread", r.log_jac_spread);
  put("folding_pct", r.folding_pct);
  put("inverse_consistency", r.inverse_consistency);
}

}  // namespace reglab::metrics
