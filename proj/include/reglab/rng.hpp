#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "reglab/tensor.hpp"

namespace reglab {

// Deterministic RNG stream. Uniform/normal draws are derived from raw 64-bit
// output so sequences do not depend on library distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t raw() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
    return lo + static_cast<int64_t>(uniform() * static_cast<double>(hi - lo + 1));
  }

  // Box-Muller, one cached value.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * M_PI * u2;
    cached_ = r * std::sin(t);
    has_cached_ = true;
    return r * std::cos(t);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  Tensor normal_tensor(const Shape& shape, double mean = 0.0, double sd = 1.0) {
    Tensor t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = normal(mean, sd);
    return t;
  }

  Tensor uniform_tensor(const Shape& shape, double a = 0.0, double b = 1.0) {
    Tensor t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(a, b);
    return t;
  }

  // Independent child stream; advances this stream by one draw.
  Rng split() { return Rng(raw() ^ 0x9e3779b97f4a7c15ull); }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_ << " " << (has_cached_ ? 1 : 0) << " ";
    os.precision(17);
    os << cached_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    int flag = 0;
    is >> engine_ >> flag >> cached_;
    has_cached_ = flag != 0;
  }

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace reglab
