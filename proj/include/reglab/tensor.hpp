#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "reglab/errors.hpp"

namespace reglab {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// Dense row-major N-D array of doubles, last axis fastest.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    for (int64_t e : shape_)
      if (e < 1) throw shape_error("tensor extent must be >= 1");
    data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
  }
  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
      throw shape_error("tensor data length does not match shape");
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int64_t extent(int64_t axis) const { return shape_[static_cast<size_t>(axis)]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(std::initializer_list<int64_t> idx) { return data_[flat(idx)]; }
  double at(std::initializer_list<int64_t> idx) const { return data_[flat(idx)]; }

  size_t flat(std::initializer_list<int64_t> idx) const {
    size_t off = 0, i = 0;
    for (int64_t v : idx) off = off * static_cast<size_t>(shape_[i++]) + static_cast<size_t>(v);
    return off;
  }

  bool is_scalar() const { return numel() == 1; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
  double min() const {
    double m = data_[0];
    for (double v : data_) m = std::min(m, v);
    return m;
  }
  double max() const {
    double m = data_[0];
    for (double v : data_) m = std::max(m, v);
    return m;
  }
  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
  }

  Tensor& operator+=(const Tensor& o) {
    check_same(o);
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same(o);
    for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  Tensor map(const std::function<double(double)>& f) const {
    Tensor out(shape_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = f(data_[static_cast<size_t>(i)]);
    return out;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  void check_same(const Tensor& o) const {
    if (!same_shape(shape_, o.shape_)) throw shape_error("tensor shape mismatch");
  }

  Shape shape_;
  std::vector<double> data_;
};

// Zero-centered coordinate of index i along an axis of extent d.
inline double centered_coord(int64_t i, int64_t d) {
  return static_cast<double>(i) - 0.5 * static_cast<double>(d - 1);
}

// Iterate all multi-indices of a shape; f receives the index vector.
inline void for_each_index(const Shape& dims,
                           const std::function<void(const std::vector<int64_t>&)>& f) {
  std::vector<int64_t> idx(dims.size(), 0);
  const int64_t n = shape_numel(dims);
  for (int64_t c = 0; c < n; ++c) {
    f(idx);
    for (int64_t ax = static_cast<int64_t>(dims.size()) - 1; ax >= 0; --ax) {
      if (++idx[static_cast<size_t>(ax)] < dims[static_cast<size_t>(ax)]) break;
      idx[static_cast<size_t>(ax)] = 0;
    }
  }
}

}  // namespace reglab
