#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "reglab/errors.hpp"
#include "reglab/tensor.hpp"

namespace reglab::ad {

struct Node {
  Tensor value;
  Tensor grad;  // same shape, zero-initialized
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // scatters grad into parents
};

// Reverse-mode variable: a value plus a slot on an append-only tape.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor v, bool requires_grad = false) {
    n_ = std::make_shared<Node>();
    n_->grad = Tensor(v.shape(), 0.0);
    n_->value = std::move(v);
    n_->requires_grad = requires_grad;
  }

  static Var leaf(Tensor v) { return Var(std::move(v), true); }
  static Var constant(Tensor v) { return Var(std::move(v), false); }
  static Var scalar(double v, bool requires_grad = false) {
    return Var(Tensor::scalar(v), requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const Tensor& value() const { return n_->value; }
  Tensor& value() { return n_->value; }
  const Tensor& grad() const { return n_->grad; }
  Tensor& grad() { return n_->grad; }
  const Shape& shape() const { return n_->value.shape(); }
  bool requires_grad() const { return n_->requires_grad; }
  std::shared_ptr<Node> node() const { return n_; }

  void zero_grad() { n_->grad.fill(0.0); }

 private:
  std::shared_ptr<Node> n_;
};

inline Var make_op(Tensor value, std::vector<Var> parents,
                   std::function<void(Node&)> backprop) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || p.requires_grad();
  Var out(std::move(value), needs);
  if (needs) {
    auto n = out.node();
    n->parents.reserve(parents.size());
    for (const Var& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return out;
}

// Populates leaf gradients by reverse traversal; repeat calls accumulate.
inline void backward(const Var& root) {
  if (root.value().numel() != 1) throw shape_error("backward root must be scalar-shaped");
  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.node().get(), 0});
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  // Interior grads are scratch space; only leaf grads accumulate across calls.
  for (Node* n : order)
    if (n->backprop) n->grad.fill(0.0);
  // Seed and propagate in reverse topological order. Gradients seen by a
  // node's backprop are complete because all consumers appear later.
  root.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

namespace detail {

inline void check_binary(const Tensor& a, const Tensor& b) {
  if (!same_shape(a.shape(), b.shape()) && a.numel() != 1 && b.numel() != 1)
    throw shape_error("elementwise op requires equal shapes or a scalar operand");
}

inline double pick(const Tensor& t, int64_t i) { return t.numel() == 1 ? t[0] : t[i]; }

inline void scatter(Tensor& g, int64_t i, double v) {
  if (g.numel() == 1)
    g[0] += v;
  else
    g[i] += v;
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  detail::check_binary(a.value(), b.value());
  const Tensor& bigger = a.value().numel() >= b.value().numel() ? a.value() : b.value();
  Tensor out(bigger.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = detail::pick(a.value(), i) + detail::pick(b.value(), i);
  return make_op(std::move(out), {a, b}, [](Node& n) {
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      detail::scatter(n.parents[0]->grad, i, n.grad[i]);
      detail::scatter(n.parents[1]->grad, i, n.grad[i]);
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_binary(a.value(), b.value());
  const Tensor& bigger = a.value().numel() >= b.value().numel() ? a.value() : b.value();
  Tensor out(bigger.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = detail::pick(a.value(), i) - detail::pick(b.value(), i);
  return make_op(std::move(out), {a, b}, [](Node& n) {
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      detail::scatter(n.parents[0]->grad, i, n.grad[i]);
      detail::scatter(n.parents[1]->grad, i, -n.grad[i]);
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_binary(a.value(), b.value());
  const Tensor& bigger = a.value().numel() >= b.value().numel() ? a.value() : b.value();
  Tensor out(bigger.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = detail::pick(a.value(), i) * detail::pick(b.value(), i);
  return make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      detail::scatter(n.parents[0]->grad, i, n.grad[i] * detail::pick(bv, i));
      detail::scatter(n.parents[1]->grad, i, n.grad[i] * detail::pick(av, i));
    }
  });
}

inline Var div(const Var& a, const Var& b) {
  detail::check_binary(a.value(), b.value());
  const Tensor& bigger = a.value().numel() >= b.value().numel() ? a.value() : b.value();
  Tensor out(bigger.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    const double d = detail::pick(b.value(), i);
    if (d == 0.0) throw domain_error("division by zero", i);
    out[i] = detail::pick(a.value(), i) / d;
  }
  return make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      const double d = detail::pick(bv, i);
      detail::scatter(n.parents[0]->grad, i, n.grad[i] / d);
      detail::scatter(n.parents[1]->grad, i, -n.grad[i] * detail::pick(av, i) / (d * d));
    }
  });
}

// Elementwise quotient that maps 0/0 (zero denominator) to 0 with zero gradient.
inline Var safe_div(const Var& a, const Var& b) {
  detail::check_binary(a.value(), b.value());
  const Tensor& bigger = a.value().numel() >= b.value().numel() ? a.value() : b.value();
  Tensor out(bigger.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    const double d = detail::pick(b.value(), i);
    out[i] = d == 0.0 ? 0.0 : detail::pick(a.value(), i) / d;
  }
  return make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      const double d = detail::pick(bv, i);
      if (d == 0.0) continue;
      detail::scatter(n.parents[0]->grad, i, n.grad[i] / d);
      detail::scatter(n.parents[1]->grad, i, -n.grad[i] * detail::pick(av, i) / (d * d));
    }
  });
}

inline Var add(const Var& a, double c) { return add(a, Var::constant(Tensor::scalar(c))); }
inline Var mul(const Var& a, double c) { return mul(a, Var::constant(Tensor::scalar(c))); }
inline Var neg(const Var& a) { return mul(a, -1.0); }

inline Var pow_const(const Var& a, double p) {
  Tensor out = a.value().map([p](double x) { return std::pow(x, p); });
  return make_op(std::move(out), {a}, [p](Node& n) {
    const Tensor& x = n.parents[0]->value;
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      n.parents[0]->grad[i] += n.grad[i] * p * std::pow(x[i], p - 1.0);
  });
}

inline Var sqrt_(const Var& a) {
  for (int64_t i = 0; i < a.value().numel(); ++i)
    if (a.value()[i] < 0.0) throw domain_error("sqrt of negative value", i);
  Tensor out = a.value().map([](double x) { return std::sqrt(x); });
  return make_op(std::move(out), {a}, [](Node& n) {
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      n.parents[0]->grad[i] += n.grad[i] * 0.5 / std::sqrt(n.parents[0]->value[i]);
  });
}

inline Var exp_(const Var& a) {
  Tensor out = a.value().map([](double x) { return std::exp(x); });
  return make_op(std::move(out), {a}, [](Node& n) {
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      n.parents[0]->grad[i] += n.grad[i] * std::exp(n.parents[0]->value[i]);
  });
}

inline Var log_(const Var& a) {
  for (int64_t i = 0; i < a.value().numel(); ++i)
    if (a.value()[i] <= 0.0) throw domain_error("log of non-positive value", i);
  Tensor out = a.value().map([](double x) { return std::log(x); });
  return make_op(std::move(out), {a}, [](Node& n) {
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      n.parents[0]->grad[i] += n.grad[i] / n.parents[0]->value[i];
  });
}

// x >= 0 ? x : alpha x;  relu is alpha = 0. Subgradient 1 at x = 0.
inline Var leaky_relu(const Var& a, double alpha) {
  if (alpha < 0.0 || alpha >= 1.0) throw domain_error("leaky_relu alpha must be in [0,1)");
  Tensor out = a.value().map([alpha](double x) { return x >= 0.0 ? x : alpha * x; });
  return make_op(std::move(out), {a}, [alpha](Node& n) {
    const Tensor& x = n.parents[0]->value;
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      n.parents[0]->grad[i] += n.grad[i] * (x[i] >= 0.0 ? 1.0 : alpha);
  });
}

inline Var relu(const Var& a) { return leaky_relu(a, 0.0); }

inline Var sin_(const Var& a) {
  Tensor out = a.value().map([](double x) { return std::sin(x); });
  return make_op(std::move(out), {a}, [](Node& n) {
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      n.parents[0]->grad[i] += n.grad[i] * std::cos(n.parents[0]->value[i]);
  });
}

inline Var cos_(const Var& a) {
  Tensor out = a.value().map([](double x) { return std::cos(x); });
  return make_op(std::move(out), {a}, [](Node& n) {
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      n.parents[0]->grad[i] -= n.grad[i] * std::sin(n.parents[0]->value[i]);
  });
}

inline Var reduce_sum(const Var& a) {
  Tensor out = Tensor::scalar(a.value().sum());
  return make_op(std::move(out), {a}, [](Node& n) {
    const double g = n.grad[0];
    for (int64_t i = 0; i < n.parents[0]->grad.numel(); ++i) n.parents[0]->grad[i] += g;
  });
}

inline Var reduce_mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.value().numel());
  Tensor out = Tensor::scalar(a.value().sum() * inv);
  return make_op(std::move(out), {a}, [inv](Node& n) {
    const double g = n.grad[0] * inv;
    for (int64_t i = 0; i < n.parents[0]->grad.numel(); ++i) n.parents[0]->grad[i] += g;
  });
}

// Sum over all axes except the last: [d0..dk, C] -> [C].
inline Var reduce_sum_spatial(const Var& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw shape_error("reduce_sum_spatial needs rank >= 2");
  const int64_t c = s.back();
  const int64_t rows = a.value().numel() / c;
  Tensor out({c}, 0.0);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < c; ++j) out[j] += a.value()[r * c + j];
  return make_op(std::move(out), {a}, [c, rows](Node& n) {
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < c; ++j) n.parents[0]->grad[r * c + j] += n.grad[j];
  });
}

inline Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a.value().numel()) throw shape_error("reshape numel mismatch");
  Tensor out(std::move(shape), std::vector<double>(a.value().data(),
                                                   a.value().data() + a.value().numel()));
  return make_op(std::move(out), {a}, [](Node& n) {
    for (int64_t i = 0; i < n.grad.numel(); ++i) n.parents[0]->grad[i] += n.grad[i];
  });
}

// Concatenate along the last axis; all leading extents must agree.
inline Var concat_last(const std::vector<Var>& vars) {
  if (vars.empty()) throw shape_error("concat of nothing");
  Shape lead(vars[0].shape().begin(), vars[0].shape().end() - 1);
  int64_t ctot = 0;
  std::vector<int64_t> widths;
  for (const Var& v : vars) {
    Shape l(v.shape().begin(), v.shape().end() - 1);
    if (l != lead) throw shape_error("concat leading extents mismatch");
    widths.push_back(v.shape().back());
    ctot += v.shape().back();
  }
  Shape os = lead;
  os.push_back(ctot);
  const int64_t rows = shape_numel(lead);
  Tensor out(os);
  int64_t off = 0;
  for (size_t k = 0; k < vars.size(); ++k) {
    const Tensor& t = vars[k].value();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < widths[k]; ++j)
        out[r * ctot + off + j] = t[r * widths[k] + j];
    off += widths[k];
  }
  return make_op(std::move(out), vars, [rows, ctot, widths](Node& n) {
    int64_t off = 0;
    for (size_t k = 0; k < n.parents.size(); ++k) {
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < widths[k]; ++j)
          n.parents[k]->grad[r * widths[k] + j] += n.grad[r * ctot + off + j];
      off += widths[k];
    }
  });
}

// View of a flat subrange, reshaped; used to split generated parameter vectors.
inline Var slice_flat(const Var& a, int64_t offset, Shape shape) {
  const int64_t count = shape_numel(shape);
  if (offset < 0 || offset + count > a.value().numel())
    throw shape_error("slice_flat out of range");
  std::vector<double> d(a.value().data() + offset, a.value().data() + offset + count);
  Tensor out(std::move(shape), std::move(d));
  return make_op(std::move(out), {a}, [offset](Node& n) {
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      n.parents[0]->grad[offset + i] += n.grad[i];
  });
}

inline Var transpose2(const Var& a) {
  if (a.shape().size() != 2) throw shape_error("transpose2 expects rank 2");
  const int64_t r = a.shape()[0], c = a.shape()[1];
  Tensor out({c, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out[j * r + i] = a.value()[i * c + j];
  return make_op(std::move(out), {a}, [r, c](Node& n) {
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) n.parents[0]->grad[i * c + j] += n.grad[j * r + i];
  });
}

inline Var matmul(const Var& a, const Var& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw shape_error("matmul dimension mismatch");
  const int64_t m = a.shape()[0], k = a.shape()[1], n2 = b.shape()[1];
  Tensor out({m, n2}, 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t p = 0; p < k; ++p) {
      const double av = a.value()[i * k + p];
      for (int64_t j = 0; j < n2; ++j) out[i * n2 + j] += av * b.value()[p * n2 + j];
    }
  return make_op(std::move(out), {a, b}, [m, k, n2](Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t p = 0; p < k; ++p) {
        double ga = 0.0;
        for (int64_t j = 0; j < n2; ++j) {
          const double g = n.grad[i * n2 + j];
          ga += g * bv[p * n2 + j];
          n.parents[1]->grad[p * n2 + j] += av[i * k + p] * g;
        }
        n.parents[0]->grad[i * k + p] += ga;
      }
  });
}

namespace detail {

// Gauss-Jordan inverse with partial pivoting for small square matrices.
inline Tensor small_inverse(const Tensor& a) {
  const int64_t n = a.shape()[0];
  Tensor m = a;
  Tensor inv({n, n}, 0.0);
  for (int64_t i = 0; i < n; ++i) inv[i * n + i] = 1.0;
  for (int64_t col = 0; col < n; ++col) {
    int64_t piv = col;
    for (int64_t r = col + 1; r < n; ++r)
      if (std::fabs(m[r * n + col]) > std::fabs(m[piv * n + col])) piv = r;
    if (m[piv * n + col] == 0.0) throw numeric_error("singular matrix in inverse");
    if (piv != col)
      for (int64_t j = 0; j < n; ++j) {
        std::swap(m[piv * n + j], m[col * n + j]);
        std::swap(inv[piv * n + j], inv[col * n + j]);
      }
    const double d = 1.0 / m[col * n + col];
    for (int64_t j = 0; j < n; ++j) {
      m[col * n + j] *= d;
      inv[col * n + j] *= d;
    }
    for (int64_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = m[r * n + col];
      if (f == 0.0) continue;
      for (int64_t j = 0; j < n; ++j) {
        m[r * n + j] -= f * m[col * n + j];
        inv[r * n + j] -= f * inv[col * n + j];
      }
    }
  }
  return inv;
}

}  // namespace detail

// Inverse of a small square matrix; grad_A = -Y^T G Y^T with Y = A^{-1}.
inline Var mat_inverse(const Var& a) {
  if (a.shape().size() != 2 || a.shape()[0] != a.shape()[1])
    throw shape_error("mat_inverse expects a square matrix");
  Tensor y = detail::small_inverse(a.value());
  const int64_t n = a.shape()[0];
  Tensor ycopy = y;
  return make_op(std::move(y), {a}, [n, ycopy](Node& nd) {
    // tmp = Y^T G
    Tensor tmp({n, n}, 0.0);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (int64_t p = 0; p < n; ++p) s += ycopy[p * n + i] * nd.grad[p * n + j];
        tmp[i * n + j] = s;
      }
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (int64_t p = 0; p < n; ++p) s += tmp[i * n + p] * ycopy[j * n + p];
        nd.parents[0]->grad[i * n + j] -= s;
      }
  });
}

}  // namespace reglab::ad
