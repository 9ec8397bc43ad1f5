#pragma once

// Dense tensors with a recorded reverse-mode tape. Only the operations the
// character encoder needs are provided. Everything is rank 1 or 2; a rank-1
// tensor of length n behaves as a 1 x n row.
//
// The scalar type is a template parameter: float for training and inference,
// double for finite-difference gradient checks.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "charemb/error.hpp"
#include "charemb/random.hpp"

namespace charemb::ad {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient flows in
  bool requires_grad = false;
  std::function<void()> backward;

  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Shared handle to a node. Copies alias the same storage.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    if (shape.empty() || shape.size() > 2) throw NumericError("tensor rank must be 1 or 2");
    n->value.assign(std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                    std::multiplies<>()),
                    T(0));
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    if (values.size() != t.size()) {
      throw NumericError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(t.shape()));
    }
    t.node_->value = std::move(values);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return node_->rows(); }
  std::size_t cols() const { return node_->cols(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  T& operator[](std::size_t i) { return node_->value[i]; }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T& at(std::size_t r, std::size_t c) { return node_->value[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  /// Gradient buffer; empty if nothing has flowed into this tensor.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (size() != 1) throw NumericError("item() on non-scalar " + shape_str(shape()));
    return node_->value[0];
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}
  std::shared_ptr<Node<T>> node_;

  template <class>
  friend class Tape;
};

/// Records operations in execution order; backward() replays them in reverse.
/// A tape and the tensors it produces belong to one thread.
template <class T>
class Tape {
 public:
  using Tens = Tensor<T>;
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;

  std::size_t recorded() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// With gradients disabled nothing is recorded (inference).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  // -- linear algebra ------------------------------------------------------

  Tens matmul(const Tens& a, const Tens& b) {
    const auto m = a.rows(), n = a.cols(), p = b.cols();
    if (b.rows() != n) {
      throw NumericError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    auto out = make({m, p}, {a, b});
    MapM(out.node()->value.data(), m, p).noalias() = cmap(a) * cmap(b);
    if (out.requires_grad()) {
      auto* o = out.node();
      auto an = a.node_ptr(), bn = b.node_ptr();
      o->backward = [o, an, bn, m, n, p] {
        CMapM go(o->grad.data(), m, p);
        if (an->requires_grad) {
          MapM(an->ensure_grad().data(), m, n).noalias() +=
              go * CMapM(bn->value.data(), n, p).transpose();
        }
        if (bn->requires_grad) {
          MapM(bn->ensure_grad().data(), n, p).noalias() +=
              CMapM(an->value.data(), m, n).transpose() * go;
        }
      };
    }
    return out;
  }

  Tens add(const Tens& a, const Tens& b) {
    require_same(a, b, "add");
    auto out = make(a.shape(), {a, b});
    auto& v = out.node()->value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
    if (out.requires_grad()) {
      auto* o = out.node();
      auto an = a.node_ptr(), bn = b.node_ptr();
      o->backward = [o, an, bn] {
        accumulate(an.get(), o->grad);
        accumulate(bn.get(), o->grad);
      };
    }
    return out;
  }

  /// a [m x n] + bias [1 x n] broadcast over rows.
  Tens add_bias(const Tens& a, const Tens& bias) {
    const auto m = a.rows(), n = a.cols();
    if (bias.size() != n) {
      throw NumericError("add_bias shape mismatch: " + shape_str(a.shape()) + " + " +
                         shape_str(bias.shape()));
    }
    auto out = make(a.shape(), {a, bias});
    auto& v = out.node()->value;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) v[r * n + c] = a[r * n + c] + bias[c];
    if (out.requires_grad()) {
      auto* o = out.node();
      auto an = a.node_ptr(), bn = bias.node_ptr();
      o->backward = [o, an, bn, m, n] {
        accumulate(an.get(), o->grad);
        if (bn->requires_grad) {
          auto& g = bn->ensure_grad();
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) g[c] += o->grad[r * n + c];
        }
      };
    }
    return out;
  }

  /// Elementwise product.
  Tens mul(const Tens& a, const Tens& b) {
    require_same(a, b, "mul");
    auto out = make(a.shape(), {a, b});
    auto& v = out.node()->value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
    if (out.requires_grad()) {
      auto* o = out.node();
      auto an = a.node_ptr(), bn = b.node_ptr();
      o->backward = [o, an, bn] {
        const auto n = o->grad.size();
        if (an->requires_grad) {
          auto& g = an->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) g[i] += o->grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
          auto& g = bn->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) g[i] += o->grad[i] * an->value[i];
        }
      };
    }
    return out;
  }

  /// scale * a + shift, elementwise.
  Tens affine(const Tens& a, T scale, T shift) {
    auto out = make(a.shape(), {a});
    auto& v = out.node()->value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = scale * a[i] + shift;
    if (out.requires_grad()) {
      auto* o = out.node();
      auto an = a.node_ptr();
      o->backward = [o, an, scale] {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * o->grad[i];
      };
    }
    return out;
  }

  // -- nonlinearities ------------------------------------------------------

  Tens sigmoid(const Tens& a) {
    auto out = make(a.shape(), {a});
    auto& v = out.node()->value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = T(1) / (T(1) + std::exp(-a[i]));
    if (out.requires_grad()) {
      auto* o = out.node();
      auto an = a.node_ptr();
      o->backward = [o, an] {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T y = o->value[i];
          g[i] += o->grad[i] * y * (T(1) - y);
        }
      };
    }
    return out;
  }

  Tens tanh(const Tens& a) {
    auto out = make(a.shape(), {a});
    auto& v = out.node()->value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(a[i]);
    if (out.requires_grad()) {
      auto* o = out.node();
      auto an = a.node_ptr();
      o->backward = [o, an] {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T y = o->value[i];
          g[i] += o->grad[i] * (T(1) - y * y);
        }
      };
    }
    return out;
  }

  // -- reshaping -----------------------------------------------------------

  /// Column-wise concatenation of tensors with equal row counts.
  Tens concat(const std::vector<Tens>& parts) {
    if (parts.empty()) throw NumericError("concat of nothing");
    const auto m = parts[0].rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
      if (p.rows() != m) throw NumericError("concat row mismatch");
      n += p.cols();
    }
    auto out = make({m, n}, parts);
    auto& v = out.node()->value;
    std::size_t off = 0;
    for (const auto& p : parts) {
      const auto pc = p.cols();
      for (std::size_t r = 0; r < m; ++r)
        std::copy_n(p.data().begin() + r * pc, pc, v.begin() + r * n + off);
      off += pc;
    }
    if (out.requires_grad()) {
      auto* o = out.node();
      std::vector<std::shared_ptr<Node<T>>> pn;
      for (const auto& p : parts) pn.push_back(p.node_ptr());
      o->backward = [o, pn, m, n] {
        std::size_t off = 0;
        for (const auto& p : pn) {
          const auto pc = p->cols();
          if (p->requires_grad) {
            auto& g = p->ensure_grad();
            for (std::size_t r = 0; r < m; ++r)
              for (std::size_t c = 0; c < pc; ++c) g[r * pc + c] += o->grad[r * n + off + c];
          }
          off += pc;
        }
      };
    }
    return out;
  }

  Tens slice_cols(const Tens& a, std::size_t start, std::size_t count) {
    const auto m = a.rows(), n = a.cols();
    if (start + count > n) throw NumericError("slice_cols out of range");
    auto out = make({m, count}, {a});
    auto& v = out.node()->value;
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(a.data().begin() + r * n + start, count, v.begin() + r * count);
    if (out.requires_grad()) {
      auto* o = out.node();
      auto an = a.node_ptr();
      o->backward = [o, an, m, n, start, count] {
        auto& g = an->ensure_grad();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < count; ++c) g[r * n + start + c] += o->grad[r * count + c];
      };
    }
    return out;
  }

  /// Embedding lookup: out row i = table row indices[i]. The backward pass
  /// scatters into the selected rows only.
  Tens gather_rows(const Tens& table, std::span<const std::int32_t> indices) {
    const auto V = table.rows(), d = table.cols();
    for (auto i : indices) {
      if (i < 0 || static_cast<std::size_t>(i) >= V) throw NumericError("gather_rows index out of range");
    }
    auto out = make({indices.size(), d}, {table});
    auto& v = out.node()->value;
    for (std::size_t r = 0; r < indices.size(); ++r)
      std::copy_n(table.data().begin() + static_cast<std::size_t>(indices[r]) * d, d,
                  v.begin() + r * d);
    if (out.requires_grad()) {
      auto* o = out.node();
      auto tn = table.node_ptr();
      std::vector<std::int32_t> idx(indices.begin(), indices.end());
      o->backward = [o, tn, idx = std::move(idx), d] {
        auto& g = tn->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r) {
          const auto base = static_cast<std::size_t>(idx[r]) * d;
          for (std::size_t c = 0; c < d; ++c) g[base + c] += o->grad[r * d + c];
        }
      };
    }
    return out;
  }

  /// Row r of the result is a's row where keep[r] != 0, otherwise b's row.
  Tens select_rows(std::span<const std::uint8_t> keep, const Tens& a, const Tens& b) {
    require_same(a, b, "select_rows");
    const auto m = a.rows(), n = a.cols();
    if (keep.size() != m) throw NumericError("select_rows mask length mismatch");
    auto out = make(a.shape(), {a, b});
    auto& v = out.node()->value;
    for (std::size_t r = 0; r < m; ++r) {
      const auto& src = keep[r] ? a : b;
      std::copy_n(src.data().begin() + r * n, n, v.begin() + r * n);
    }
    if (out.requires_grad()) {
      auto* o = out.node();
      auto an = a.node_ptr(), bn = b.node_ptr();
      std::vector<std::uint8_t> mask(keep.begin(), keep.end());
      o->backward = [o, an, bn, mask = std::move(mask), n] {
        for (std::size_t r = 0; r < mask.size(); ++r) {
          auto* dst = mask[r] ? an.get() : bn.get();
          if (!dst->requires_grad) continue;
          auto& g = dst->ensure_grad();
          for (std::size_t c = 0; c < n; ++c) g[r * n + c] += o->grad[r * n + c];
        }
      };
    }
    return out;
  }

  // -- reductions ----------------------------------------------------------

  Tens sum(const Tens& a) {
    auto out = make({1}, {a});
    T s = 0;
    for (auto x : a.data()) s += x;
    out.node()->value[0] = s;
    if (out.requires_grad()) {
      auto* o = out.node();
      auto an = a.node_ptr();
      o->backward = [o, an] {
        auto& g = an->ensure_grad();
        for (auto& x : g) x += o->grad[0];
      };
    }
    return out;
  }

  Tens mean(const Tens& a) {
    const T inv = T(1) / static_cast<T>(a.size());
    auto out = make({1}, {a});
    T s = 0;
    for (auto x : a.data()) s += x;
    out.node()->value[0] = s * inv;
    if (out.requires_grad()) {
      auto* o = out.node();
      auto an = a.node_ptr();
      o->backward = [o, an, inv] {
        auto& g = an->ensure_grad();
        for (auto& x : g) x += o->grad[0] * inv;
      };
    }
    return out;
  }

  /// Row-wise cosine similarity of two [m x k] tensors -> [m x 1]:
  /// dot(u,v) / (max(|u|,eps) * max(|v|,eps)).
  Tens cosine_rows(const Tens& u, const Tens& v, T eps = T(1e-8)) {
    require_same(u, v, "cosine_rows");
    using Acc = long double;  // squared norms of any finite float/double fit
    const auto m = u.rows(), k = u.cols();
    auto out = make({m, 1}, {u, v});
    std::vector<Acc> nu(m), nv(m);
    auto& val = out.node()->value;
    const Acc e = eps;
    for (std::size_t r = 0; r < m; ++r) {
      Acc d = 0, a = 0, b = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const Acc x = u[r * k + c], y = v[r * k + c];
        d += x * y;
        a += x * x;
        b += y * y;
      }
      nu[r] = std::sqrt(a);
      nv[r] = std::sqrt(b);
      val[r] = static_cast<T>(d / (std::max(nu[r], e) * std::max(nv[r], e)));
    }
    if (out.requires_grad()) {
      auto* o = out.node();
      auto un = u.node_ptr(), vn = v.node_ptr();
      o->backward = [o, un, vn, nu = std::move(nu), nv = std::move(nv), m, k, e] {
        // d cos / du = v / (Nu Nv) - cos * u / Nu^2   (only while |u| > eps)
        auto side = [&](Node<T>* self, Node<T>* other, const std::vector<Acc>& ns,
                        const std::vector<Acc>& no) {
          if (!self->requires_grad) return;
          auto& g = self->ensure_grad();
          for (std::size_t r = 0; r < m; ++r) {
            const Acc gr = o->grad[r];
            const Acc ds = std::max(ns[r], e), dn = std::max(no[r], e);
            const Acc cos = o->value[r];
            const bool clamped = ns[r] <= e;
            for (std::size_t c = 0; c < k; ++c) {
              Acc d = Acc(other->value[r * k + c]) / (ds * dn);
              if (!clamped) d -= cos * Acc(self->value[r * k + c]) / (ns[r] * ns[r]);
              g[r * k + c] += static_cast<T>(gr * d);
            }
          }
        };
        side(un.get(), vn.get(), nu, nv);
        side(vn.get(), un.get(), nv, nu);
      };
    }
    return out;
  }

  // -- regularization ------------------------------------------------------

  /// Inverted dropout. Identity (same handle) when not training or p == 0;
  /// the mask is a pure function of seed.
  Tens dropout(const Tens& a, double p, bool training, std::uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0)) throw NumericError("dropout p must be in [0, 1)");
    if (!training || p == 0.0) return a;
    Rng rng(seed);
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    std::vector<T> mask(a.size());
    for (auto& x : mask) x = rng.uniform() < p ? T(0) : scale;
    auto out = make(a.shape(), {a});
    auto& v = out.node()->value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * mask[i];
    if (out.requires_grad()) {
      auto* o = out.node();
      auto an = a.node_ptr();
      o->backward = [o, an, mask = std::move(mask)] {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * mask[i];
      };
    }
    return out;
  }

  // -- backward ------------------------------------------------------------

  /// Seeds d(loss)/d(loss) = 1 and runs recorded backward rules in reverse
  /// execution order. Gradients accumulate into every tracked tensor.
  void backward(const Tens& loss) {
    if (loss.size() != 1) {
      throw NumericError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;
    loss.node()->ensure_grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      auto& n = **it;
      if (n.backward && !n.grad.empty()) n.backward();
    }
  }

 private:
  Tens make(Shape shape, std::initializer_list<Tens> parents) {
    return make(std::move(shape), std::vector<Tens>(parents));
  }

  Tens make(Shape shape, const std::vector<Tens>& parents) {
    bool rg = false;
    if (grad_enabled_) {
      for (const auto& p : parents) rg = rg || p.requires_grad();
    }
    auto t = Tens::zeros(std::move(shape), rg);
    if (rg) nodes_.push_back(t.node_ptr());
    return t;
  }

  static CMapM cmap(const Tens& t) { return CMapM(t.data().data(), t.rows(), t.cols()); }

  static void require_same(const Tens& a, const Tens& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
      throw NumericError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
  }

  static void accumulate(Node<T>* dst, const std::vector<T>& g) {
    if (!dst->requires_grad) return;
    auto& d = dst->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  }

  std::vector<std::shared_ptr<Node<T>>> nodes_;
  bool grad_enabled_ = true;
};

}  // namespace charemb::ad
