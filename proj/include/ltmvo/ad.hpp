#pragma once

// Minimal reverse-mode autodiff over dense tensors. The scalar type is a
// template parameter: training runs float, gradient checking runs double.
// One graph is owned by one thread; parameters (leaf nodes) outlive graphs.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace ltmvo::ad {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void()> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  static Var constant(Shape shape, std::vector<T> values) {
    check_sized(shape, values);
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Var(n);
  }

  static Var scalar(T v) { return constant({1}, {v}); }

  /// Leaf with a gradient slot (parameter or gradcheck input).
  static Var leaf(Shape shape, std::vector<T> values) {
    Var v = constant(std::move(shape), std::move(values));
    v.n_->requires_grad = true;
    v.n_->ensure_grad();
    return v;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int64_t size() const { return static_cast<int64_t>(n_->value.size()); }
  const std::vector<T>& value() const { return n_->value; }
  std::vector<T>& mutable_value() { return n_->value; }
  const std::vector<T>& grad() const { return n_->grad; }
  std::vector<T>& mutable_grad() { return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }
  std::shared_ptr<Node<T>> node() const { return n_; }

  void zero_grad() {
    if (n_->requires_grad) n_->grad.assign(n_->value.size(), T(0));
  }

 private:
  static void check_sized(const Shape& s, const std::vector<T>& v) {
    if (numel(s) != static_cast<int64_t>(v.size()))
      throw std::invalid_argument("tensor: shape " + shape_str(s) + " does not match " +
                                  std::to_string(v.size()) + " values");
  }
  std::shared_ptr<Node<T>> n_;
};

namespace detail {

template <typename T>
inline std::shared_ptr<Node<T>> make_node(Shape shape,
                                          std::vector<std::shared_ptr<Node<T>>> parents) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value.assign(numel(n->shape), T(0));
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  if (n->requires_grad) n->ensure_grad();
  return n;
}

template <typename T>
inline void assert_finite(const Node<T>& n, const char* op) {
#ifndef NDEBUG
  for (T v : n.value) assert(std::isfinite(static_cast<double>(v)) && op);
#else
  (void)n;
  (void)op;
#endif
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

/// Reverse pass from a scalar root; accumulates into every reachable leaf
/// with requires_grad set. Gradients add up across calls until zero_grad.
template <typename T>
void backward(const Var<T>& root) {
  detail::require(root.size() == 1, "backward: root must be scalar");
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior op nodes are graph temporaries: reset them so repeated backward
  // calls over the same graph accumulate only into leaves.
  for (Node<T>* n : order)
    if (n->backprop) n->grad.assign(n->value.size(), T(0));
  root.node()->ensure_grad();
  root.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop();
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename Bwd>
Var<T> unary_op(const Var<T>& x, const char* name, Fwd fwd, Bwd bwd) {
  auto n = detail::make_node<T>(x.shape(), {x.node()});
  const auto& xv = x.value();
  for (size_t i = 0; i < xv.size(); ++i) n->value[i] = fwd(xv[i]);
  if (n->requires_grad) {
    auto xp = x.node();
    auto np = n.get();
    n->backprop = [xp, np, bwd] {
      for (size_t i = 0; i < xp->value.size(); ++i)
        xp->grad[i] += np->grad[i] * bwd(xp->value[i], np->value[i]);
    };
  }
  detail::assert_finite(*n, name);
  return Var<T>(n);
}

template <typename T>
Var<T> binary_op(const Var<T>& a, const Var<T>& b, const char* name,
                 T (*fwd)(T, T), T (*da)(T, T, T), T (*db)(T, T, T)) {
  detail::require(a.shape() == b.shape(),
                  std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  auto n = detail::make_node<T>(a.shape(), {a.node(), b.node()});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (size_t i = 0; i < av.size(); ++i) n->value[i] = fwd(av[i], bv[i]);
  if (n->requires_grad) {
    auto ap = a.node();
    auto bp = b.node();
    auto np = n.get();
    n->backprop = [ap, bp, np, da, db] {
      for (size_t i = 0; i < np->value.size(); ++i) {
        const T g = np->grad[i];
        if (ap->requires_grad) ap->grad[i] += g * da(ap->value[i], bp->value[i], np->value[i]);
        if (bp->requires_grad) bp->grad[i] += g * db(ap->value[i], bp->value[i], np->value[i]);
      }
    };
  }
  detail::assert_finite(*n, name);
  return Var<T>(n);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary_op<T>(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary_op<T>(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary_op<T>(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return binary_op<T>(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T out) { return -out / y; });
}

/// Elementwise minimum; ties route the gradient to the first argument.
template <typename T>
Var<T> minimum(const Var<T>& a, const Var<T>& b) {
  return binary_op<T>(
      a, b, "minimum", [](T x, T y) { return x < y ? x : y; },
      [](T x, T y, T) { return x <= y ? T(1) : T(0); },
      [](T x, T y, T) { return x <= y ? T(0) : T(1); });
}

template <typename T>
Var<T> scale(const Var<T>& x, T c) {
  return unary_op(x, "scale", [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> add_const(const Var<T>& x, T c) {
  return unary_op(x, "add_const", [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> neg(const Var<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return unary_op(x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> sqrt_op(const Var<T>& x) {
  return unary_op(
      x, "sqrt", [](T v) { return std::sqrt(v); },
      [](T, T out) { return T(0.5) / out; });
}

template <typename T>
Var<T> abs_op(const Var<T>& x) {
  return unary_op(
      x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> exp_op(const Var<T>& x) {
  return unary_op(x, "exp", [](T v) { return std::exp(v); }, [](T, T out) { return out; });
}

template <typename T>
Var<T> sin_op(const Var<T>& x) {
  return unary_op(x, "sin", [](T v) { return std::sin(v); },
                  [](T v, T) { return std::cos(v); });
}

template <typename T>
Var<T> cos_op(const Var<T>& x) {
  return unary_op(x, "cos", [](T v) { return std::cos(v); },
                  [](T v, T) { return -std::sin(v); });
}

template <typename T>
Var<T> reciprocal(const Var<T>& x) {
  return unary_op(x, "reciprocal", [](T v) { return T(1) / v; },
                  [](T, T out) { return -out * out; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary_op(x, "relu", [](T v) { return v > T(0) ? v : T(0); },
                  [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary_op(
      x, "sigmoid", [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T out) { return out * (T(1) - out); });
}

template <typename T>
Var<T> tanh_op(const Var<T>& x) {
  return unary_op(x, "tanh", [](T v) { return std::tanh(v); },
                  [](T, T out) { return T(1) - out * out; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& x) {
  auto n = detail::make_node<T>({1}, {x.node()});
  T acc = T(0);
  for (T v : x.value()) acc += v;
  n->value[0] = acc;
  if (n->requires_grad) {
    auto xp = x.node();
    auto np = n.get();
    n->backprop = [xp, np] {
      const T g = np->grad[0];
      for (auto& gv : xp->grad) gv += g;
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / T(x.size()));
}

/// Mean over entries whose mask byte is nonzero. An empty mask yields 0 and
/// propagates no gradient; callers that need to warn inspect the mask
/// themselves.
template <typename T>
Var<T> masked_mean(const Var<T>& x, const std::vector<uint8_t>& mask) {
  detail::require(static_cast<int64_t>(mask.size()) == x.size(),
                  "masked_mean: mask size mismatch");
  auto n = detail::make_node<T>({1}, {x.node()});
  int64_t count = 0;
  T acc = T(0);
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      acc += x.value()[i];
      ++count;
    }
  n->value[0] = count > 0 ? acc / T(count) : T(0);
  if (n->requires_grad && count > 0) {
    auto xp = x.node();
    auto np = n.get();
    auto m = mask;
    const T inv = T(1) / T(count);
    n->backprop = [xp, np, m = std::move(m), inv] {
      const T g = np->grad[0] * inv;
      for (size_t i = 0; i < m.size(); ++i)
        if (m[i]) xp->grad[i] += g;
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> dot(const Var<T>& a, const Var<T>& b) {
  return sum(mul(a, b));
}

// ---------------------------------------------------------------------------
// Shape movement
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  detail::require(numel(shape) == x.size(), "reshape: element count mismatch");
  auto n = detail::make_node<T>(shape, {x.node()});
  n->value = x.value();
  if (n->requires_grad) {
    auto xp = x.node();
    auto np = n.get();
    n->backprop = [xp, np] {
      for (size_t i = 0; i < xp->grad.size(); ++i) xp->grad[i] += np->grad[i];
    };
  }
  return Var<T>(n);
}

/// Concatenation along axis 0; trailing dimensions must agree.
template <typename T>
Var<T> concat0(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat0: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  int total = 0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    detail::require(t == tail, "concat0: trailing shape mismatch");
    total += p.shape()[0];
    parents.push_back(p.node());
  }
  Shape out_shape = parts[0].shape();
  out_shape[0] = total;
  auto n = detail::make_node<T>(out_shape, parents);
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().begin(), p.value().end(), n->value.begin() + off);
    off += p.value().size();
  }
  if (n->requires_grad) {
    auto np = n.get();
    auto ps = n->parents;
    n->backprop = [np, ps] {
      size_t off = 0;
      for (const auto& p : ps) {
        if (p->requires_grad)
          for (size_t i = 0; i < p->value.size(); ++i) p->grad[i] += np->grad[off + i];
        off += p->value.size();
      }
    };
  }
  return Var<T>(n);
}

/// Slice [from, from+count) along axis 0.
template <typename T>
Var<T> slice0(const Var<T>& x, int from, int count) {
  detail::require(!x.shape().empty() && from >= 0 && count > 0 &&
                      from + count <= x.shape()[0],
                  "slice0: range out of bounds");
  Shape out_shape = x.shape();
  out_shape[0] = count;
  const int64_t stride = numel(Shape(x.shape().begin() + 1, x.shape().end()));
  auto n = detail::make_node<T>(out_shape, {x.node()});
  std::copy(x.value().begin() + from * stride, x.value().begin() + (from + count) * stride,
            n->value.begin());
  if (n->requires_grad) {
    auto xp = x.node();
    auto np = n.get();
    const int64_t off = from * stride;
    n->backprop = [xp, np, off] {
      for (size_t i = 0; i < np->value.size(); ++i) xp->grad[off + i] += np->grad[i];
    };
  }
  return Var<T>(n);
}

/// Gathers arbitrary flat indices into a rank-1 tensor.
template <typename T>
Var<T> gather(const Var<T>& x, std::vector<int> indices) {
  for (int i : indices)
    detail::require(i >= 0 && i < x.size(), "gather: index out of range");
  auto n = detail::make_node<T>({static_cast<int>(indices.size())}, {x.node()});
  for (size_t i = 0; i < indices.size(); ++i) n->value[i] = x.value()[indices[i]];
  if (n->requires_grad) {
    auto xp = x.node();
    auto np = n.get();
    n->backprop = [xp, np, idx = std::move(indices)] {
      for (size_t i = 0; i < idx.size(); ++i) xp->grad[idx[i]] += np->grad[i];
    };
  }
  return Var<T>(n);
}

// ---------------------------------------------------------------------------
// Small dense linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require(a.shape().size() == 2 && b.shape().size() == 2 &&
                      a.shape()[1] == b.shape()[0],
                  "matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
  auto n = detail::make_node<T>({m, p}, {a.node(), b.node()});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < p; ++j) {
      T acc = T(0);
      for (int l = 0; l < k; ++l) acc += av[i * k + l] * bv[l * p + j];
      n->value[i * p + j] = acc;
    }
  if (n->requires_grad) {
    auto ap = a.node();
    auto bp = b.node();
    auto np = n.get();
    n->backprop = [ap, bp, np, m, k, p] {
      if (ap->requires_grad)
        for (int i = 0; i < m; ++i)
          for (int l = 0; l < k; ++l) {
            T acc = T(0);
            for (int j = 0; j < p; ++j) acc += np->grad[i * p + j] * bp->value[l * p + j];
            ap->grad[i * k + l] += acc;
          }
      if (bp->requires_grad)
        for (int l = 0; l < k; ++l)
          for (int j = 0; j < p; ++j) {
            T acc = T(0);
            for (int i = 0; i < m; ++i) acc += ap->value[i * k + l] * np->grad[i * p + j];
            bp->grad[l * p + j] += acc;
          }
    };
  }
  return Var<T>(n);
}

/// x: (C, N), col: (C) broadcast-added to every column.
template <typename T>
Var<T> add_col_broadcast(const Var<T>& x, const Var<T>& col) {
  detail::require(x.shape().size() == 2 && col.size() == x.shape()[0],
                  "add_col_broadcast: shape mismatch");
  const int c = x.shape()[0];
  const int w = x.shape()[1];
  auto n = detail::make_node<T>(x.shape(), {x.node(), col.node()});
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < w; ++j) n->value[i * w + j] = x.value()[i * w + j] + col.value()[i];
  if (n->requires_grad) {
    auto xp = x.node();
    auto cp = col.node();
    auto np = n.get();
    n->backprop = [xp, cp, np, c, w] {
      if (xp->requires_grad)
        for (size_t i = 0; i < np->value.size(); ++i) xp->grad[i] += np->grad[i];
      if (cp->requires_grad)
        for (int i = 0; i < c; ++i) {
          T acc = T(0);
          for (int j = 0; j < w; ++j) acc += np->grad[i * w + j];
          cp->grad[i] += acc;
        }
    };
  }
  return Var<T>(n);
}

/// Multiplies every row of x (C, N) by the rank-1 tensor row (N).
template <typename T>
Var<T> mul_row_broadcast(const Var<T>& x, const Var<T>& row) {
  detail::require(x.shape().size() == 2 && row.size() == x.shape()[1],
                  "mul_row_broadcast: shape mismatch");
  const int c = x.shape()[0];
  const int w = x.shape()[1];
  auto n = detail::make_node<T>(x.shape(), {x.node(), row.node()});
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < w; ++j) n->value[i * w + j] = x.value()[i * w + j] * row.value()[j];
  if (n->requires_grad) {
    auto xp = x.node();
    auto rp = row.node();
    auto np = n.get();
    n->backprop = [xp, rp, np, c, w] {
      if (xp->requires_grad)
        for (int i = 0; i < c; ++i)
          for (int j = 0; j < w; ++j) xp->grad[i * w + j] += np->grad[i * w + j] * rp->value[j];
      if (rp->requires_grad)
        for (int j = 0; j < w; ++j) {
          T acc = T(0);
          for (int i = 0; i < c; ++i) acc += np->grad[i * w + j] * xp->value[i * w + j];
          rp->grad[j] += acc;
        }
    };
  }
  return Var<T>(n);
}

/// Multiplies x elementwise by a broadcast scalar variable (shape {1}).
template <typename T>
Var<T> scale_by(const Var<T>& x, const Var<T>& s) {
  detail::require(s.size() == 1, "scale_by: scalar expected");
  auto n = detail::make_node<T>(x.shape(), {x.node(), s.node()});
  const T sv = s.value()[0];
  for (size_t i = 0; i < x.value().size(); ++i) n->value[i] = x.value()[i] * sv;
  if (n->requires_grad) {
    auto xp = x.node();
    auto sp = s.node();
    auto np = n.get();
    n->backprop = [xp, sp, np] {
      const T sv = sp->value[0];
      if (xp->requires_grad)
        for (size_t i = 0; i < np->value.size(); ++i) xp->grad[i] += np->grad[i] * sv;
      if (sp->requires_grad) {
        T acc = T(0);
        for (size_t i = 0; i < np->value.size(); ++i) acc += np->grad[i] * xp->value[i];
        sp->grad[0] += acc;
      }
    };
  }
  return Var<T>(n);
}

/// Softmax over a rank-1 tensor.
template <typename T>
Var<T> softmax(const Var<T>& x) {
  detail::require(x.shape().size() == 1, "softmax: rank-1 input expected");
  auto n = detail::make_node<T>(x.shape(), {x.node()});
  T mx = x.value()[0];
  for (T v : x.value()) mx = std::max(mx, v);
  T z = T(0);
  for (size_t i = 0; i < x.value().size(); ++i) {
    n->value[i] = std::exp(x.value()[i] - mx);
    z += n->value[i];
  }
  for (auto& v : n->value) v /= z;
  if (n->requires_grad) {
    auto xp = x.node();
    auto np = n.get();
    n->backprop = [xp, np] {
      T gdot = T(0);
      for (size_t i = 0; i < np->value.size(); ++i) gdot += np->grad[i] * np->value[i];
      for (size_t i = 0; i < np->value.size(); ++i)
        xp->grad[i] += np->value[i] * (np->grad[i] - gdot);
    };
  }
  return Var<T>(n);
}

}  // namespace ltmvo::ad
