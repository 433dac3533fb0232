#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ocr/random.hpp"

namespace ocr {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Grad mode
// ---------------------------------------------------------------------------

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// RAII guard disabling graph recording, used on inference paths.
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  bool is_leaf() const { return !backward; }
  std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

}  // namespace detail

// Dense row-major tensor handle. Copying a Tensor copies the handle, not the
// buffer; values are treated as immutable once an op has consumed them.
// data() is mutable for construction and for the optimizer, which owns its
// parameters between steps.
template <class S>
class Tensor {
 public:
  using Node = detail::TensorNode<S>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape) { return full(std::move(shape), S(0)); }

  static Tensor full(Shape shape, S v) {
    auto n = std::make_shared<Node>();
    n->value.assign(static_cast<std::size_t>(numel(shape)), v);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<S> values) {
    if (numel(shape) != static_cast<std::int64_t>(values.size()))
      throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(values.size()) + " values");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(std::move(n));
  }

  static Tensor scalar(S v) { return from({1}, {v}); }

  // Leaf tensor participating in gradient computation.
  static Tensor param(Shape shape, std::vector<S> values) {
    Tensor t = from(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  static Tensor param_zeros(Shape shape) {
    Tensor t = zeros(std::move(shape));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
  std::int64_t dim(std::int64_t i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return node_->size(); }
  bool requires_grad() const { return node_->requires_grad; }

  S* data() { return node_->value.data(); }
  const S* data() const { return node_->value.data(); }
  const std::vector<S>& values() const { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  S* grad() { return node_->grad.data(); }
  const S* grad() const { return node_->grad.data(); }
  const std::vector<S>& grad_values() const { return node_->grad; }
  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->value.size(), S(0));
  }

  S item() const {
    if (size() != 1) throw std::invalid_argument("item: tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
  }

  // Row-major element access, test convenience.
  S at(std::initializer_list<std::int64_t> idx) const {
    return node_->value[static_cast<std::size_t>(flat_index(idx))];
  }
  S& at_mut(std::initializer_list<std::int64_t> idx) {
    return node_->value[static_cast<std::size_t>(flat_index(idx))];
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const {
    if (static_cast<std::int64_t>(idx.size()) != rank())
      throw std::invalid_argument("at: index rank mismatch");
    std::int64_t off = 0;
    std::size_t k = 0;
    for (auto i : idx) {
      off = off * node_->shape[k] + i;
      ++k;
    }
    return off;
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

// Builds an op result node. Graph edges are recorded only when grad mode is
// on and at least one input needs grad; otherwise the parents and closure are
// dropped so inference builds no graph.
template <class S>
Tensor<S> make_op(Shape shape, std::vector<S> value, std::vector<Tensor<S>> inputs,
                  std::function<void(TensorNode<S>&)> backward) {
  auto n = std::make_shared<TensorNode<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  if (grad_enabled()) {
    for (const auto& t : inputs) rg = rg || t.requires_grad();
  }
  n->requires_grad = rg;
  if (rg) {
    n->parents.reserve(inputs.size());
    for (const auto& t : inputs) n->parents.push_back(t.node());
    n->backward = std::move(backward);
  }
  return Tensor<S>(std::move(n));
}

template <class S>
void add_grad(const std::shared_ptr<TensorNode<S>>& n, const S* g, std::int64_t count) {
  if (!n->requires_grad) return;
  n->ensure_grad();
  S* dst = n->grad.data();
  for (std::int64_t i = 0; i < count; ++i) dst[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. By default every gradient buffer in
// the reachable graph is zeroed first; with accumulate=true leaf gradients
// are kept and new contributions are added (interior buffers are still
// cleared, they are per-sweep scratch).
template <class S>
void backward(const Tensor<S>& loss, bool accumulate = false) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw std::invalid_argument("backward: loss does not require grad");

  using Node = detail::TensorNode<S>;
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS over requires_grad parents.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next].get();
      ++next;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : topo) {
    if (!accumulate || !n->is_leaf()) {
      n->grad.assign(n->value.size(), S(0));
    } else {
      n->ensure_grad();
    }
  }
  loss.node()->grad[0] += S(1);

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {
template <class S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}
}  // namespace detail

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("add", a, b);
  const std::int64_t n = a.size();
  std::vector<S> out(static_cast<std::size_t>(n));
  const S* pa = a.data();
  const S* pb = b.data();
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = pa[i] + pb[i];
  return detail::make_op<S>(a.shape(), std::move(out), {a, b}, [n](detail::TensorNode<S>& self) {
    detail::add_grad(self.parents[0], self.grad.data(), n);
    detail::add_grad(self.parents[1], self.grad.data(), n);
  });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("sub", a, b);
  const std::int64_t n = a.size();
  std::vector<S> out(static_cast<std::size_t>(n));
  const S* pa = a.data();
  const S* pb = b.data();
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = pa[i] - pb[i];
  return detail::make_op<S>(a.shape(), std::move(out), {a, b}, [n](detail::TensorNode<S>& self) {
    detail::add_grad(self.parents[0], self.grad.data(), n);
    auto& p1 = self.parents[1];
    if (p1->requires_grad) {
      p1->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) p1->grad[static_cast<std::size_t>(i)] -= self.grad[static_cast<std::size_t>(i)];
    }
  });
}

// Hadamard product.
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("mul", a, b);
  const std::int64_t n = a.size();
  std::vector<S> out(static_cast<std::size_t>(n));
  const S* pa = a.data();
  const S* pb = b.data();
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = pa[i] * pb[i];
  return detail::make_op<S>(a.shape(), std::move(out), {a, b}, [n](detail::TensorNode<S>& self) {
    auto& pa_ = self.parents[0];
    auto& pb_ = self.parents[1];
    if (pa_->requires_grad) {
      pa_->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        pa_->grad[static_cast<std::size_t>(i)] += self.grad[static_cast<std::size_t>(i)] * pb_->value[static_cast<std::size_t>(i)];
    }
    if (pb_->requires_grad) {
      pb_->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        pb_->grad[static_cast<std::size_t>(i)] += self.grad[static_cast<std::size_t>(i)] * pa_->value[static_cast<std::size_t>(i)];
    }
  });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  const std::int64_t n = a.size();
  std::vector<S> out(static_cast<std::size_t>(n));
  const S* pa = a.data();
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = pa[i] * c;
  return detail::make_op<S>(a.shape(), std::move(out), {a}, [n, c](detail::TensorNode<S>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) p->grad[static_cast<std::size_t>(i)] += c * self.grad[static_cast<std::size_t>(i)];
  });
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  const std::int64_t n = a.size();
  std::vector<S> out(static_cast<std::size_t>(n));
  const S* pa = a.data();
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = pa[i] + c;
  return detail::make_op<S>(a.shape(), std::move(out), {a}, [n](detail::TensorNode<S>& self) {
    detail::add_grad(self.parents[0], self.grad.data(), n);
  });
}

template <class S>
Tensor<S> neg(const Tensor<S>& a) {
  return scale(a, S(-1));
}

namespace detail {
template <class S, class F, class DF>
Tensor<S> unary_op(const Tensor<S>& a, F f, DF df_from_out) {
  const std::int64_t n = a.size();
  std::vector<S> out(static_cast<std::size_t>(n));
  const S* pa = a.data();
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = f(pa[i]);
  return make_op<S>(a.shape(), std::move(out), {a}, [n, df_from_out](TensorNode<S>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      p->grad[k] += self.grad[k] * df_from_out(p->value[k], self.value[k]);
    }
  });
}
}  // namespace detail

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return x > S(0) ? x : S(0); }, [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <class S>
Tensor<S> tanh(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return S(1) / (S(1) + std::exp(-x)); }, [](S, S y) { return y * (S(1) - y); });
}

template <class S>
Tensor<S> exp(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
  const std::int64_t n = a.size();
  S acc = S(0);
  const S* pa = a.data();
  for (std::int64_t i = 0; i < n; ++i) acc += pa[i];
  return detail::make_op<S>({1}, {acc}, {a}, [n](detail::TensorNode<S>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    const S g = self.grad[0];
    for (std::int64_t i = 0; i < n; ++i) p->grad[static_cast<std::size_t>(i)] += g;
  });
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  return scale(sum(a), S(1) / static_cast<S>(a.size()));
}

// Fixed-weight contraction to a scalar; the gradcheck suites use this to turn
// arbitrary op outputs into a scalar loss.
template <class S>
Tensor<S> weighted_sum(const Tensor<S>& a, std::vector<S> w) {
  if (static_cast<std::int64_t>(w.size()) != a.size())
    throw std::invalid_argument("weighted_sum: weight count mismatch");
  const std::int64_t n = a.size();
  S acc = S(0);
  const S* pa = a.data();
  for (std::int64_t i = 0; i < n; ++i) acc += pa[i] * w[static_cast<std::size_t>(i)];
  return detail::make_op<S>({1}, {acc}, {a}, [n, w = std::move(w)](detail::TensorNode<S>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    const S g = self.grad[0];
    for (std::int64_t i = 0; i < n; ++i) p->grad[static_cast<std::size_t>(i)] += g * w[static_cast<std::size_t>(i)];
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape new_shape) {
  if (numel(new_shape) != a.size())
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(new_shape));
  const std::int64_t n = a.size();
  std::vector<S> out(a.data(), a.data() + n);
  return detail::make_op<S>(std::move(new_shape), std::move(out), {a}, [n](detail::TensorNode<S>& self) {
    detail::add_grad(self.parents[0], self.grad.data(), n);
  });
}

// Concatenation of two tensors along an axis; all other extents must match.
template <class S>
Tensor<S> concat(const Tensor<S>& a, const Tensor<S>& b, std::int64_t axis) {
  if (a.rank() != b.rank()) throw std::invalid_argument("concat: rank mismatch");
  if (axis < 0 || axis >= a.rank()) throw std::invalid_argument("concat: axis out of range");
  for (std::int64_t i = 0; i < a.rank(); ++i) {
    if (i != axis && a.dim(i) != b.dim(i))
      throw std::invalid_argument("concat: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()) +
                                  " at axis " + std::to_string(i));
  }
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] += b.dim(axis);

  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::int64_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::int64_t na = a.dim(axis) * inner;
  const std::int64_t nb = b.dim(axis) * inner;

  std::vector<S> out(static_cast<std::size_t>(outer * (na + nb)));
  const S* pa = a.data();
  const S* pb = b.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy(pa + o * na, pa + (o + 1) * na, out.begin() + o * (na + nb));
    std::copy(pb + o * nb, pb + (o + 1) * nb, out.begin() + o * (na + nb) + na);
  }
  return detail::make_op<S>(std::move(out_shape), std::move(out), {a, b},
                            [outer, na, nb](detail::TensorNode<S>& self) {
                              auto& p0 = self.parents[0];
                              auto& p1 = self.parents[1];
                              for (std::int64_t o = 0; o < outer; ++o) {
                                const S* g = self.grad.data() + o * (na + nb);
                                if (p0->requires_grad) {
                                  p0->ensure_grad();
                                  S* d = p0->grad.data() + o * na;
                                  for (std::int64_t i = 0; i < na; ++i) d[i] += g[i];
                                }
                                if (p1->requires_grad) {
                                  p1->ensure_grad();
                                  S* d = p1->grad.data() + o * nb;
                                  for (std::int64_t i = 0; i < nb; ++i) d[i] += g[na + i];
                                }
                              }
                            });
}

// Batched transpose of the last two axes: [N,A,B] -> [N,B,A].
template <class S>
Tensor<S> transpose_12(const Tensor<S>& x) {
  if (x.rank() != 3) throw std::invalid_argument("transpose_12: expected rank 3, got " + shape_str(x.shape()));
  const std::int64_t n = x.dim(0), a = x.dim(1), b = x.dim(2);
  std::vector<S> out(static_cast<std::size_t>(n * a * b));
  const S* px = x.data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < a; ++j)
      for (std::int64_t k = 0; k < b; ++k) out[static_cast<std::size_t>((i * b + k) * a + j)] = px[(i * a + j) * b + k];
  return detail::make_op<S>({n, b, a}, std::move(out), {x}, [n, a, b](detail::TensorNode<S>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < a; ++j)
        for (std::int64_t k = 0; k < b; ++k)
          p->grad[static_cast<std::size_t>((i * a + j) * b + k)] += self.grad[static_cast<std::size_t>((i * b + k) * a + j)];
  });
}

// Stacks T step outputs of shape [N,C] into [N,T,C].
template <class S>
Tensor<S> stack_steps(const std::vector<Tensor<S>>& steps) {
  if (steps.empty()) throw std::invalid_argument("stack_steps: no steps");
  const std::int64_t n = steps[0].dim(0), c = steps[0].dim(1);
  const std::int64_t t_len = static_cast<std::int64_t>(steps.size());
  for (const auto& s : steps)
    if (s.rank() != 2 || s.dim(0) != n || s.dim(1) != c)
      throw std::invalid_argument("stack_steps: inconsistent step shape " + shape_str(s.shape()));
  std::vector<S> out(static_cast<std::size_t>(n * t_len * c));
  for (std::int64_t t = 0; t < t_len; ++t) {
    const S* ps = steps[static_cast<std::size_t>(t)].data();
    for (std::int64_t i = 0; i < n; ++i)
      std::copy(ps + i * c, ps + (i + 1) * c, out.begin() + (i * t_len + t) * c);
  }
  return detail::make_op<S>({n, t_len, c}, std::move(out), steps, [n, t_len, c](detail::TensorNode<S>& self) {
    for (std::int64_t t = 0; t < t_len; ++t) {
      auto& p = self.parents[static_cast<std::size_t>(t)];
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const S* g = self.grad.data() + (i * t_len + t) * c;
        S* d = p->grad.data() + i * c;
        for (std::int64_t k = 0; k < c; ++k) d[k] += g[k];
      }
    }
  });
}

// x[N,P,D] + pos[P,D], broadcast over the batch axis.
template <class S>
Tensor<S> add_positional(const Tensor<S>& x, const Tensor<S>& pos) {
  if (x.rank() != 3 || pos.rank() != 2 || x.dim(1) != pos.dim(0) || x.dim(2) != pos.dim(1))
    throw std::invalid_argument("add_positional: shapes " + shape_str(x.shape()) + " and " + shape_str(pos.shape()));
  const std::int64_t n = x.dim(0), pd = pos.size();
  std::vector<S> out(static_cast<std::size_t>(n * pd));
  const S* px = x.data();
  const S* pp = pos.data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < pd; ++k) out[static_cast<std::size_t>(i * pd + k)] = px[i * pd + k] + pp[k];
  return detail::make_op<S>(x.shape(), std::move(out), {x, pos}, [n, pd](detail::TensorNode<S>& self) {
    auto& px_ = self.parents[0];
    auto& pp_ = self.parents[1];
    if (px_->requires_grad) detail::add_grad(px_, self.grad.data(), n * pd);
    if (pp_->requires_grad) {
      pp_->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t k = 0; k < pd; ++k) pp_->grad[static_cast<std::size_t>(k)] += self.grad[static_cast<std::size_t>(i * pd + k)];
    }
  });
}

// x[N,P,A] + y[N,A], broadcast over the position axis.
template <class S>
Tensor<S> add_per_position(const Tensor<S>& x, const Tensor<S>& y) {
  if (x.rank() != 3 || y.rank() != 2 || x.dim(0) != y.dim(0) || x.dim(2) != y.dim(1))
    throw std::invalid_argument("add_per_position: shapes " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
  const std::int64_t n = x.dim(0), p = x.dim(1), a = x.dim(2);
  std::vector<S> out(static_cast<std::size_t>(n * p * a));
  const S* px = x.data();
  const S* py = y.data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < p; ++j)
      for (std::int64_t k = 0; k < a; ++k)
        out[static_cast<std::size_t>((i * p + j) * a + k)] = px[(i * p + j) * a + k] + py[i * a + k];
  return detail::make_op<S>(x.shape(), std::move(out), {x, y}, [n, p, a](detail::TensorNode<S>& self) {
    auto& px_ = self.parents[0];
    auto& py_ = self.parents[1];
    if (px_->requires_grad) detail::add_grad(px_, self.grad.data(), n * p * a);
    if (py_->requires_grad) {
      py_->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < p; ++j)
          for (std::int64_t k = 0; k < a; ++k)
            py_->grad[static_cast<std::size_t>(i * a + k)] += self.grad[static_cast<std::size_t>((i * p + j) * a + k)];
    }
  });
}

// Contraction of the last axis with a vector: x[N,P,A] . v[A] -> [N,P].
template <class S>
Tensor<S> inner_lastdim(const Tensor<S>& x, const Tensor<S>& v) {
  if (x.rank() != 3 || v.rank() != 1 || x.dim(2) != v.dim(0))
    throw std::invalid_argument("inner_lastdim: shapes " + shape_str(x.shape()) + " and " + shape_str(v.shape()));
  const std::int64_t np = x.dim(0) * x.dim(1), a = x.dim(2);
  std::vector<S> out(static_cast<std::size_t>(np));
  const S* px = x.data();
  const S* pv = v.data();
  for (std::int64_t r = 0; r < np; ++r) {
    S acc = S(0);
    for (std::int64_t k = 0; k < a; ++k) acc += px[r * a + k] * pv[k];
    out[static_cast<std::size_t>(r)] = acc;
  }
  return detail::make_op<S>({x.dim(0), x.dim(1)}, std::move(out), {x, v}, [np, a](detail::TensorNode<S>& self) {
    auto& px_ = self.parents[0];
    auto& pv_ = self.parents[1];
    for (std::int64_t r = 0; r < np; ++r) {
      const S g = self.grad[static_cast<std::size_t>(r)];
      if (px_->requires_grad) {
        px_->ensure_grad();
        for (std::int64_t k = 0; k < a; ++k) px_->grad[static_cast<std::size_t>(r * a + k)] += g * pv_->value[static_cast<std::size_t>(k)];
      }
      if (pv_->requires_grad) {
        pv_->ensure_grad();
        for (std::int64_t k = 0; k < a; ++k) pv_->grad[static_cast<std::size_t>(k)] += g * px_->value[static_cast<std::size_t>(r * a + k)];
      }
    }
  });
}

// Attention mixture: weights[N,P] over values[N,P,D] -> context [N,D].
template <class S>
Tensor<S> attend_mix(const Tensor<S>& weights, const Tensor<S>& values) {
  if (weights.rank() != 2 || values.rank() != 3 || weights.dim(0) != values.dim(0) || weights.dim(1) != values.dim(1))
    throw std::invalid_argument("attend_mix: shapes " + shape_str(weights.shape()) + " and " + shape_str(values.shape()));
  const std::int64_t n = weights.dim(0), p = weights.dim(1), d = values.dim(2);
  std::vector<S> out(static_cast<std::size_t>(n * d), S(0));
  const S* pw = weights.data();
  const S* pv = values.data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < p; ++j) {
      const S w = pw[i * p + j];
      const S* vrow = pv + (i * p + j) * d;
      S* orow = out.data() + i * d;
      for (std::int64_t k = 0; k < d; ++k) orow[k] += w * vrow[k];
    }
  return detail::make_op<S>({n, d}, std::move(out), {weights, values}, [n, p, d](detail::TensorNode<S>& self) {
    auto& pw_ = self.parents[0];
    auto& pv_ = self.parents[1];
    for (std::int64_t i = 0; i < n; ++i) {
      const S* g = self.grad.data() + i * d;
      for (std::int64_t j = 0; j < p; ++j) {
        const S w = pw_->value[static_cast<std::size_t>(i * p + j)];
        const S* vrow = pv_->value.data() + (i * p + j) * d;
        if (pw_->requires_grad) {
          pw_->ensure_grad();
          S acc = S(0);
          for (std::int64_t k = 0; k < d; ++k) acc += g[k] * vrow[k];
          pw_->grad[static_cast<std::size_t>(i * p + j)] += acc;
        }
        if (pv_->requires_grad) {
          pv_->ensure_grad();
          S* dv = pv_->grad.data() + (i * p + j) * d;
          for (std::int64_t k = 0; k < d; ++k) dv[k] += w * g[k];
        }
      }
    }
  });
}

// Row gather with scatter-add backward; the character embedding lookup.
template <class S>
Tensor<S> embedding(const Tensor<S>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw std::invalid_argument("embedding: table must be rank 2");
  const std::int64_t v = table.dim(0), e = table.dim(1);
  const std::int64_t n = static_cast<std::int64_t>(ids.size());
  std::vector<S> out(static_cast<std::size_t>(n * e));
  const S* pt = table.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= v)
      throw std::out_of_range("embedding: index " + std::to_string(id) + " out of range [0," + std::to_string(v) + ")");
    std::copy(pt + id * e, pt + (id + 1) * e, out.begin() + i * e);
  }
  return detail::make_op<S>({n, e}, std::move(out), {table}, [ids, e](detail::TensorNode<S>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const S* g = self.grad.data() + static_cast<std::int64_t>(i) * e;
      S* d = p->grad.data() + static_cast<std::int64_t>(ids[i]) * e;
      for (std::int64_t k = 0; k < e; ++k) d[k] += g[k];
    }
  });
}

// ---------------------------------------------------------------------------
// softmax / log_softmax / nll_loss
// ---------------------------------------------------------------------------

namespace detail {
template <class S>
void softmax_extents(const Tensor<S>& x, std::int64_t axis, std::int64_t& outer, std::int64_t& n, std::int64_t& inner) {
  if (axis < 0 || axis >= x.rank())
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  outer = 1;
  inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= x.dim(i);
  n = x.dim(axis);
  for (std::int64_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
}
}  // namespace detail

// Max-subtracted softmax along one axis.
template <class S>
Tensor<S> softmax(const Tensor<S>& x, std::int64_t axis) {
  std::int64_t outer, n, inner;
  detail::softmax_extents(x, axis, outer, n, inner);
  std::vector<S> out(static_cast<std::size_t>(x.size()));
  const S* px = x.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n * inner + in;
      S mx = px[base];
      for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, px[base + i * inner]);
      S denom = S(0);
      for (std::int64_t i = 0; i < n; ++i) {
        const S e = std::exp(px[base + i * inner] - mx);
        out[static_cast<std::size_t>(base + i * inner)] = e;
        denom += e;
      }
      for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(base + i * inner)] /= denom;
    }
  return detail::make_op<S>(x.shape(), std::move(out), {x}, [outer, n, inner](detail::TensorNode<S>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t in = 0; in < inner; ++in) {
        const std::int64_t base = o * n * inner + in;
        S dot = S(0);
        for (std::int64_t i = 0; i < n; ++i) {
          const auto k = static_cast<std::size_t>(base + i * inner);
          dot += self.grad[k] * self.value[k];
        }
        for (std::int64_t i = 0; i < n; ++i) {
          const auto k = static_cast<std::size_t>(base + i * inner);
          p->grad[k] += self.value[k] * (self.grad[k] - dot);
        }
      }
  });
}

template <class S>
Tensor<S> log_softmax(const Tensor<S>& x, std::int64_t axis) {
  std::int64_t outer, n, inner;
  detail::softmax_extents(x, axis, outer, n, inner);
  std::vector<S> out(static_cast<std::size_t>(x.size()));
  const S* px = x.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n * inner + in;
      S mx = px[base];
      for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, px[base + i * inner]);
      S denom = S(0);
      for (std::int64_t i = 0; i < n; ++i) denom += std::exp(px[base + i * inner] - mx);
      const S lse = mx + std::log(denom);
      for (std::int64_t i = 0; i < n; ++i)
        out[static_cast<std::size_t>(base + i * inner)] = px[base + i * inner] - lse;
    }
  return detail::make_op<S>(x.shape(), std::move(out), {x}, [outer, n, inner](detail::TensorNode<S>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t in = 0; in < inner; ++in) {
        const std::int64_t base = o * n * inner + in;
        S gsum = S(0);
        for (std::int64_t i = 0; i < n; ++i) gsum += self.grad[static_cast<std::size_t>(base + i * inner)];
        for (std::int64_t i = 0; i < n; ++i) {
          const auto k = static_cast<std::size_t>(base + i * inner);
          p->grad[k] += self.grad[k] - std::exp(self.value[k]) * gsum;
        }
      }
  });
}

// Mean negative log-likelihood over non-ignored positions. log_probs is
// [N,T,C], targets length N*T; positions whose target equals ignore_index
// contribute nothing to value or gradient.
template <class S>
Tensor<S> nll_loss(const Tensor<S>& log_probs, const std::vector<int>& targets, int ignore_index) {
  if (log_probs.rank() != 3)
    throw std::invalid_argument("nll_loss: expected [N,T,C] log-probs, got " + shape_str(log_probs.shape()));
  const std::int64_t n = log_probs.dim(0), t = log_probs.dim(1), c = log_probs.dim(2);
  if (static_cast<std::int64_t>(targets.size()) != n * t)
    throw std::invalid_argument("nll_loss: expected " + std::to_string(n * t) + " targets, got " +
                                std::to_string(targets.size()));
  const S* lp = log_probs.data();
  S acc = S(0);
  std::int64_t kept = 0;
  for (std::int64_t r = 0; r < n * t; ++r) {
    const int tgt = targets[static_cast<std::size_t>(r)];
    if (tgt == ignore_index) continue;
    if (tgt < 0 || tgt >= c)
      throw std::out_of_range("nll_loss: target " + std::to_string(tgt) + " out of range [0," + std::to_string(c) + ")");
    acc -= lp[r * c + tgt];
    ++kept;
  }
  const S value = kept > 0 ? acc / static_cast<S>(kept) : S(0);
  return detail::make_op<S>({1}, {value}, {log_probs}, [targets, ignore_index, c, kept](detail::TensorNode<S>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad || kept == 0) return;
    p->ensure_grad();
    const S g = self.grad[0] / static_cast<S>(kept);
    for (std::size_t r = 0; r < targets.size(); ++r) {
      const int tgt = targets[r];
      if (tgt == ignore_index) continue;
      p->grad[r * static_cast<std::size_t>(c) + static_cast<std::size_t>(tgt)] -= g;
    }
  });
}

}  // namespace ocr
