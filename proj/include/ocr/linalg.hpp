#pragma once
#include <type_traits>

#include <Eigen/Dense>

#include "ocr/tensor.hpp"

namespace ocr {

namespace detail {
template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using EMap = Eigen::Map<EMat<S>>;
template <class S>
using ECMap = Eigen::Map<const EMat<S>>;
}  // namespace detail

// Affine map y = x W^T + b with x [N,D], W [O,D], optional b [O].
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, std::type_identity_t<const Tensor<S>*> b = nullptr) {
  if (x.rank() != 2 || w.rank() != 2)
    throw std::invalid_argument("linear: expected rank-2 input and weight, got " + shape_str(x.shape()) + " and " +
                                shape_str(w.shape()));
  const std::int64_t n = x.dim(0), d = x.dim(1), o = w.dim(0);
  if (w.dim(1) != d)
    throw std::invalid_argument("linear: input feature dim " + std::to_string(d) + " != weight dim " +
                                std::to_string(w.dim(1)));
  if (b && (b->rank() != 1 || b->dim(0) != o))
    throw std::invalid_argument("linear: bias shape " + shape_str(b->shape()) + " != [" + std::to_string(o) + "]");

  std::vector<S> out(static_cast<std::size_t>(n * o));
  {
    detail::ECMap<S> xm(x.data(), n, d);
    detail::ECMap<S> wm(w.data(), o, d);
    detail::EMap<S> om(out.data(), n, o);
    om.noalias() = xm * wm.transpose();
    if (b) {
      detail::ECMap<S> bm(b->data(), 1, o);
      om.rowwise() += bm.row(0);
    }
  }
  std::vector<Tensor<S>> inputs = {x, w};
  if (b) inputs.push_back(*b);
  return detail::make_op<S>({n, o}, std::move(out), std::move(inputs), [n, d, o](detail::TensorNode<S>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    detail::ECMap<S> gm(self.grad.data(), n, o);
    if (px->requires_grad) {
      px->ensure_grad();
      detail::ECMap<S> wm(pw->value.data(), o, d);
      detail::EMap<S>(px->grad.data(), n, d).noalias() += gm * wm;
    }
    if (pw->requires_grad) {
      pw->ensure_grad();
      detail::ECMap<S> xm(px->value.data(), n, d);
      detail::EMap<S>(pw->grad.data(), o, d).noalias() += gm.transpose() * xm;
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& pb = self.parents[2];
      pb->ensure_grad();
      Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(pb->grad.data(), o) += gm.colwise().sum();
    }
  });
}

// Convenience for rank-3 inputs: applies the same affine map to every row of
// the flattened [N*P, D] view and restores [N, P, O].
template <class S>
Tensor<S> linear_3d(const Tensor<S>& x, const Tensor<S>& w, std::type_identity_t<const Tensor<S>*> b = nullptr) {
  if (x.rank() != 3) throw std::invalid_argument("linear_3d: expected rank 3, got " + shape_str(x.shape()));
  const std::int64_t n = x.dim(0), p = x.dim(1);
  Tensor<S> flat = reshape(x, {n * p, x.dim(2)});
  Tensor<S> y = linear(flat, w, b);
  return reshape(y, {n, p, y.dim(1)});
}

}  // namespace ocr
