#pragma once

#include "ocr/tensor.hpp"

namespace ocr {

// Uniform lattice over [-1,1]^2 in the sampler convention (-1 = first pixel
// center, +1 = last), shape [N,H,W,2] with (x,y) in the last axis.
template <class S>
Tensor<S> identity_grid(std::int64_t n, std::int64_t h, std::int64_t w) {
  std::vector<S> g(static_cast<std::size_t>(n * h * w * 2));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const S gx = w > 1 ? S(-1) + S(2) * static_cast<S>(x) / static_cast<S>(w - 1) : S(0);
        const S gy = h > 1 ? S(-1) + S(2) * static_cast<S>(y) / static_cast<S>(h - 1) : S(0);
        const std::int64_t o = (((i * h) + y) * w + x) * 2;
        g[static_cast<std::size_t>(o)] = gx;
        g[static_cast<std::size_t>(o + 1)] = gy;
      }
  return Tensor<S>::from({n, h, w, 2}, std::move(g));
}

namespace detail {
// Maps a normalized coordinate to pixel space and clamps to the border.
// clamped coordinates stop contributing grid gradient. Non-finite
// coordinates resolve to the border rather than indexing out of bounds.
template <class S>
inline void unnormalize_clamp(S g, std::int64_t extent, S& pix, bool& clamped) {
  const S p = (g + S(1)) * S(0.5) * static_cast<S>(extent - 1);
  if (extent == 1 || !std::isfinite(p)) {
    pix = S(0);
    clamped = true;
    return;
  }
  clamped = !(p > S(0) && p < static_cast<S>(extent - 1));
  pix = std::min(std::max(p, S(0)), static_cast<S>(extent - 1));
}
}  // namespace detail

// Differentiable bilinear sampling of input [N,C,H,W] at grid [N,H',W',2].
// Out-of-range coordinates clamp to the border.
template <class S>
Tensor<S> bilinear_sample(const Tensor<S>& x, const Tensor<S>& grid) {
  if (x.rank() != 4) throw std::invalid_argument("bilinear_sample: input must be [N,C,H,W], got " + shape_str(x.shape()));
  if (grid.rank() != 4 || grid.dim(3) != 2)
    throw std::invalid_argument("bilinear_sample: grid must be [N,H',W',2], got " + shape_str(grid.shape()));
  if (grid.dim(0) != x.dim(0))
    throw std::invalid_argument("bilinear_sample: batch mismatch " + std::to_string(x.dim(0)) + " vs " +
                                std::to_string(grid.dim(0)));
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = grid.dim(1), ow = grid.dim(2);
  const std::int64_t ohw = oh * ow;

  std::vector<S> out(static_cast<std::size_t>(n * c * ohw));
  const S* px = x.data();
  const S* pg = grid.data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t p = 0; p < ohw; ++p) {
      S fx, fy;
      bool cx, cy;
      detail::unnormalize_clamp(pg[(i * ohw + p) * 2], w, fx, cx);
      detail::unnormalize_clamp(pg[(i * ohw + p) * 2 + 1], h, fy, cy);
      const std::int64_t x0 = w > 1 ? std::min(static_cast<std::int64_t>(fx), w - 2) : 0;
      const std::int64_t y0 = h > 1 ? std::min(static_cast<std::int64_t>(fy), h - 2) : 0;
      const S wx = fx - static_cast<S>(x0);
      const S wy = fy - static_cast<S>(y0);
      const std::int64_t x1 = w > 1 ? x0 + 1 : 0;
      const std::int64_t y1 = h > 1 ? y0 + 1 : 0;
      for (std::int64_t cc = 0; cc < c; ++cc) {
        const S* plane = px + (i * c + cc) * h * w;
        const S v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
        const S v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
        out[static_cast<std::size_t>((i * c + cc) * ohw + p)] =
            (S(1) - wy) * ((S(1) - wx) * v00 + wx * v01) + wy * ((S(1) - wx) * v10 + wx * v11);
      }
    }

  auto bwd = [n, c, h, w, oh, ow](detail::TensorNode<S>& self) {
    auto& px_ = self.parents[0];
    auto& pg_ = self.parents[1];
    const std::int64_t ohw = oh * ow;
    const bool need_dx = px_->requires_grad;
    const bool need_dg = pg_->requires_grad;
    if (need_dx) px_->ensure_grad();
    if (need_dg) pg_->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t p = 0; p < ohw; ++p) {
        S fx, fy;
        bool cx, cy;
        detail::unnormalize_clamp(pg_->value[static_cast<std::size_t>((i * ohw + p) * 2)], w, fx, cx);
        detail::unnormalize_clamp(pg_->value[static_cast<std::size_t>((i * ohw + p) * 2 + 1)], h, fy, cy);
        const std::int64_t x0 = w > 1 ? std::min(static_cast<std::int64_t>(fx), w - 2) : 0;
        const std::int64_t y0 = h > 1 ? std::min(static_cast<std::int64_t>(fy), h - 2) : 0;
        const S wx = fx - static_cast<S>(x0);
        const S wy = fy - static_cast<S>(y0);
        const std::int64_t x1 = w > 1 ? x0 + 1 : 0;
        const std::int64_t y1 = h > 1 ? y0 + 1 : 0;
        S dfx = S(0), dfy = S(0);
        for (std::int64_t cc = 0; cc < c; ++cc) {
          const S g = self.grad[static_cast<std::size_t>((i * c + cc) * ohw + p)];
          const S* plane = px_->value.data() + (i * c + cc) * h * w;
          const S v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
          const S v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
          if (need_dx) {
            S* dplane = px_->grad.data() + (i * c + cc) * h * w;
            dplane[y0 * w + x0] += g * (S(1) - wy) * (S(1) - wx);
            dplane[y0 * w + x1] += g * (S(1) - wy) * wx;
            dplane[y1 * w + x0] += g * wy * (S(1) - wx);
            dplane[y1 * w + x1] += g * wy * wx;
          }
          if (need_dg) {
            dfx += g * ((S(1) - wy) * (v01 - v00) + wy * (v11 - v10));
            dfy += g * ((S(1) - wx) * (v10 - v00) + wx * (v11 - v01));
          }
        }
        if (need_dg) {
          if (!cx) pg_->grad[static_cast<std::size_t>((i * ohw + p) * 2)] += dfx * S(0.5) * static_cast<S>(w - 1);
          if (!cy) pg_->grad[static_cast<std::size_t>((i * ohw + p) * 2 + 1)] += dfy * S(0.5) * static_cast<S>(h - 1);
        }
      }
  };
  return detail::make_op<S>({n, c, oh, ow}, std::move(out), {x, grid}, std::move(bwd));
}

}  // namespace ocr
