#pragma once
#include <type_traits>

#include <Eigen/Dense>

#include "ocr/linalg.hpp"
#include "ocr/tensor.hpp"

namespace ocr {

namespace detail {

// Packs receptive fields of one channel group into a row-major matrix with
// one row per (sample, output position) and one column per (in-channel,
// ky, kx). Out-of-image taps read as zero.
template <class S>
void im2col_group(const S* x, std::int64_t n_batch, std::int64_t cin, std::int64_t h, std::int64_t w,
                  std::int64_t group_first_c, std::int64_t cing, std::int64_t kh, std::int64_t kw,
                  std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow, S* col) {
  const std::int64_t k = cing * kh * kw;
  for (std::int64_t n = 0; n < n_batch; ++n) {
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        S* row = col + ((n * oh + oy) * ow + ox) * k;
        std::int64_t idx = 0;
        for (std::int64_t c = 0; c < cing; ++c) {
          const S* plane = x + ((n * cin + group_first_c + c) * h) * w;
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t iy = oy * stride + ky - pad;
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const std::int64_t ix = ox * stride + kx - pad;
              row[idx++] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? plane[iy * w + ix] : S(0);
            }
          }
        }
      }
    }
  }
}

template <class S>
void col2im_group(const S* col, std::int64_t n_batch, std::int64_t cin, std::int64_t h, std::int64_t w,
                  std::int64_t group_first_c, std::int64_t cing, std::int64_t kh, std::int64_t kw,
                  std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow, S* dx) {
  const std::int64_t k = cing * kh * kw;
  for (std::int64_t n = 0; n < n_batch; ++n) {
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const S* row = col + ((n * oh + oy) * ow + ox) * k;
        std::int64_t idx = 0;
        for (std::int64_t c = 0; c < cing; ++c) {
          S* plane = dx + ((n * cin + group_first_c + c) * h) * w;
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t iy = oy * stride + ky - pad;
            for (std::int64_t kx = 0; kx < kw; ++kx, ++idx) {
              const std::int64_t ix = ox * stride + kx - pad;
              if (iy >= 0 && iy < h && ix >= 0 && ix < w) plane[iy * w + ix] += row[idx];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// Grouped 2D convolution, im2col + GEMM. input [N,Cin,H,W], weight
// [Cout,Cin/groups,kh,kw], optional bias [Cout]. Output spatial extent uses
// floor arithmetic: H' = (H + 2*pad - kh)/stride + 1.
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, std::type_identity_t<const Tensor<S>*> bias, std::int64_t stride,
                 std::int64_t pad, std::int64_t groups = 1) {
  if (x.rank() != 4) throw std::invalid_argument("conv2d: input must be [N,Cin,H,W], got " + shape_str(x.shape()));
  if (w.rank() != 4) throw std::invalid_argument("conv2d: weight must be [Cout,Cin/groups,kh,kw], got " + shape_str(w.shape()));
  const std::int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), win = x.dim(3);
  const std::int64_t cout = w.dim(0), cing = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (groups < 1) throw std::invalid_argument("conv2d: groups must be positive");
  if (cin % groups != 0)
    throw std::invalid_argument("conv2d: input channels " + std::to_string(cin) + " not divisible by groups " +
                                std::to_string(groups));
  if (cout % groups != 0)
    throw std::invalid_argument("conv2d: output channels " + std::to_string(cout) + " not divisible by groups " +
                                std::to_string(groups));
  if (cing != cin / groups)
    throw std::invalid_argument("conv2d: weight channel dim " + std::to_string(cing) + " != Cin/groups = " +
                                std::to_string(cin / groups));
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout))
    throw std::invalid_argument("conv2d: bias shape " + shape_str(bias->shape()) + " != [" + std::to_string(cout) + "]");
  if (h + 2 * pad < kh || win + 2 * pad < kw)
    throw std::invalid_argument("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                                " larger than padded input " + std::to_string(h + 2 * pad) + "x" +
                                std::to_string(win + 2 * pad));
  const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t ow = (win + 2 * pad - kw) / stride + 1;
  const std::int64_t coutg = cout / groups;
  const std::int64_t k = cing * kh * kw;
  const std::int64_t cols = n * oh * ow;
  const std::int64_t hw = oh * ow;

  std::vector<S> out(static_cast<std::size_t>(n * cout * hw));
  // Receptive-field matrices are kept for the weight gradient.
  auto saved_cols = std::make_shared<std::vector<std::vector<S>>>(static_cast<std::size_t>(groups));
  const bool keep_cols = grad_enabled() && (x.requires_grad() || w.requires_grad());

  {
    std::vector<S> colbuf;
    std::vector<S> res(static_cast<std::size_t>(coutg * cols));
    for (std::int64_t g = 0; g < groups; ++g) {
      std::vector<S>& col = keep_cols ? (*saved_cols)[static_cast<std::size_t>(g)] : colbuf;
      col.assign(static_cast<std::size_t>(cols * k), S(0));
      detail::im2col_group(x.data(), n, cin, h, win, g * cing, cing, kh, kw, stride, pad, oh, ow, col.data());
      detail::ECMap<S> wm(w.data() + g * coutg * k, coutg, k);
      detail::ECMap<S> cm(col.data(), cols, k);
      detail::EMap<S> rm(res.data(), coutg, cols);
      rm.noalias() = wm * cm.transpose();
      for (std::int64_t oc = 0; oc < coutg; ++oc) {
        const S b = bias ? bias->data()[g * coutg + oc] : S(0);
        for (std::int64_t i = 0; i < n; ++i) {
          const S* src = res.data() + oc * cols + i * hw;
          S* dst = out.data() + ((i * cout) + g * coutg + oc) * hw;
          for (std::int64_t p = 0; p < hw; ++p) dst[p] = src[p] + b;
        }
      }
    }
  }

  std::vector<Tensor<S>> inputs = {x, w};
  if (bias) inputs.push_back(*bias);
  auto bwd = [n, cin, h, win, cout, cing, kh, kw, stride, pad, groups, oh, ow, saved_cols](detail::TensorNode<S>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    const std::int64_t coutg = cout / groups;
    const std::int64_t k = cing * kh * kw;
    const std::int64_t cols = n * oh * ow;
    const std::int64_t hw = oh * ow;

    std::vector<S> gout(static_cast<std::size_t>(coutg * cols));
    std::vector<S> dcol;
    for (std::int64_t g = 0; g < groups; ++g) {
      for (std::int64_t oc = 0; oc < coutg; ++oc)
        for (std::int64_t i = 0; i < n; ++i) {
          const S* src = self.grad.data() + ((i * cout) + g * coutg + oc) * hw;
          std::copy(src, src + hw, gout.begin() + oc * cols + i * hw);
        }
      detail::ECMap<S> gm(gout.data(), coutg, cols);
      const std::vector<S>& col = (*saved_cols)[static_cast<std::size_t>(g)];
      if (pw->requires_grad) {
        pw->ensure_grad();
        detail::ECMap<S> cm(col.data(), cols, k);
        detail::EMap<S>(pw->grad.data() + g * coutg * k, coutg, k).noalias() += gm * cm;
      }
      if (px->requires_grad) {
        px->ensure_grad();
        dcol.assign(static_cast<std::size_t>(cols * k), S(0));
        detail::ECMap<S> wm(pw->value.data() + g * coutg * k, coutg, k);
        detail::EMap<S>(dcol.data(), cols, k).noalias() = gm.transpose() * wm;
        detail::col2im_group(dcol.data(), n, cin, h, win, g * cing, cing, kh, kw, stride, pad, oh, ow,
                             px->grad.data());
      }
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& pb = self.parents[2];
      pb->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t c = 0; c < cout; ++c) {
          const S* src = self.grad.data() + (i * cout + c) * hw;
          S acc = S(0);
          for (std::int64_t p = 0; p < hw; ++p) acc += src[p];
          pb->grad[static_cast<std::size_t>(c)] += acc;
        }
    }
  };
  return detail::make_op<S>({n, cout, oh, ow}, std::move(out), std::move(inputs), std::move(bwd));
}

// Max pooling; padding taps never win. Ties resolve to the first candidate
// in row-major kernel scan order.
template <class S>
Tensor<S> max_pool2d(const Tensor<S>& x, std::int64_t kernel, std::int64_t stride, std::int64_t pad) {
  if (x.rank() != 4) throw std::invalid_argument("max_pool2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = (h + 2 * pad - kernel) / stride + 1;
  const std::int64_t ow = (w + 2 * pad - kernel) / stride + 1;
  if (oh < 1 || ow < 1) throw std::invalid_argument("max_pool2d: kernel larger than padded input");
  std::vector<S> out(static_cast<std::size_t>(n * c * oh * ow));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * c * oh * ow));
  const S* px = x.data();
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const S* plane = px + nc * h * w;
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        S best = -std::numeric_limits<S>::infinity();
        std::int64_t best_idx = -1;
        for (std::int64_t ky = 0; ky < kernel; ++ky) {
          const std::int64_t iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t kx = 0; kx < kernel; ++kx) {
            const std::int64_t ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= w) continue;
            const S v = plane[iy * w + ix];
            if (v > best) {
              best = v;
              best_idx = iy * w + ix;
            }
          }
        }
        const std::int64_t o = (nc * oh + oy) * ow + ox;
        out[static_cast<std::size_t>(o)] = best;
        (*argmax)[static_cast<std::size_t>(o)] = nc * h * w + best_idx;
      }
  }
  return detail::make_op<S>({n, c, oh, ow}, std::move(out), {x}, [argmax](detail::TensorNode<S>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < argmax->size(); ++i)
      p->grad[static_cast<std::size_t>((*argmax)[i])] += self.grad[i];
  });
}

// Group normalization over [N,C,H,W] with per-channel affine parameters.
template <class S>
Tensor<S> group_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, std::int64_t groups,
                     S eps = S(1e-5)) {
  if (x.rank() != 4) throw std::invalid_argument("group_norm: input must be [N,C,H,W], got " + shape_str(x.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c % groups != 0)
    throw std::invalid_argument("group_norm: channels " + std::to_string(c) + " not divisible by groups " +
                                std::to_string(groups));
  if (gamma.size() != c || beta.size() != c)
    throw std::invalid_argument("group_norm: affine parameters must have " + std::to_string(c) + " entries");
  const std::int64_t cg = c / groups;
  const std::int64_t m = cg * h * w;  // elements per (sample, group)
  const std::int64_t hw = h * w;

  std::vector<S> out(static_cast<std::size_t>(x.size()));
  auto stats = std::make_shared<std::vector<S>>(static_cast<std::size_t>(2 * n * groups));  // mean, inv_std
  const S* px = x.data();
  const S* pg = gamma.data();
  const S* pb = beta.data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t g = 0; g < groups; ++g) {
      const S* base = px + (i * c + g * cg) * hw;
      S mu = S(0);
      for (std::int64_t j = 0; j < m; ++j) mu += base[j];
      mu /= static_cast<S>(m);
      S var = S(0);
      for (std::int64_t j = 0; j < m; ++j) {
        const S d = base[j] - mu;
        var += d * d;
      }
      var /= static_cast<S>(m);
      const S istd = S(1) / std::sqrt(var + eps);
      (*stats)[static_cast<std::size_t>(2 * (i * groups + g))] = mu;
      (*stats)[static_cast<std::size_t>(2 * (i * groups + g) + 1)] = istd;
      S* obase = out.data() + (i * c + g * cg) * hw;
      for (std::int64_t cc = 0; cc < cg; ++cc) {
        const S gam = pg[g * cg + cc];
        const S bet = pb[g * cg + cc];
        for (std::int64_t p = 0; p < hw; ++p) {
          const std::int64_t j = cc * hw + p;
          obase[j] = gam * (base[j] - mu) * istd + bet;
        }
      }
    }

  auto bwd = [n, c, h, w, groups, stats](detail::TensorNode<S>& self) {
    auto& px_ = self.parents[0];
    auto& pg_ = self.parents[1];
    auto& pb_ = self.parents[2];
    const std::int64_t cg = c / groups;
    const std::int64_t hw = h * w;
    const std::int64_t m = cg * hw;
    const bool need_dx = px_->requires_grad;
    const bool need_dg = pg_->requires_grad;
    const bool need_db = pb_->requires_grad;
    if (need_dx) px_->ensure_grad();
    if (need_dg) pg_->ensure_grad();
    if (need_db) pb_->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t g = 0; g < groups; ++g) {
        const S mu = (*stats)[static_cast<std::size_t>(2 * (i * groups + g))];
        const S istd = (*stats)[static_cast<std::size_t>(2 * (i * groups + g) + 1)];
        const S* xb = px_->value.data() + (i * c + g * cg) * hw;
        const S* gb = self.grad.data() + (i * c + g * cg) * hw;
        S s1 = S(0), s2 = S(0);
        for (std::int64_t cc = 0; cc < cg; ++cc) {
          const S gam = pg_->value[static_cast<std::size_t>(g * cg + cc)];
          for (std::int64_t p = 0; p < hw; ++p) {
            const std::int64_t j = cc * hw + p;
            const S xhat = (xb[j] - mu) * istd;
            const S gy = gb[j];
            s1 += gy * gam;
            s2 += gy * gam * xhat;
            if (need_dg) pg_->grad[static_cast<std::size_t>(g * cg + cc)] += gy * xhat;
            if (need_db) pb_->grad[static_cast<std::size_t>(g * cg + cc)] += gy;
          }
        }
        if (need_dx) {
          S* dxb = px_->grad.data() + (i * c + g * cg) * hw;
          const S inv_m = S(1) / static_cast<S>(m);
          for (std::int64_t cc = 0; cc < cg; ++cc) {
            const S gam = pg_->value[static_cast<std::size_t>(g * cg + cc)];
            for (std::int64_t p = 0; p < hw; ++p) {
              const std::int64_t j = cc * hw + p;
              const S xhat = (xb[j] - mu) * istd;
              dxb[j] += istd * (gb[j] * gam - (s1 + xhat * s2) * inv_m);
            }
          }
        }
      }
  };
  return detail::make_op<S>(x.shape(), std::move(out), {x, gamma, beta}, std::move(bwd));
}

// Global average pool: [N,C,H,W] -> [N,C].
template <class S>
Tensor<S> spatial_mean(const Tensor<S>& x) {
  if (x.rank() != 4) throw std::invalid_argument("spatial_mean: input must be [N,C,H,W], got " + shape_str(x.shape()));
  const std::int64_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<S> out(static_cast<std::size_t>(nc));
  const S* px = x.data();
  for (std::int64_t i = 0; i < nc; ++i) {
    S acc = S(0);
    for (std::int64_t p = 0; p < hw; ++p) acc += px[i * hw + p];
    out[static_cast<std::size_t>(i)] = acc / static_cast<S>(hw);
  }
  return detail::make_op<S>({x.dim(0), x.dim(1)}, std::move(out), {x}, [nc, hw](detail::TensorNode<S>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    const S inv = S(1) / static_cast<S>(hw);
    for (std::int64_t i = 0; i < nc; ++i) {
      const S g = self.grad[static_cast<std::size_t>(i)] * inv;
      for (std::int64_t q = 0; q < hw; ++q) p->grad[static_cast<std::size_t>(i * hw + q)] += g;
    }
  });
}

}  // namespace ocr
