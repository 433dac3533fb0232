#pragma once

#include "ocr/conv.hpp"
#include "ocr/linalg.hpp"
#include "ocr/params.hpp"

namespace ocr {

// Largest power-of-two group count up to 8 that divides the channel count.
inline std::int64_t norm_groups(std::int64_t channels) {
  for (std::int64_t g : {8, 4, 2})
    if (channels % g == 0) return g;
  return 1;
}

template <class S>
struct Conv2dLayer {
  Tensor<S> weight;
  Tensor<S> bias;
  std::int64_t stride = 1;
  std::int64_t pad = 0;
  std::int64_t groups = 1;
  bool has_bias = true;

  static Conv2dLayer make(std::int64_t cin, std::int64_t cout, std::int64_t kernel, std::int64_t stride,
                          std::int64_t pad, std::int64_t groups, bool bias, RandomStream& rng) {
    Conv2dLayer l;
    const std::int64_t cing = cin / groups;
    l.weight = init::kaiming_uniform<S>({cout, cing, kernel, kernel}, cing * kernel * kernel, rng);
    l.has_bias = bias;
    if (bias) l.bias = Tensor<S>::param_zeros({cout});
    l.stride = stride;
    l.pad = pad;
    l.groups = groups;
    return l;
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return conv2d(x, weight, has_bias ? &bias : nullptr, stride, pad, groups);
  }

  void collect(const std::string& prefix, NamedParams<S>& reg) {
    reg.add(prefix + ".weight", weight);
    if (has_bias) reg.add(prefix + ".bias", bias);
  }
};

template <class S>
struct GroupNormLayer {
  Tensor<S> gamma;
  Tensor<S> beta;
  std::int64_t groups = 1;

  static GroupNormLayer make(std::int64_t channels) {
    GroupNormLayer l;
    l.gamma = Tensor<S>::param(Shape{channels}, std::vector<S>(static_cast<std::size_t>(channels), S(1)));
    l.beta = Tensor<S>::param_zeros({channels});
    l.groups = norm_groups(channels);
    return l;
  }

  Tensor<S> forward(const Tensor<S>& x) const { return group_norm(x, gamma, beta, groups); }

  void collect(const std::string& prefix, NamedParams<S>& reg) {
    reg.add(prefix + ".gamma", gamma);
    reg.add(prefix + ".beta", beta);
  }
};

template <class S>
struct LinearLayer {
  Tensor<S> w;
  Tensor<S> b;
  bool has_bias = true;

  static LinearLayer make(std::int64_t in, std::int64_t out, RandomStream& rng, bool bias = true) {
    LinearLayer l;
    l.w = init::xavier_uniform<S>({out, in}, in, out, rng);
    l.has_bias = bias;
    if (bias) l.b = Tensor<S>::param_zeros({out});
    return l;
  }

  Tensor<S> forward(const Tensor<S>& x) const { return linear(x, w, has_bias ? &b : nullptr); }

  void collect(const std::string& prefix, NamedParams<S>& reg) {
    reg.add(prefix + ".w", w);
    if (has_bias) reg.add(prefix + ".b", b);
  }
};

}  // namespace ocr
