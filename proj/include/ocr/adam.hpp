#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ocr/tensor.hpp"

namespace ocr {

// Adam optimizer state. Moment buffers are kept per parameter in the same
// order as the parameter list handed to adam_step.
template <class S>
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  std::int64_t step = 0;
  std::vector<std::vector<S>> m;
  std::vector<std::vector<S>> v;

  static AdamState init(const std::vector<Tensor<S>>& params, double lr = 1e-4) {
    AdamState st;
    st.lr = lr;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto& p : params) {
      st.m.emplace_back(static_cast<std::size_t>(p.size()), S(0));
      st.v.emplace_back(static_cast<std::size_t>(p.size()), S(0));
    }
    return st;
  }
};

// One bias-corrected Adam update:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
// Weight decay, when nonzero, enters as g += wd * theta. Parameters whose
// gradient buffer is absent are treated as having zero gradient.
template <class S>
void adam_step(std::vector<Tensor<S>>& params, AdamState<S>& state) {
  if (params.size() != state.m.size())
    throw std::invalid_argument("adam_step: state holds " + std::to_string(state.m.size()) + " buffers for " +
                                std::to_string(params.size()) + " params");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(state.beta1), b2 = static_cast<S>(state.beta2);
  const S lr = static_cast<S>(state.lr), eps = static_cast<S>(state.epsilon);
  const S wd = static_cast<S>(state.weight_decay);
  const S ibc1 = static_cast<S>(1.0 / bc1), ibc2 = static_cast<S>(1.0 / bc2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<S>& p = params[i];
    const std::int64_t n = p.size();
    if (static_cast<std::int64_t>(state.m[i].size()) != n)
      throw std::invalid_argument("adam_step: moment buffer " + std::to_string(i) + " has " +
                                  std::to_string(state.m[i].size()) + " entries, param has " + std::to_string(n));
    S* theta = p.data();
    const S* grad = p.has_grad() ? p.grad() : nullptr;
    S* mi = state.m[i].data();
    S* vi = state.v[i].data();
    for (std::int64_t j = 0; j < n; ++j) {
      S g = grad ? grad[j] : S(0);
      if (wd != S(0)) g += wd * theta[j];
      mi[j] = b1 * mi[j] + (S(1) - b1) * g;
      vi[j] = b2 * vi[j] + (S(1) - b2) * g * g;
      const S mhat = mi[j] * ibc1;
      const S vhat = vi[j] * ibc2;
      theta[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace ocr
