#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ocr/random.hpp"
#include "ocr/tensor.hpp"

namespace ocr {

// Ordered registry of named parameter tensors. Registration order is the
// contract: the optimizer walks it, and checkpoints serialize in it.
template <class S>
struct NamedParams {
  std::vector<std::pair<std::string, Tensor<S>>> items;

  void add(std::string name, Tensor<S> t) { items.emplace_back(std::move(name), std::move(t)); }

  Tensor<S>* find(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }

  std::vector<Tensor<S>> tensors() const {
    std::vector<Tensor<S>> out;
    out.reserve(items.size());
    for (const auto& [n, t] : items) out.push_back(t);
    return out;
  }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items) n += t.size();
    return n;
  }

  void zero_grads() {
    for (auto& [n, t] : items) t.zero_grad();
  }
};

namespace init {

template <class S>
Tensor<S> uniform(Shape shape, double lo, double hi, RandomStream& rng) {
  std::vector<S> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<S>(rng.uniform(lo, hi));
  return Tensor<S>::param(std::move(shape), std::move(v));
}

// Kaiming uniform, fan-in mode with ReLU gain.
template <class S>
Tensor<S> kaiming_uniform(Shape shape, std::int64_t fan_in, RandomStream& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return uniform<S>(std::move(shape), -bound, bound, rng);
}

template <class S>
Tensor<S> xavier_uniform(Shape shape, std::int64_t fan_in, std::int64_t fan_out, RandomStream& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform<S>(std::move(shape), -bound, bound, rng);
}

template <class S>
Tensor<S> normal(Shape shape, double stddev, RandomStream& rng) {
  std::vector<S> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<S>(stddev * rng.normal());
  return Tensor<S>::param(std::move(shape), std::move(v));
}

}  // namespace init

}  // namespace ocr
