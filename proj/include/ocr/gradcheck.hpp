#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "ocr/random.hpp"
#include "ocr/tensor.hpp"

namespace ocr {

struct FdReport {
  double max_rel_err = 0.0;
  std::int64_t checks = 0;

  void merge(const FdReport& o) {
    max_rel_err = std::max(max_rel_err, o.max_rel_err);
    checks += o.checks;
  }
};

// Central finite-difference check of d(loss)/d(leaf) against the autodiff
// sweep. make_loss must rebuild the graph from the captured leaf tensors so
// that in-place perturbation of leaf data is observed. Relative error uses
// an absolute floor so near-zero gradients are compared at FD noise level
// instead of dividing by ~0.
//
// coords_per_leaf < 0 checks every coordinate; otherwise that many randomly
// sampled coordinates per leaf (used for large parameter tensors).
inline FdReport fd_check_params(const std::function<Tensor<double>()>& make_loss,
                                const std::vector<Tensor<double>>& leaves, double h = 1e-4,
                                std::int64_t coords_per_leaf = -1, RandomStream* rng = nullptr,
                                double rel_floor = 1e-4) {
  Tensor<double> loss = make_loss();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& l : leaves)
    analytic.push_back(l.has_grad() ? l.grad_values() : std::vector<double>(static_cast<std::size_t>(l.size()), 0.0));

  FdReport report;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double> leaf = leaves[li];
    const std::int64_t n = leaf.size();
    std::vector<std::int64_t> coords;
    if (coords_per_leaf < 0 || coords_per_leaf >= n) {
      coords.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      for (std::int64_t i = 0; i < coords_per_leaf; ++i)
        coords.push_back(rng ? rng->uniform_int(0, n - 1) : (i * n) / coords_per_leaf);
    }
    for (std::int64_t j : coords) {
      double* slot = leaf.data() + j;
      const double orig = *slot;
      double lp, lm;
      {
        NoGradGuard ng;
        *slot = orig + h;
        lp = make_loss().item();
        *slot = orig - h;
        lm = make_loss().item();
        *slot = orig;
      }
      const double fd = (lp - lm) / (2.0 * h);
      const double a = analytic[li][static_cast<std::size_t>(j)];
      const double denom = std::max(std::max(std::abs(a), std::abs(fd)), rel_floor);
      const double rel = std::abs(a - fd) / denom;
      report.max_rel_err = std::max(report.max_rel_err, rel);
      ++report.checks;
    }
  }
  return report;
}

}  // namespace ocr
