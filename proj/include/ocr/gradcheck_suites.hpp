#pragma once

#include "ocr/data.hpp"
#include "ocr/gradcheck.hpp"
#include "ocr/model.hpp"

namespace ocr {
namespace gradsuite {

struct OpReport {
  std::string op;
  FdReport fd;
  double tol = 1e-3;

  bool pass() const { return fd.max_rel_err < tol; }
};

namespace detail {

using T = Tensor<double>;

inline std::vector<double> rand_vec(std::int64_t n, RandomStream& rng, double lo = -1, double hi = 1) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline FdReport check_conv2d(RandomStream& rng, std::int64_t configs) {
  FdReport total;
  for (std::int64_t rep = 0; rep < configs; ++rep) {
    const std::int64_t groups = rep % 3 == 0 ? 1 : rng.uniform_int(1, 3);
    const std::int64_t cing = rng.uniform_int(1, 3), coutg = rng.uniform_int(1, 3);
    const std::int64_t cin = groups * cing, cout = groups * coutg;
    const std::int64_t kh = rng.uniform_int(1, 3), kw = rng.uniform_int(1, 3);
    const std::int64_t stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, 1);
    const std::int64_t n = rng.uniform_int(1, 2);
    const std::int64_t h = kh + rng.uniform_int(1, 4), w = kw + rng.uniform_int(1, 4);
    T x = T::param({n, cin, h, w}, rand_vec(n * cin * h * w, rng));
    T wt = T::param({cout, cing, kh, kw}, rand_vec(cout * cing * kh * kw, rng));
    T b = T::param({cout}, rand_vec(cout, rng));
    const std::int64_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> lw = rand_vec(n * cout * oh * ow, rng);
    auto loss = [&]() { return weighted_sum(conv2d(x, wt, &b, stride, pad, groups), lw); };
    total.merge(fd_check_params(loss, {x, wt, b}));
  }
  return total;
}

inline FdReport check_gru(RandomStream& rng, std::int64_t configs) {
  FdReport total;
  for (std::int64_t rep = 0; rep < configs; ++rep) {
    const std::int64_t n = rng.uniform_int(1, 3), din = rng.uniform_int(1, 5), dh = rng.uniform_int(1, 5);
    GruParams<double> p = GruParams<double>::init(din, dh, rng);
    T x = T::param({n, din}, rand_vec(n * din, rng));
    T h = T::param({n, dh}, rand_vec(n * dh, rng));
    std::vector<double> lw = rand_vec(n * dh, rng);
    auto loss = [&]() { return weighted_sum(gru_cell(x, h, p), lw); };
    total.merge(fd_check_params(loss, {x, h, p.wz, p.wr, p.wn, p.uz, p.ur, p.un, p.bz, p.br, p.bn}));
  }
  return total;
}

inline FdReport check_bilinear(RandomStream& rng, std::int64_t configs) {
  FdReport total;
  for (std::int64_t rep = 0; rep < configs; ++rep) {
    const std::int64_t c = rng.uniform_int(1, 3), h = rng.uniform_int(2, 6), w = rng.uniform_int(2, 6);
    const std::int64_t oh = rng.uniform_int(1, 4), ow = rng.uniform_int(1, 4);
    T x = T::param({1, c, h, w}, rand_vec(c * h * w, rng));
    // Sampling points stay clear of cell boundaries and the border so the
    // interpolant is smooth across the FD window.
    std::vector<double> gv(static_cast<std::size_t>(oh * ow * 2));
    for (std::size_t i = 0; i < gv.size(); ++i) {
      const std::int64_t extent = (i % 2 == 0) ? w : h;
      while (true) {
        const double g = rng.uniform(-0.9, 0.9);
        const double pix = (g + 1.0) / 2.0 * static_cast<double>(extent - 1);
        const double frac = pix - std::floor(pix);
        if (frac > 0.05 && frac < 0.95) {
          gv[i] = g;
          break;
        }
      }
    }
    T grid = T::param({1, oh, ow, 2}, gv);
    std::vector<double> lw = rand_vec(c * oh * ow, rng);
    auto loss = [&]() { return weighted_sum(bilinear_sample(x, grid), lw); };
    total.merge(fd_check_params(loss, {x, grid}));
  }
  return total;
}

inline FdReport check_softmax(RandomStream& rng, std::int64_t configs, bool log_variant) {
  FdReport total;
  for (std::int64_t rep = 0; rep < configs; ++rep) {
    const std::int64_t a = rng.uniform_int(1, 3), b = rng.uniform_int(2, 6), c = rng.uniform_int(1, 3);
    const std::int64_t axis = rng.uniform_int(0, 2);
    T x = T::param({a, b, c}, rand_vec(a * b * c, rng, -3, 3));
    std::vector<double> lw = rand_vec(a * b * c, rng);
    auto loss = [&]() { return weighted_sum(log_variant ? log_softmax(x, axis) : softmax(x, axis), lw); };
    total.merge(fd_check_params(loss, {x}));
  }
  return total;
}

inline FdReport check_nll(RandomStream& rng, std::int64_t configs) {
  FdReport total;
  for (std::int64_t rep = 0; rep < configs; ++rep) {
    const std::int64_t n = rng.uniform_int(1, 3), t = rng.uniform_int(1, 4), c = rng.uniform_int(2, 6);
    const int ignore = static_cast<int>(c);  // outside the class range
    std::vector<int> targets(static_cast<std::size_t>(n * t));
    for (auto& tv : targets) tv = rng.bernoulli(0.3) ? ignore : static_cast<int>(rng.uniform_int(0, c - 1));
    T x = T::param({n, t, c}, rand_vec(n * t * c, rng, -2, 0));
    auto loss = [&]() { return nll_loss(x, targets, ignore); };
    total.merge(fd_check_params(loss, {x}));
  }
  return total;
}

inline FdReport check_tps_grid(RandomStream& rng, std::int64_t configs) {
  FdReport total;
  FiducialSet base = base_fiducials(20);
  for (std::int64_t rep = 0; rep < configs; ++rep) {
    TpsMapper mapper(base, rng.uniform_int(2, 6), rng.uniform_int(2, 8));
    std::vector<double> pv;
    for (const auto& p : base.points) {
      pv.push_back(p[0] + rng.uniform(-0.1, 0.1));
      pv.push_back(p[1] + rng.uniform(-0.1, 0.1));
    }
    T pred = T::param({1, 20, 2}, pv);
    std::vector<double> lw = rand_vec(mapper.out_h() * mapper.out_w() * 2, rng);
    auto loss = [&]() { return weighted_sum(build_grid(pred, mapper), lw); };
    total.merge(fd_check_params(loss, {pred}));
  }
  return total;
}

inline FdReport check_attention(RandomStream& rng, std::int64_t configs) {
  FdReport total;
  for (std::int64_t rep = 0; rep < configs; ++rep) {
    HeadDims dims;
    dims.channels = rng.uniform_int(2, 6);
    dims.attn_dim = rng.uniform_int(2, 5);
    dims.hidden = rng.uniform_int(2, 6);
    const std::int64_t n = rng.uniform_int(1, 2), p = dims.positions();
    Attention<double> attn = Attention<double>::make(dims, rng);
    T keys = T::param({n, p, dims.channels}, rand_vec(n * p * dims.channels, rng));
    T values = T::param({n, p, dims.channels}, rand_vec(n * p * dims.channels, rng));
    T hidden = T::param({n, dims.hidden}, rand_vec(n * dims.hidden, rng));
    std::vector<double> lw_ctx = rand_vec(n * dims.channels, rng);
    std::vector<double> lw_w = rand_vec(n * p, rng);
    auto loss = [&]() {
      HeadMemory<double> mem;
      mem.keys = keys;
      mem.values = values;
      mem.keys_proj = attn.project_keys(keys);
      auto [context, weights] = attn.attend(hidden, mem);
      return add(weighted_sum(context, lw_ctx), weighted_sum(weights, lw_w));
    };
    total.merge(fd_check_params(loss, {keys, values, hidden, attn.wk.w, attn.wk.b, attn.wh.w, attn.v}));
  }
  return total;
}

inline FdReport check_group_norm(RandomStream& rng, std::int64_t configs) {
  FdReport total;
  for (std::int64_t rep = 0; rep < configs; ++rep) {
    const std::int64_t groups = rng.uniform_int(1, 3);
    const std::int64_t c = groups * rng.uniform_int(1, 3);
    const std::int64_t n = rng.uniform_int(1, 2), h = rng.uniform_int(2, 4), w = rng.uniform_int(2, 4);
    T x = T::param({n, c, h, w}, rand_vec(n * c * h * w, rng, -2, 2));
    T gamma = T::param({c}, rand_vec(c, rng, 0.5, 1.5));
    T beta = T::param({c}, rand_vec(c, rng, -0.5, 0.5));
    std::vector<double> lw = rand_vec(n * c * h * w, rng);
    auto loss = [&]() { return weighted_sum(group_norm(x, gamma, beta, groups), lw); };
    total.merge(fd_check_params(loss, {x, gamma, beta}));
  }
  return total;
}

inline FdReport check_max_pool(RandomStream& rng, std::int64_t configs) {
  FdReport total;
  for (std::int64_t rep = 0; rep < configs; ++rep) {
    const std::int64_t c = rng.uniform_int(1, 2), h = rng.uniform_int(4, 7), w = rng.uniform_int(4, 7);
    const std::int64_t kernel = rng.uniform_int(2, 3), stride = rng.uniform_int(1, 2);
    // Values widely separated in every window so FD never crosses an argmax
    // switch.
    std::vector<double> xv(static_cast<std::size_t>(c * h * w));
    std::vector<std::int64_t> order(xv.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
    for (std::int64_t i = static_cast<std::int64_t>(order.size()) - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    for (std::size_t i = 0; i < xv.size(); ++i) xv[i] = 0.01 * static_cast<double>(order[i]);
    T x = T::param({1, c, h, w}, xv);
    const std::int64_t oh = (h + 2 - kernel) / stride + 1, ow = (w + 2 - kernel) / stride + 1;
    std::vector<double> lw = rand_vec(c * oh * ow, rng);
    auto loss = [&]() { return weighted_sum(max_pool2d(x, kernel, stride, 1), lw); };
    total.merge(fd_check_params(loss, {x}));
  }
  return total;
}

inline FdReport check_linear(RandomStream& rng, std::int64_t configs) {
  FdReport total;
  for (std::int64_t rep = 0; rep < configs; ++rep) {
    const std::int64_t n = rng.uniform_int(1, 4), d = rng.uniform_int(1, 6), o = rng.uniform_int(1, 6);
    T x = T::param({n, d}, rand_vec(n * d, rng));
    T w = T::param({o, d}, rand_vec(o * d, rng));
    T b = T::param({o}, rand_vec(o, rng));
    std::vector<double> lw = rand_vec(n * o, rng);
    auto loss = [&]() { return weighted_sum(linear(x, w, &b), lw); };
    total.merge(fd_check_params(loss, {x, w, b}));
  }
  return total;
}

// End-to-end: desk model in double precision, 2-sample batch, teacher-forced
// NLL. Parameter coordinates are sampled across all tensors. The
// localization head is nudged off its exact-identity init so the sampling
// grid sits off the bilinear kinks, and the FD step is small because a
// weight perturbation shifts every sampling point at once.
inline FdReport check_model(RandomStream& rng, std::int64_t probes_per_seed, std::int64_t seeds) {
  FdReport total;
  for (std::int64_t rep = 0; rep < seeds; ++rep) {
    Model<double> model = Model<double>::make(ModelConfig::desk(), rng.next_u64());
    for (std::int64_t i = 0; i < model.rectifier.localization.fc2.w.size(); ++i)
      model.rectifier.localization.fc2.w.data()[i] = rng.uniform(-0.01, 0.01);

    auto corpus = synth_corpus(2, rng.next_u64());
    RandomStream prep(7);
    std::vector<double> images(static_cast<std::size_t>(2 * kInputH * kInputW));
    std::vector<std::vector<int>> rows;
    for (int i = 0; i < 2; ++i) {
      Tensor<double> t = preprocess<double>(corpus[static_cast<std::size_t>(i)], false, prep);
      std::copy(t.data(), t.data() + kInputH * kInputW, images.begin() + i * kInputH * kInputW);
      rows.push_back(model.vocab.encode(corpus[static_cast<std::size_t>(i)].text));
    }
    Tensor<double> batch = Tensor<double>::from({2, 1, kInputH, kInputW}, images);
    auto [targets, t_len] = pad_token_rows(rows, model.vocab.pad());

    auto loss = [&]() {
      Tensor<double> lp = model.teacher_forced_log_probs(batch, targets, t_len);
      return nll_loss(lp, targets, model.vocab.pad());
    };
    NamedParams<double> params = model.params();
    // One probe tensor set per seed: a random coordinate from several random
    // tensors, checked at h=1e-6.
    std::vector<Tensor<double>> leaves;
    for (std::int64_t i = 0; i < probes_per_seed; ++i)
      leaves.push_back(params.items[static_cast<std::size_t>(rng.uniform_int(
                                        0, static_cast<std::int64_t>(params.items.size()) - 1))]
                           .second);
    total.merge(fd_check_params(loss, leaves, 1e-6, 1, &rng));
  }
  return total;
}

}  // namespace detail

inline std::vector<std::string> op_names() {
  return {"conv2d",  "gru_cell",   "bilinear_sample", "softmax", "log_softmax", "nll_loss",
          "tps_grid", "attention", "group_norm",      "max_pool", "linear",     "model"};
}

inline OpReport run_op(const std::string& name, std::uint64_t seed, std::int64_t configs = 20) {
  RandomStream rng(RandomStream::mix(seed, std::hash<std::string>{}(name)));
  OpReport r;
  r.op = name;
  if (name == "conv2d") r.fd = detail::check_conv2d(rng, configs);
  else if (name == "gru_cell") r.fd = detail::check_gru(rng, configs);
  else if (name == "bilinear_sample") r.fd = detail::check_bilinear(rng, configs);
  else if (name == "softmax") r.fd = detail::check_softmax(rng, configs, false);
  else if (name == "log_softmax") r.fd = detail::check_softmax(rng, configs, true);
  else if (name == "nll_loss") r.fd = detail::check_nll(rng, configs);
  else if (name == "tps_grid") r.fd = detail::check_tps_grid(rng, configs);
  else if (name == "attention") r.fd = detail::check_attention(rng, configs);
  else if (name == "group_norm") r.fd = detail::check_group_norm(rng, configs);
  else if (name == "max_pool") r.fd = detail::check_max_pool(rng, configs);
  else if (name == "linear") r.fd = detail::check_linear(rng, configs);
  else if (name == "model") r.fd = detail::check_model(rng, /*probes_per_seed=*/8, /*seeds=*/3);
  else throw std::invalid_argument("gradcheck: unknown op '" + name + "' (see --help for the list)");
  return r;
}

inline std::vector<OpReport> run(const std::string& ops, std::uint64_t seed) {
  std::vector<OpReport> out;
  if (ops == "all") {
    for (const auto& name : op_names()) out.push_back(run_op(name, seed));
  } else {
    out.push_back(run_op(ops, seed));
  }
  return out;
}

}  // namespace gradsuite
}  // namespace ocr
