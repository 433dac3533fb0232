#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "ocr/adam.hpp"
#include "ocr/conv.hpp"
#include "ocr/fixture.hpp"
#include "ocr/gradcheck.hpp"
#include "ocr/linalg.hpp"
#include "ocr/rnn.hpp"
#include "ocr/sample.hpp"
#include "ocr/tensor.hpp"

using ocr::backward;
using ocr::RandomStream;
using ocr::Shape;
using Tensor = ocr::Tensor<double>;

namespace {

std::vector<double> random_values(std::int64_t n, RandomStream& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Direct-loop grouped convolution, the independent oracle for the im2col
// path.
std::vector<double> conv_ref(const std::vector<double>& x, std::int64_t n, std::int64_t cin, std::int64_t h,
                             std::int64_t w, const std::vector<double>& wt, std::int64_t cout, std::int64_t kh,
                             std::int64_t kw, const std::vector<double>* bias, std::int64_t stride, std::int64_t pad,
                             std::int64_t groups) {
  const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t ow = (w + 2 * pad - kw) / stride + 1;
  const std::int64_t cing = cin / groups, coutg = cout / groups;
  std::vector<double> out(static_cast<std::size_t>(n * cout * oh * ow), 0.0);
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t oc = 0; oc < cout; ++oc) {
      const std::int64_t g = oc / coutg;
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          double acc = bias ? (*bias)[static_cast<std::size_t>(oc)] : 0.0;
          for (std::int64_t ic = 0; ic < cing; ++ic)
            for (std::int64_t ky = 0; ky < kh; ++ky)
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t iy = oy * stride + ky - pad;
                const std::int64_t ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += x[static_cast<std::size_t>(((ni * cin + g * cing + ic) * h + iy) * w + ix)] *
                       wt[static_cast<std::size_t>(((oc * cing + ic) * kh + ky) * kw + kx)];
              }
          out[static_cast<std::size_t>(((ni * cout + oc) * oh + oy) * ow + ox)] = acc;
        }
    }
  return out;
}

// Scalar-loop GRU evaluation, independent of the tensor-op composition.
std::vector<double> gru_ref(const std::vector<double>& x, const std::vector<double>& h, std::int64_t n,
                            std::int64_t din, std::int64_t dh, const std::vector<double>& wz,
                            const std::vector<double>& wr, const std::vector<double>& wn,
                            const std::vector<double>& uz, const std::vector<double>& ur,
                            const std::vector<double>& un, const std::vector<double>& bz,
                            const std::vector<double>& br, const std::vector<double>& bn) {
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  std::vector<double> out(static_cast<std::size_t>(n * dh));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < dh; ++j) {
      double az = bz[static_cast<std::size_t>(j)], ar = br[static_cast<std::size_t>(j)], an = bn[static_cast<std::size_t>(j)];
      double un_h = 0.0;
      for (std::int64_t k = 0; k < din; ++k) {
        az += wz[static_cast<std::size_t>(j * din + k)] * x[static_cast<std::size_t>(i * din + k)];
        ar += wr[static_cast<std::size_t>(j * din + k)] * x[static_cast<std::size_t>(i * din + k)];
        an += wn[static_cast<std::size_t>(j * din + k)] * x[static_cast<std::size_t>(i * din + k)];
      }
      for (std::int64_t k = 0; k < dh; ++k) {
        az += uz[static_cast<std::size_t>(j * dh + k)] * h[static_cast<std::size_t>(i * dh + k)];
        ar += ur[static_cast<std::size_t>(j * dh + k)] * h[static_cast<std::size_t>(i * dh + k)];
        un_h += un[static_cast<std::size_t>(j * dh + k)] * h[static_cast<std::size_t>(i * dh + k)];
      }
      const double z = sig(az), r = sig(ar);
      const double nn = std::tanh(an + r * un_h);
      out[static_cast<std::size_t>(i * dh + j)] = (1.0 - z) * nn + z * h[static_cast<std::size_t>(i * dh + j)];
    }
  return out;
}

ocr::GruParams<double> random_gru(std::int64_t din, std::int64_t dh, RandomStream& rng) {
  return ocr::GruParams<double>::init(din, dh, rng);
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
  RandomStream rng(1);
  Tensor x = Tensor::from({1, 1, 3, 3}, random_values(9, rng));
  Tensor w = Tensor::from({1, 1, 1, 1}, {1.0});
  Tensor y = ocr::conv2d(x, w, nullptr, 1, 0, 1);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("conv2d all-ones 3x3 sums to 9") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor y = ocr::conv2d(x, w, nullptr, 1, 0, 1);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(9.0));
}

TEST_CASE("grouped conv equals independent per-group convolutions") {
  RandomStream rng(2);
  const std::int64_t n = 2, cin = 4, h = 8, w = 8, cout = 4, k = 3;
  std::vector<double> xv = random_values(n * cin * h * w, rng);
  std::vector<double> wv = random_values(cout * (cin / 2) * k * k, rng);
  std::vector<double> bv = random_values(cout, rng);
  Tensor x = Tensor::from({n, cin, h, w}, xv);
  Tensor wt = Tensor::from({cout, cin / 2, k, k}, wv);
  Tensor b = Tensor::from({cout}, bv);
  Tensor y = ocr::conv2d(x, wt, &b, 1, 1, 2);

  // Oracle: run each half as a dense conv on the matching channel slice.
  for (int g = 0; g < 2; ++g) {
    std::vector<double> xg(static_cast<std::size_t>(n * 2 * h * w));
    for (std::int64_t ni = 0; ni < n; ++ni)
      for (std::int64_t c = 0; c < 2; ++c)
        std::copy(xv.begin() + ((ni * cin + g * 2 + c) * h * w), xv.begin() + ((ni * cin + g * 2 + c + 1) * h * w),
                  xg.begin() + (ni * 2 + c) * h * w);
    std::vector<double> wg(wv.begin() + g * 2 * 2 * k * k, wv.begin() + (g + 1) * 2 * 2 * k * k);
    std::vector<double> bg(bv.begin() + g * 2, bv.begin() + (g + 1) * 2);
    std::vector<double> ref = conv_ref(xg, n, 2, h, w, wg, 2, k, k, &bg, 1, 1, 1);
    for (std::int64_t ni = 0; ni < n; ++ni)
      for (std::int64_t c = 0; c < 2; ++c)
        for (std::int64_t p = 0; p < h * w; ++p)
          CHECK(y.data()[((ni * cout + g * 2 + c) * h * w) + p] ==
                doctest::Approx(ref[static_cast<std::size_t>((ni * 2 + c) * h * w + p)]).epsilon(1e-10));
  }
}

TEST_CASE("dense conv equals block-diagonal grouped assembly") {
  RandomStream rng(3);
  const std::int64_t c = 3, h = 5, w = 6, k = 3;
  std::vector<double> xv = random_values(c * h * w, rng);
  std::vector<double> dwv = random_values(c * 1 * k * k, rng);
  Tensor x = Tensor::from({1, c, h, w}, xv);
  Tensor dw = Tensor::from({c, 1, k, k}, dwv);
  Tensor depthwise = ocr::conv2d(x, dw, nullptr, 1, 1, c);

  std::vector<double> dense(static_cast<std::size_t>(c * c * k * k), 0.0);
  for (std::int64_t oc = 0; oc < c; ++oc)
    for (std::int64_t t = 0; t < k * k; ++t)
      dense[static_cast<std::size_t>((oc * c + oc) * k * k + t)] = dwv[static_cast<std::size_t>(oc * k * k + t)];
  Tensor dwt = Tensor::from({c, c, k, k}, dense);
  Tensor full = ocr::conv2d(x, dwt, nullptr, 1, 1, 1);

  std::vector<double> ref = conv_ref(xv, 1, c, h, w, dense, c, k, k, nullptr, 1, 1, 1);
  for (std::int64_t i = 0; i < full.size(); ++i) {
    CHECK(full.data()[i] == doctest::Approx(depthwise.data()[i]).epsilon(1e-10));
    CHECK(full.data()[i] == doctest::Approx(ref[static_cast<std::size_t>(i)]).epsilon(1e-10));
  }
}

TEST_CASE("conv2d matches direct-loop oracle over random configurations") {
  RandomStream rng(4);
  for (int rep = 0; rep < 12; ++rep) {
    const std::int64_t groups = rng.uniform_int(1, 2);
    const std::int64_t cin = groups * rng.uniform_int(1, 3);
    const std::int64_t cout = groups * rng.uniform_int(1, 3);
    const std::int64_t n = rng.uniform_int(1, 2);
    const std::int64_t kh = rng.uniform_int(1, 3), kw = rng.uniform_int(1, 3);
    const std::int64_t stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, 1);
    const std::int64_t h = kh + rng.uniform_int(2, 5), w = kw + rng.uniform_int(2, 5);
    std::vector<double> xv = random_values(n * cin * h * w, rng);
    std::vector<double> wv = random_values(cout * (cin / groups) * kh * kw, rng);
    std::vector<double> bv = random_values(cout, rng);
    Tensor y = ocr::conv2d(Tensor::from({n, cin, h, w}, xv),
                           Tensor::from({cout, cin / groups, kh, kw}, wv),
                           nullptr, stride, pad, groups);
    std::vector<double> ref = conv_ref(xv, n, cin, h, w, wv, cout, kh, kw, nullptr, stride, pad, groups);
    REQUIRE(y.size() == static_cast<std::int64_t>(ref.size()));
    for (std::int64_t i = 0; i < y.size(); ++i)
      CHECK(y.data()[i] == doctest::Approx(ref[static_cast<std::size_t>(i)]).epsilon(1e-9));
    (void)bv;
  }
}

TEST_CASE("conv2d shape errors name the offending dimension") {
  Tensor x = Tensor::zeros({1, 5, 4, 4});
  Tensor w = Tensor::zeros({4, 2, 3, 3});
  CHECK_THROWS_WITH_AS(ocr::conv2d(x, w, nullptr, 1, 1, 2),
                       doctest::Contains("input channels 5 not divisible by groups 2"), std::invalid_argument);
  Tensor w2 = Tensor::zeros({3, 2, 3, 3});
  Tensor x2 = Tensor::zeros({1, 4, 4, 4});
  CHECK_THROWS_AS(ocr::conv2d(x2, w2, nullptr, 1, 1, 2), std::invalid_argument);
}

TEST_CASE("conv2d gradient vs finite differences") {
  RandomStream rng(5);
  for (int rep = 0; rep < 4; ++rep) {
    const std::int64_t groups = rep % 2 ? 2 : 1;
    const std::int64_t cin = 2 * groups, cout = 2 * groups, h = 5, w = 5, k = 3;
    Tensor x = Tensor::param({1, cin, h, w}, random_values(cin * h * w, rng));
    Tensor wt = Tensor::param({cout, cin / groups, k, k}, random_values(cout * (cin / groups) * k * k, rng));
    Tensor b = Tensor::param({cout}, random_values(cout, rng));
    std::vector<double> lw = random_values(cout * h * w, rng);
    auto loss = [&]() { return ocr::weighted_sum(ocr::conv2d(x, wt, &b, 1, 1, groups), lw); };
    auto rep_fd = ocr::fd_check_params(loss, {x, wt, b});
    CHECK(rep_fd.max_rel_err < 1e-3);
  }
}

TEST_CASE("gru zero fixed point") {
  RandomStream rng(6);
  ocr::GruParams<double> p = random_gru(3, 4, rng);
  for (auto* t : {&p.wz, &p.wr, &p.wn, &p.uz, &p.ur, &p.un, &p.bz, &p.br, &p.bn})
    std::fill(t->data(), t->data() + t->size(), 0.0);
  Tensor x = Tensor::zeros({2, 3});
  Tensor h = Tensor::zeros({2, 4});
  Tensor out = ocr::gru_cell(x, h, p);
  for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == 0.0);
}

TEST_CASE("gru copy gate: saturated z returns h exactly") {
  RandomStream rng(7);
  ocr::GruParams<double> p = random_gru(3, 4, rng);
  std::fill(p.bz.data(), p.bz.data() + p.bz.size(), 1000.0);
  Tensor x = Tensor::from({2, 3}, random_values(6, rng));
  Tensor h = Tensor::from({2, 4}, random_values(8, rng));
  Tensor out = ocr::gru_cell(x, h, p);
  for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == h.data()[i]);
}

TEST_CASE("gru matches scalar-loop oracle") {
  RandomStream rng(8);
  const std::int64_t n = 3, din = 5, dh = 4;
  ocr::GruParams<double> p = random_gru(din, dh, rng);
  std::vector<double> xv = random_values(n * din, rng), hv = random_values(n * dh, rng);
  Tensor out = ocr::gru_cell(Tensor::from({n, din}, xv), Tensor::from({n, dh}, hv), p);
  std::vector<double> ref = gru_ref(xv, hv, n, din, dh, p.wz.values(), p.wr.values(), p.wn.values(), p.uz.values(),
                                    p.ur.values(), p.un.values(), p.bz.values(), p.br.values(), p.bn.values());
  for (std::int64_t i = 0; i < out.size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(ref[static_cast<std::size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("gru gradient vs finite differences") {
  RandomStream rng(9);
  const std::int64_t n = 2, din = 3, dh = 4;
  ocr::GruParams<double> p = random_gru(din, dh, rng);
  Tensor x = Tensor::param({n, din}, random_values(n * din, rng));
  Tensor h = Tensor::param({n, dh}, random_values(n * dh, rng));
  std::vector<double> lw = random_values(n * dh, rng);
  auto loss = [&]() { return ocr::weighted_sum(ocr::gru_cell(x, h, p), lw); };
  auto rep = ocr::fd_check_params(loss, {x, h, p.wz, p.wr, p.wn, p.uz, p.ur, p.un, p.bz, p.br, p.bn});
  CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("bilinear_sample identity grid is the identity map") {
  RandomStream rng(10);
  Tensor x = Tensor::from({1, 2, 5, 7}, random_values(2 * 5 * 7, rng, 0.0, 1.0));
  Tensor g = ocr::identity_grid<double>(1, 5, 7);
  Tensor y = ocr::bilinear_sample(x, g);
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(std::abs(y.data()[i] - x.data()[i]) < 1e-6);
}

TEST_CASE("bilinear_sample of a constant image is constant for any grid") {
  RandomStream rng(11);
  Tensor x = Tensor::full({1, 1, 4, 6}, 0.37);
  std::vector<double> gv = random_values(1 * 3 * 3 * 2, rng, -1.8, 1.8);  // includes out-of-range points
  Tensor g = Tensor::from({1, 3, 3, 2}, gv);
  Tensor y = ocr::bilinear_sample(x, g);
  for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("bilinear_sample matches the 4-neighbor formula") {
  RandomStream rng(12);
  std::vector<double> xv = random_values(16, rng, 0.0, 1.0);
  Tensor x = Tensor::from({1, 1, 4, 4}, xv);
  const double gx = 0.31, gy = -0.42;
  Tensor g = Tensor::from({1, 1, 1, 2}, {gx, gy});
  Tensor y = ocr::bilinear_sample(x, g);
  const double fx = (gx + 1.0) / 2.0 * 3.0, fy = (gy + 1.0) / 2.0 * 3.0;
  const auto x0 = static_cast<std::int64_t>(fx), y0 = static_cast<std::int64_t>(fy);
  const double wx = fx - static_cast<double>(x0), wy = fy - static_cast<double>(y0);
  const double ref = (1 - wy) * ((1 - wx) * xv[static_cast<std::size_t>(y0 * 4 + x0)] + wx * xv[static_cast<std::size_t>(y0 * 4 + x0 + 1)]) +
                     wy * ((1 - wx) * xv[static_cast<std::size_t>((y0 + 1) * 4 + x0)] + wx * xv[static_cast<std::size_t>((y0 + 1) * 4 + x0 + 1)]);
  CHECK(y.item() == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("bilinear_sample gradient vs finite differences") {
  RandomStream rng(13);
  const std::int64_t h = 5, w = 6, oh = 3, ow = 4;
  Tensor x = Tensor::param({1, 2, h, w}, random_values(2 * h * w, rng));
  // Keep sampling points away from pixel-center crossings and borders so the
  // interpolant is smooth inside the FD step.
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
  Tensor g = Tensor::param({1, oh, ow, 2}, gv);
  std::vector<double> lw = random_values(2 * oh * ow, rng);
  auto loss = [&]() { return ocr::weighted_sum(ocr::bilinear_sample(x, g), lw); };
  auto rep = ocr::fd_check_params(loss, {x, g});
  CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("bilinear_sample rejects malformed grid") {
  Tensor x = Tensor::zeros({1, 1, 4, 4});
  Tensor g = Tensor::zeros({1, 2, 2, 3});
  CHECK_THROWS_AS(ocr::bilinear_sample(x, g), std::invalid_argument);
}

TEST_CASE("softmax basics") {
  Tensor z = Tensor::zeros({4});
  Tensor s = ocr::softmax(z, 0);
  for (int i = 0; i < 4; ++i) CHECK(s.data()[i] == doctest::Approx(0.25).epsilon(1e-12));

  Tensor big = Tensor::from({2}, {1000.0, 1000.0});
  Tensor sb = ocr::softmax(big, 0);
  CHECK(sb.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::isfinite(sb.data()[0]));

  RandomStream rng(14);
  Tensor x = Tensor::from({7}, random_values(7, rng, -5, 5));
  Tensor ls = ocr::log_softmax(x, 0);
  Tensor sm = ocr::softmax(x, 0);
  for (int i = 0; i < 7; ++i) CHECK(std::abs(std::exp(ls.data()[i]) - sm.data()[i]) < 1e-12);
}

TEST_CASE("softmax sums to one along any axis for arbitrary finite input") {
  RandomStream rng(15);
  for (int rep = 0; rep < 20; ++rep) {
    const std::int64_t a = rng.uniform_int(1, 4), b = rng.uniform_int(1, 5), c = rng.uniform_int(1, 4);
    const std::int64_t axis = rng.uniform_int(0, 2);
    const double scale_v = rep % 3 == 0 ? 500.0 : 3.0;  // include near-overflow magnitudes
    Tensor x = Tensor::from({a, b, c}, random_values(a * b * c, rng, -scale_v, scale_v));
    Tensor s = ocr::softmax(x, axis);
    for (std::int64_t i = 0; i < s.size(); ++i) CHECK(s.data()[i] >= 0.0);
    std::int64_t outer = 1, inner = 1;
    const Shape& sh = x.shape();
    for (std::int64_t i = 0; i < axis; ++i) outer *= sh[static_cast<std::size_t>(i)];
    for (std::int64_t i = axis + 1; i < 3; ++i) inner *= sh[static_cast<std::size_t>(i)];
    const std::int64_t n = sh[static_cast<std::size_t>(axis)];
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t in = 0; in < inner; ++in) {
        double acc = 0;
        for (std::int64_t i = 0; i < n; ++i) acc += s.data()[o * n * inner + i * inner + in];
        CHECK(std::abs(acc - 1.0) < 1e-9);
      }
  }
}

TEST_CASE("softmax and log_softmax gradients vs finite differences") {
  RandomStream rng(16);
  for (int rep = 0; rep < 4; ++rep) {
    Tensor x = Tensor::param({3, 5}, random_values(15, rng, -2, 2));
    std::vector<double> lw = random_values(15, rng);
    auto loss_s = [&]() { return ocr::weighted_sum(ocr::softmax(x, 1), lw); };
    CHECK(ocr::fd_check_params(loss_s, {x}).max_rel_err < 1e-3);
    auto loss_ls = [&]() { return ocr::weighted_sum(ocr::log_softmax(x, 1), lw); };
    CHECK(ocr::fd_check_params(loss_ls, {x}).max_rel_err < 1e-3);
  }
}

TEST_CASE("nll_loss basics") {
  // Perfect one-hot prediction: log-prob 0 at the target.
  std::vector<double> lp(2 * 1 * 3, -40.0);
  lp[0 * 3 + 1] = 0.0;
  lp[1 * 3 + 2] = 0.0;
  Tensor t = Tensor::from({2, 1, 3}, lp);
  CHECK(ocr::nll_loss(t, {1, 2}, 99).item() == doctest::Approx(0.0));

  // Uniform prediction over 40 classes.
  Tensor u = Tensor::from({1, 1, 40}, std::vector<double>(40, std::log(1.0 / 40.0)));
  CHECK(ocr::nll_loss(u, {7}, 99).item() == doctest::Approx(std::log(40.0)).epsilon(1e-12));

  CHECK_THROWS_AS(ocr::nll_loss(u, {41}, 99), std::out_of_range);
}

TEST_CASE("nll_loss ignores pad positions in value and gradient") {
  RandomStream rng(17);
  const std::int64_t n = 2, t_len = 4, c = 5;
  const int pad = 3;
  std::vector<double> lp = random_values(n * t_len * c, rng, -3, -0.1);
  std::vector<int> targets = {0, 1, pad, pad, 2, pad, 4, pad};
  Tensor x = Tensor::param({n, t_len, c}, lp);
  Tensor loss = ocr::nll_loss(x, targets, pad);

  // Masked-mean recomputation.
  double acc = 0;
  int kept = 0;
  for (std::int64_t r = 0; r < n * t_len; ++r)
    if (targets[static_cast<std::size_t>(r)] != pad) {
      acc -= lp[static_cast<std::size_t>(r * c + targets[static_cast<std::size_t>(r)])];
      ++kept;
    }
  CHECK(loss.item() == doctest::Approx(acc / kept).epsilon(1e-12));

  backward(loss);
  for (std::int64_t r = 0; r < n * t_len; ++r)
    if (targets[static_cast<std::size_t>(r)] == pad)
      for (std::int64_t k = 0; k < c; ++k) CHECK(x.grad()[r * c + k] == 0.0);

  std::vector<double> lw(static_cast<std::size_t>(n * t_len * c), 1.0);
  auto loss_fn = [&]() { return ocr::nll_loss(x, targets, pad); };
  CHECK(ocr::fd_check_params(loss_fn, {x}).max_rel_err < 1e-3);
  (void)lw;
}

TEST_CASE("backward computes polynomial derivatives") {
  Tensor theta = Tensor::param({3}, {1.0, 2.0, 3.0});
  Tensor loss = ocr::sum(ocr::mul(theta, theta));
  backward(loss);
  CHECK(theta.grad()[0] == doctest::Approx(2.0));
  CHECK(theta.grad()[1] == doctest::Approx(4.0));
  CHECK(theta.grad()[2] == doctest::Approx(6.0));

  Tensor t2 = Tensor::param({2, 3}, std::vector<double>(6, 0.5));
  backward(ocr::sum(t2));
  for (int i = 0; i < 6; ++i) CHECK(t2.grad()[i] == doctest::Approx(1.0));
}

TEST_CASE("backward rejects non-scalar loss and zeroes by default") {
  Tensor theta = Tensor::param({3}, {1.0, 2.0, 3.0});
  CHECK_THROWS_AS(backward(ocr::mul(theta, theta)), std::invalid_argument);

  backward(ocr::sum(theta));
  backward(ocr::sum(theta));
  CHECK(theta.grad()[0] == doctest::Approx(1.0));  // default zeroes first

  backward(ocr::sum(theta), /*accumulate=*/true);
  CHECK(theta.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("requires_grad=false tensors never accumulate gradient") {
  Tensor a = Tensor::from({3}, {1.0, 2.0, 3.0});
  Tensor theta = Tensor::param({3}, {1.0, 1.0, 1.0});
  Tensor loss = ocr::sum(ocr::mul(a, theta));
  backward(loss);
  CHECK_FALSE(a.has_grad());
  CHECK(theta.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("adam single step matches the hand recurrence") {
  std::vector<Tensor> params = {Tensor::param({1}, {0.0})};
  params[0].zero_grad();
  params[0].grad()[0] = 1.0;
  auto st = ocr::AdamState<double>::init(params, 1e-4);
  ocr::adam_step(params, st);
  // m=0.1, v=0.001; bias correction makes mhat=vhat=1 on step 1.
  const double expect = -1e-4 * 1.0 / (std::sqrt(1.0) + 1e-8);
  CHECK(params[0].data()[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(params[0].data()[0] == doctest::Approx(-9.99999995e-5).epsilon(1e-7));
  CHECK(st.step == 1);
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  std::vector<Tensor> params = {Tensor::param({3}, {0.5, -0.25, 1.0})};
  params[0].zero_grad();
  auto st = ocr::AdamState<double>::init(params, 1e-2);
  ocr::adam_step(params, st);
  CHECK(params[0].data()[0] == 0.5);
  CHECK(params[0].data()[1] == -0.25);
  CHECK(params[0].data()[2] == 1.0);
}

TEST_CASE("adam two steps match the unrolled recurrence") {
  const double g = 0.7, lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<Tensor> params = {Tensor::param({1}, {0.2})};
  auto st = ocr::AdamState<double>::init(params, lr);
  double theta = 0.2, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    params[0].zero_grad();
    params[0].grad()[0] = g;
    ocr::adam_step(params, st);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    theta -= lr * mhat / (std::sqrt(vhat) + eps);
    CHECK(std::abs(params[0].data()[0] - theta) < 1e-12);
  }
}

TEST_CASE("adam rejects mismatched state buffers") {
  std::vector<Tensor> params = {Tensor::param({3}, {0.0, 0.0, 0.0})};
  auto st = ocr::AdamState<double>::init(params);
  st.m[0].resize(2);
  CHECK_THROWS_AS(ocr::adam_step(params, st), std::invalid_argument);
}

TEST_CASE("linear matches Eigen-free reference and gradients") {
  RandomStream rng(18);
  const std::int64_t n = 3, d = 4, o = 5;
  std::vector<double> xv = random_values(n * d, rng), wv = random_values(o * d, rng), bv = random_values(o, rng);
  Tensor x = Tensor::param({n, d}, xv);
  Tensor w = Tensor::param({o, d}, wv);
  Tensor b = Tensor::param({o}, bv);
  Tensor y = ocr::linear(x, w, &b);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < o; ++j) {
      double acc = bv[static_cast<std::size_t>(j)];
      for (std::int64_t k = 0; k < d; ++k) acc += xv[static_cast<std::size_t>(i * d + k)] * wv[static_cast<std::size_t>(j * d + k)];
      CHECK(y.data()[i * o + j] == doctest::Approx(acc).epsilon(1e-12));
    }
  std::vector<double> lw = random_values(n * o, rng);
  auto loss = [&]() { return ocr::weighted_sum(ocr::linear(x, w, &b), lw); };
  CHECK(ocr::fd_check_params(loss, {x, w, b}).max_rel_err < 1e-3);
}

TEST_CASE("max_pool2d forward oracle, tie-break, and gradient") {
  Tensor x = Tensor::from({1, 1, 2, 3}, {5.0, 5.0, 1.0, 0.0, -1.0, 2.0});
  Tensor y = ocr::max_pool2d(x, 2, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 1, 2});
  CHECK(y.data()[0] == 5.0);
  CHECK(y.data()[1] == 5.0);
  Tensor xp = Tensor::param({1, 1, 2, 3}, {5.0, 5.0, 1.0, 0.0, -1.0, 2.0});
  backward(ocr::sum(ocr::max_pool2d(xp, 2, 1, 0)));
  CHECK(xp.grad()[0] == 1.0);  // first scanned candidate wins the tie
  CHECK(xp.grad()[1] == 1.0);  // window 2 max is its own first occurrence
  CHECK(xp.grad()[2] == 0.0);

  RandomStream rng(19);
  // Keep taps well separated so FD does not cross an argmax switch.
  std::vector<double> xv(36);
  for (std::size_t i = 0; i < xv.size(); ++i) xv[i] = static_cast<double>(i % 7) + 0.01 * static_cast<double>(i);
  Tensor xr = Tensor::param({1, 1, 6, 6}, xv);
  std::vector<double> lw = random_values(2 * 2, rng);
  auto loss = [&]() { return ocr::weighted_sum(ocr::max_pool2d(xr, 3, 2, 0), lw); };
  CHECK(ocr::fd_check_params(loss, {xr}).max_rel_err < 1e-3);
}

TEST_CASE("group_norm normalizes per group and gradients check out") {
  RandomStream rng(20);
  const std::int64_t n = 2, c = 4, h = 3, w = 3, groups = 2;
  Tensor x = Tensor::param({n, c, h, w}, random_values(n * c * h * w, rng, -2, 2));
  Tensor gamma = Tensor::param({c}, {1.0, 1.0, 1.0, 1.0});
  Tensor beta = Tensor::param({c}, {0.0, 0.0, 0.0, 0.0});
  Tensor y = ocr::group_norm(x, gamma, beta, groups);
  // Each (sample, group) slab has ~zero mean and ~unit variance.
  const std::int64_t m = (c / groups) * h * w;
  for (std::int64_t i = 0; i < n * groups; ++i) {
    double mu = 0, var = 0;
    for (std::int64_t j = 0; j < m; ++j) mu += y.data()[i * m + j];
    mu /= static_cast<double>(m);
    for (std::int64_t j = 0; j < m; ++j) var += (y.data()[i * m + j] - mu) * (y.data()[i * m + j] - mu);
    var /= static_cast<double>(m);
    CHECK(std::abs(mu) < 1e-10);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
  std::vector<double> lw = random_values(n * c * h * w, rng);
  auto loss = [&]() { return ocr::weighted_sum(ocr::group_norm(x, gamma, beta, groups), lw); };
  CHECK(ocr::fd_check_params(loss, {x, gamma, beta}).max_rel_err < 1e-3);
}

TEST_CASE("shape ops and attention primitives: gradients vs finite differences") {
  RandomStream rng(21);
  Tensor a = Tensor::param({2, 3}, random_values(6, rng));
  Tensor b = Tensor::param({2, 4}, random_values(8, rng));
  std::vector<double> lw = random_values(14, rng);
  auto loss_cat = [&]() { return ocr::weighted_sum(ocr::concat(a, b, 1), lw); };
  CHECK(ocr::fd_check_params(loss_cat, {a, b}).max_rel_err < 1e-3);

  Tensor x3 = Tensor::param({2, 3, 4}, random_values(24, rng));
  std::vector<double> lw3 = random_values(24, rng);
  auto loss_tr = [&]() { return ocr::weighted_sum(ocr::transpose_12(x3), lw3); };
  CHECK(ocr::fd_check_params(loss_tr, {x3}).max_rel_err < 1e-3);

  Tensor pos = Tensor::param({3, 4}, random_values(12, rng));
  auto loss_pos = [&]() { return ocr::weighted_sum(ocr::add_positional(x3, pos), lw3); };
  CHECK(ocr::fd_check_params(loss_pos, {x3, pos}).max_rel_err < 1e-3);

  Tensor q = Tensor::param({2, 4}, random_values(8, rng));
  auto loss_app = [&]() { return ocr::weighted_sum(ocr::add_per_position(x3, q), lw3); };
  CHECK(ocr::fd_check_params(loss_app, {x3, q}).max_rel_err < 1e-3);

  Tensor v = Tensor::param({4}, random_values(4, rng));
  std::vector<double> lw2 = random_values(6, rng);
  auto loss_inner = [&]() { return ocr::weighted_sum(ocr::inner_lastdim(x3, v), lw2); };
  CHECK(ocr::fd_check_params(loss_inner, {x3, v}).max_rel_err < 1e-3);

  Tensor wts = Tensor::param({2, 3}, random_values(6, rng, 0.1, 1.0));
  std::vector<double> lwm = random_values(8, rng);
  auto loss_mix = [&]() { return ocr::weighted_sum(ocr::attend_mix(wts, x3), lwm); };
  CHECK(ocr::fd_check_params(loss_mix, {wts, x3}).max_rel_err < 1e-3);

  Tensor table = Tensor::param({5, 3}, random_values(15, rng));
  std::vector<int> ids = {0, 3, 3, 1};
  std::vector<double> lwe = random_values(12, rng);
  auto loss_emb = [&]() { return ocr::weighted_sum(ocr::embedding(table, ids), lwe); };
  CHECK(ocr::fd_check_params(loss_emb, {table}).max_rel_err < 1e-3);

  std::vector<Tensor> steps = {Tensor::param({2, 3}, random_values(6, rng)), Tensor::param({2, 3}, random_values(6, rng))};
  std::vector<double> lws = random_values(12, rng);
  auto loss_stack = [&]() { return ocr::weighted_sum(ocr::stack_steps(steps), lws); };
  CHECK(ocr::fd_check_params(loss_stack, {steps[0], steps[1]}).max_rel_err < 1e-3);
}

TEST_CASE("identical seed and inputs give bitwise-identical outputs") {
  auto run = [](std::uint64_t seed) {
    RandomStream rng(seed);
    Tensor x = Tensor::from({1, 2, 6, 6}, random_values(72, rng));
    Tensor w = Tensor::from({4, 1, 3, 3}, random_values(36, rng));
    Tensor y = ocr::conv2d(x, w, nullptr, 1, 1, 2);
    Tensor s = ocr::softmax(ocr::reshape(y, {4, 36}), 1);
    return std::vector<double>(s.data(), s.data() + s.size());
  };
  auto a = run(42), b = run(42);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("tensor fixture round-trips and the golden conv gradient holds") {
  namespace fs = std::filesystem;
  const fs::path tmp = fs::temp_directory_path() / "ocr_fixture_rt.trec";
  RandomStream rng(22);
  std::vector<double> payload = random_values(24, rng);
  ocr::write_trec(tmp.string(), {2, 3, 4}, payload);
  auto [shape, back] = ocr::read_trec(tmp.string());
  CHECK(shape == Shape{2, 3, 4});
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i] == payload[i]);
  fs::remove(tmp);

  // Golden gradient fixture: d(weighted sum)/d(input) of a fixed conv case,
  // frozen from the direct-loop oracle.
  RandomStream grng(2024);
  std::vector<double> xv = random_values(2 * 2 * 5 * 5, grng);
  std::vector<double> wv = random_values(4 * 1 * 3 * 3, grng);
  std::vector<double> lw = random_values(2 * 4 * 5 * 5, grng);
  Tensor x = Tensor::param({2, 2, 5, 5}, xv);
  Tensor w = Tensor::param({4, 1, 3, 3}, wv);
  backward(ocr::weighted_sum(ocr::conv2d(x, w, nullptr, 1, 1, 2), lw));

  const fs::path golden = fs::path(OCR_TEST_DATA_DIR) / "conv_grad_input.trec";
  if (const char* write = std::getenv("OCR_WRITE_FIXTURES"); write && *write == '1') {
    ocr::write_trec(golden.string(), x.shape(), x.grad_values());
  }
  REQUIRE(fs::exists(golden));
  auto [gshape, gref] = ocr::read_trec(golden.string());
  REQUIRE(gshape == x.shape());
  for (std::size_t i = 0; i < gref.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(gref[i]).epsilon(1e-12));
}
