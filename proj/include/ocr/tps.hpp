#pragma once

#include <Eigen/Dense>
#include <array>

#include "ocr/modules.hpp"
#include "ocr/sample.hpp"

namespace ocr {

// Control points in normalized [-1,1]^2 coordinates, (x,y) pairs.
struct FiducialSet {
  std::vector<std::array<double, 2>> points;

  std::int64_t k() const { return static_cast<std::int64_t>(points.size()); }
};

// Two rows of K/2 points along the top and bottom edges. The layout is
// inset by a factor 0.999 so the localization bias atanh(base) is finite
// and the initial tanh output reproduces it exactly.
inline FiducialSet base_fiducials(std::int64_t k) {
  if (k < 6 || k % 2 != 0) throw std::invalid_argument("base_fiducials: K must be even and >= 6");
  FiducialSet f;
  const std::int64_t half = k / 2;
  for (int row = 0; row < 2; ++row) {
    const double y = row == 0 ? -0.999 : 0.999;
    for (std::int64_t i = 0; i < half; ++i) {
      const double x = 0.999 * (-1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(half - 1));
      f.points.push_back({x, y});
    }
  }
  return f;
}

namespace detail {
inline double tps_kernel(double r2) { return r2 > 0.0 ? r2 * std::log(r2) : 0.0; }
}  // namespace detail

// Grid generator for the thin-plate-spline warp. The (K+3)x(K+3) system
// depends only on the base points, so it is factorized once here; what
// remains per batch is the linear map grid = M * predicted.
class TpsMapper {
 public:
  TpsMapper(const FiducialSet& base, std::int64_t out_h, std::int64_t out_w)
      : base_(base), out_h_(out_h), out_w_(out_w) {
    const std::int64_t k = base.k();
    Eigen::MatrixXd l_mat = Eigen::MatrixXd::Zero(k + 3, k + 3);
    for (std::int64_t i = 0; i < k; ++i) {
      for (std::int64_t j = 0; j < k; ++j) {
        const double dx = base.points[static_cast<std::size_t>(i)][0] - base.points[static_cast<std::size_t>(j)][0];
        const double dy = base.points[static_cast<std::size_t>(i)][1] - base.points[static_cast<std::size_t>(j)][1];
        l_mat(i, j) = detail::tps_kernel(dx * dx + dy * dy);
      }
      l_mat(i, k) = 1.0;
      l_mat(i, k + 1) = base.points[static_cast<std::size_t>(i)][0];
      l_mat(i, k + 2) = base.points[static_cast<std::size_t>(i)][1];
      l_mat(k, i) = 1.0;
      l_mat(k + 1, i) = base.points[static_cast<std::size_t>(i)][0];
      l_mat(k + 2, i) = base.points[static_cast<std::size_t>(i)][1];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(l_mat);
    if (!lu.isInvertible()) throw std::runtime_error("TpsMapper: degenerate base fiducials, TPS system is singular");
    // Only the first K columns of L^-1 matter: the affine block of the
    // right-hand side is zero.
    linv_k_ = lu.inverse().leftCols(k);

    std::vector<std::array<double, 2>> lattice;
    lattice.reserve(static_cast<std::size_t>(out_h * out_w));
    for (std::int64_t y = 0; y < out_h; ++y)
      for (std::int64_t x = 0; x < out_w; ++x)
        lattice.push_back({out_w > 1 ? -1.0 + 2.0 * static_cast<double>(x) / static_cast<double>(out_w - 1) : 0.0,
                           out_h > 1 ? -1.0 + 2.0 * static_cast<double>(y) / static_cast<double>(out_h - 1) : 0.0});
    m_ = eval_matrix(lattice);
  }

  // Rows map predicted fiducials to warped coordinates at the given
  // evaluation points: out = eval_matrix(points) * predicted [K x 2].
  Eigen::MatrixXd eval_matrix(const std::vector<std::array<double, 2>>& points) const {
    const std::int64_t k = base_.k();
    Eigen::MatrixXd e(static_cast<Eigen::Index>(points.size()), k + 3);
    for (std::size_t p = 0; p < points.size(); ++p) {
      for (std::int64_t j = 0; j < k; ++j) {
        const double dx = points[p][0] - base_.points[static_cast<std::size_t>(j)][0];
        const double dy = points[p][1] - base_.points[static_cast<std::size_t>(j)][1];
        e(static_cast<Eigen::Index>(p), j) = detail::tps_kernel(dx * dx + dy * dy);
      }
      e(static_cast<Eigen::Index>(p), k) = 1.0;
      e(static_cast<Eigen::Index>(p), k + 1) = points[p][0];
      e(static_cast<Eigen::Index>(p), k + 2) = points[p][1];
    }
    return e * linv_k_;
  }

  const Eigen::MatrixXd& lattice_matrix() const { return m_; }  // [H'*W' x K]
  const FiducialSet& base() const { return base_; }
  std::int64_t out_h() const { return out_h_; }
  std::int64_t out_w() const { return out_w_; }

 private:
  FiducialSet base_;
  std::int64_t out_h_;
  std::int64_t out_w_;
  Eigen::MatrixXd linv_k_;  // L^-1 restricted to the fiducial columns
  Eigen::MatrixXd m_;
};

// Differentiable grid construction: grid[n] = M * predicted[n], predicted
// [N,K,2] -> grid [N,H',W',2].
template <class S>
Tensor<S> build_grid(const Tensor<S>& predicted, const TpsMapper& mapper) {
  const std::int64_t k = mapper.base().k();
  if (predicted.rank() != 3 || predicted.dim(1) != k || predicted.dim(2) != 2)
    throw std::invalid_argument("build_grid: predicted fiducials must be [N," + std::to_string(k) + ",2], got " +
                                shape_str(predicted.shape()));
  const std::int64_t n = predicted.dim(0);
  const std::int64_t p = mapper.out_h() * mapper.out_w();
  auto m = std::make_shared<std::vector<S>>(static_cast<std::size_t>(p * k));
  for (std::int64_t i = 0; i < p; ++i)
    for (std::int64_t j = 0; j < k; ++j)
      (*m)[static_cast<std::size_t>(i * k + j)] = static_cast<S>(mapper.lattice_matrix()(i, j));

  std::vector<S> out(static_cast<std::size_t>(n * p * 2), S(0));
  const S* pf = predicted.data();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < p; ++i) {
      S gx = S(0), gy = S(0);
      const S* mrow = m->data() + i * k;
      for (std::int64_t j = 0; j < k; ++j) {
        gx += mrow[j] * pf[(b * k + j) * 2];
        gy += mrow[j] * pf[(b * k + j) * 2 + 1];
      }
      out[static_cast<std::size_t>((b * p + i) * 2)] = gx;
      out[static_cast<std::size_t>((b * p + i) * 2 + 1)] = gy;
    }
  return detail::make_op<S>({n, mapper.out_h(), mapper.out_w(), 2}, std::move(out), {predicted},
                            [n, p, k, m](detail::TensorNode<S>& self) {
                              auto& pp = self.parents[0];
                              if (!pp->requires_grad) return;
                              pp->ensure_grad();
                              for (std::int64_t b = 0; b < n; ++b)
                                for (std::int64_t i = 0; i < p; ++i) {
                                  const S gx = self.grad[static_cast<std::size_t>((b * p + i) * 2)];
                                  const S gy = self.grad[static_cast<std::size_t>((b * p + i) * 2 + 1)];
                                  const S* mrow = m->data() + i * k;
                                  for (std::int64_t j = 0; j < k; ++j) {
                                    pp->grad[static_cast<std::size_t>((b * k + j) * 2)] += mrow[j] * gx;
                                    pp->grad[static_cast<std::size_t>((b * k + j) * 2 + 1)] += mrow[j] * gy;
                                  }
                                }
                            });
}

// Localization network: predicts the fiducial points from the full image.
// Runs on a 32x64 downsampled copy; the final layer starts at zero weights
// with bias atanh(base), so the initial prediction is exactly the base
// configuration (identity warp).
template <class S>
struct LocalizationNet {
  std::int64_t k = 20;
  Conv2dLayer<S> conv1, conv2, conv3, conv4;
  GroupNormLayer<S> norm1, norm2, norm3, norm4;
  LinearLayer<S> fc1, fc2;

  static LocalizationNet make(std::int64_t k, const FiducialSet& base, RandomStream& rng) {
    LocalizationNet net;
    net.k = k;
    net.conv1 = Conv2dLayer<S>::make(1, 16, 3, 2, 1, 1, false, rng);
    net.conv2 = Conv2dLayer<S>::make(16, 32, 3, 2, 1, 1, false, rng);
    net.conv3 = Conv2dLayer<S>::make(32, 64, 3, 2, 1, 1, false, rng);
    net.conv4 = Conv2dLayer<S>::make(64, 128, 3, 2, 1, 1, false, rng);
    net.norm1 = GroupNormLayer<S>::make(16);
    net.norm2 = GroupNormLayer<S>::make(32);
    net.norm3 = GroupNormLayer<S>::make(64);
    net.norm4 = GroupNormLayer<S>::make(128);
    net.fc1 = LinearLayer<S>::make(128, 256, rng);
    net.fc2 = LinearLayer<S>::make(256, 2 * k, rng);
    std::fill(net.fc2.w.data(), net.fc2.w.data() + net.fc2.w.size(), S(0));
    for (std::int64_t i = 0; i < k; ++i) {
      net.fc2.b.data()[2 * i] = static_cast<S>(std::atanh(base.points[static_cast<std::size_t>(i)][0]));
      net.fc2.b.data()[2 * i + 1] = static_cast<S>(std::atanh(base.points[static_cast<std::size_t>(i)][1]));
    }
    return net;
  }

  // image [N,1,H,W] -> fiducials [N,K,2] in (-1,1)
  Tensor<S> forward(const Tensor<S>& image) const {
    Tensor<S> x = bilinear_sample(image, identity_grid<S>(image.dim(0), 32, 64));
    x = relu(norm1.forward(conv1.forward(x)));
    x = relu(norm2.forward(conv2.forward(x)));
    x = relu(norm3.forward(conv3.forward(x)));
    x = relu(norm4.forward(conv4.forward(x)));
    Tensor<S> feat = spatial_mean(x);
    Tensor<S> hidden = relu(fc1.forward(feat));
    Tensor<S> out = tanh(fc2.forward(hidden));
    return reshape(out, {image.dim(0), k, 2});
  }

  void collect(const std::string& prefix, NamedParams<S>& reg) {
    conv1.collect(prefix + ".conv1", reg);
    norm1.collect(prefix + ".norm1", reg);
    conv2.collect(prefix + ".conv2", reg);
    norm2.collect(prefix + ".norm2", reg);
    conv3.collect(prefix + ".conv3", reg);
    norm3.collect(prefix + ".norm3", reg);
    conv4.collect(prefix + ".conv4", reg);
    norm4.collect(prefix + ".norm4", reg);
    fc1.collect(prefix + ".fc1", reg);
    fc2.collect(prefix + ".fc2", reg);
  }
};

// Full rectification stage: localization -> grid generation -> sampling.
template <class S>
struct TpsRectifier {
  LocalizationNet<S> localization;
  FiducialSet base;
  TpsMapper mapper;

  TpsRectifier(std::int64_t k, std::int64_t out_h, std::int64_t out_w, RandomStream& rng)
      : localization(LocalizationNet<S>::make(k, base_fiducials(k), rng)),
        base(base_fiducials(k)),
        mapper(base, out_h, out_w) {}

  Tensor<S> localize(const Tensor<S>& image) const {
    if (image.rank() != 4 || image.dim(1) != 1 || image.dim(2) != kInputImageH || image.dim(3) != kInputImageW)
      throw std::invalid_argument("TpsRectifier: expected [N,1,64,256] input, got " + shape_str(image.shape()));
    return localization.forward(image);
  }

  // image [N,1,64,256] -> rectified [N,1,out_h,out_w]
  Tensor<S> forward(const Tensor<S>& image) const {
    Tensor<S> fiducials = localize(image);
    Tensor<S> grid = build_grid(fiducials, mapper);
    return bilinear_sample(image, grid);
  }

  void collect(const std::string& prefix, NamedParams<S>& reg) { localization.collect(prefix + ".loc", reg); }

  static constexpr std::int64_t kInputImageH = 64;
  static constexpr std::int64_t kInputImageW = 256;
};

}  // namespace ocr
