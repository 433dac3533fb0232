#pragma once

#include "ocr/modules.hpp"

namespace ocr {

struct StageSpec {
  std::int64_t blocks = 1;
  std::int64_t out_channels = 64;
  std::int64_t width = 32;  // grouped 3x3 width inside the bottleneck
  std::int64_t stride = 1;
};

// Grouped-bottleneck feature extractor configuration. The spatial contract
// is enforced by validate(): stem, pool and stage strides must multiply to
// exactly in_extent/out_extent.
struct BackboneConfig {
  std::int64_t in_channels = 1;
  std::int64_t stem_channels = 64;
  std::int64_t stem_stride = 2;  // 7x7 stem conv
  std::int64_t pool_stride = 2;  // 3x3 max pool, pad 1
  std::vector<StageSpec> stages;
  std::int64_t cardinality = 32;

  // Stages 2-4 of the [3,4,23,3] layout; stage 5 is dropped so the final
  // width stays at 1024 and the total stride at 16.
  static BackboneConfig full() {
    BackboneConfig c;
    c.stem_channels = 64;
    c.pool_stride = 2;
    c.cardinality = 32;
    c.stages = {{3, 256, 128, 1}, {4, 512, 256, 2}, {23, 1024, 512, 2}};
    return c;
  }

  static BackboneConfig desk() {
    BackboneConfig c;
    c.stem_channels = 16;
    c.pool_stride = 1;
    c.cardinality = 4;
    c.stages = {{1, 32, 16, 1}, {1, 64, 32, 2}, {1, 96, 48, 2}, {1, 128, 64, 2}};
    return c;
  }

  std::int64_t total_stride() const {
    std::int64_t s = stem_stride * pool_stride;
    for (const auto& st : stages) s *= st.stride;
    return s;
  }

  std::int64_t out_channels() const { return stages.empty() ? stem_channels : stages.back().out_channels; }

  void validate(std::int64_t in_h, std::int64_t in_w, std::int64_t out_h, std::int64_t out_w) const {
    if (stages.empty()) throw std::invalid_argument("BackboneConfig: no stages");
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const auto& st = stages[i];
      if (st.blocks < 1) throw std::invalid_argument("BackboneConfig: stage " + std::to_string(i) + " has no blocks");
      if (st.stride != 1 && st.stride != 2)
        throw std::invalid_argument("BackboneConfig: stage " + std::to_string(i) + " stride " +
                                    std::to_string(st.stride) + " not in {1,2}");
      if (st.out_channels % cardinality != 0 || st.width % cardinality != 0)
        throw std::invalid_argument("BackboneConfig: stage " + std::to_string(i) +
                                    " channels not divisible by cardinality " + std::to_string(cardinality));
    }
    const std::int64_t s = total_stride();
    if (in_h % s != 0 || in_w % s != 0 || in_h / s != out_h || in_w / s != out_w)
      throw std::invalid_argument("BackboneConfig: stride schedule (total " + std::to_string(s) + ") maps " +
                                  std::to_string(in_h) + "x" + std::to_string(in_w) + " to " +
                                  std::to_string(in_h / s) + "x" + std::to_string(in_w / s) + ", expected " +
                                  std::to_string(out_h) + "x" + std::to_string(out_w));
  }
};

// 1x1 reduce -> 3x3 grouped -> 1x1 expand, residual add, projection
// shortcut on any shape change.
template <class S>
struct Bottleneck {
  Conv2dLayer<S> conv1, conv2, conv3;
  GroupNormLayer<S> norm1, norm2, norm3;
  Conv2dLayer<S> proj;
  GroupNormLayer<S> proj_norm;
  bool has_proj = false;

  static Bottleneck make(std::int64_t cin, std::int64_t cout, std::int64_t width, std::int64_t cardinality,
                         std::int64_t stride, RandomStream& rng) {
    Bottleneck b;
    b.conv1 = Conv2dLayer<S>::make(cin, width, 1, 1, 0, 1, false, rng);
    b.norm1 = GroupNormLayer<S>::make(width);
    b.conv2 = Conv2dLayer<S>::make(width, width, 3, stride, 1, cardinality, false, rng);
    b.norm2 = GroupNormLayer<S>::make(width);
    b.conv3 = Conv2dLayer<S>::make(width, cout, 1, 1, 0, 1, false, rng);
    b.norm3 = GroupNormLayer<S>::make(cout);
    b.has_proj = cin != cout || stride != 1;
    if (b.has_proj) {
      b.proj = Conv2dLayer<S>::make(cin, cout, 1, stride, 0, 1, false, rng);
      b.proj_norm = GroupNormLayer<S>::make(cout);
    }
    return b;
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> y = relu(norm1.forward(conv1.forward(x)));
    y = relu(norm2.forward(conv2.forward(y)));
    y = norm3.forward(conv3.forward(y));
    Tensor<S> shortcut = has_proj ? proj_norm.forward(proj.forward(x)) : x;
    if (y.shape() != shortcut.shape())
      throw std::invalid_argument("Bottleneck: residual shape " + shape_str(shortcut.shape()) +
                                  " does not match branch " + shape_str(y.shape()));
    return relu(add(y, shortcut));
  }

  void collect(const std::string& prefix, NamedParams<S>& reg) {
    conv1.collect(prefix + ".conv1", reg);
    norm1.collect(prefix + ".norm1", reg);
    conv2.collect(prefix + ".conv2", reg);
    norm2.collect(prefix + ".norm2", reg);
    conv3.collect(prefix + ".conv3", reg);
    norm3.collect(prefix + ".norm3", reg);
    if (has_proj) {
      proj.collect(prefix + ".proj", reg);
      proj_norm.collect(prefix + ".proj_norm", reg);
    }
  }
};

template <class S>
struct Backbone {
  BackboneConfig config;
  Conv2dLayer<S> stem;
  GroupNormLayer<S> stem_norm;
  std::vector<std::vector<Bottleneck<S>>> stages;

  static Backbone make(const BackboneConfig& config, RandomStream& rng) {
    Backbone b;
    b.config = config;
    b.stem = Conv2dLayer<S>::make(config.in_channels, config.stem_channels, 7, config.stem_stride, 3, 1, false, rng);
    b.stem_norm = GroupNormLayer<S>::make(config.stem_channels);
    std::int64_t cin = config.stem_channels;
    for (const auto& spec : config.stages) {
      std::vector<Bottleneck<S>> stage;
      for (std::int64_t i = 0; i < spec.blocks; ++i) {
        stage.push_back(Bottleneck<S>::make(cin, spec.out_channels, spec.width, config.cardinality,
                                            i == 0 ? spec.stride : 1, rng));
        cin = spec.out_channels;
      }
      b.stages.push_back(std::move(stage));
    }
    return b;
  }

  // image [N,Cin,H,W] -> features [N,C,H/stride,W/stride]
  Tensor<S> extract(const Tensor<S>& x) const {
    const std::int64_t s = config.total_stride();
    if (x.rank() != 4 || x.dim(1) != config.in_channels || x.dim(2) % s != 0 || x.dim(3) % s != 0)
      throw std::invalid_argument("Backbone: input " + shape_str(x.shape()) + " not divisible by stride schedule (" +
                                  std::to_string(s) + ")");
    Tensor<S> y = relu(stem_norm.forward(stem.forward(x)));
    y = max_pool2d(y, 3, config.pool_stride, 1);
    for (const auto& stage : stages)
      for (const auto& block : stage) y = block.forward(y);
    return y;
  }

  void collect(const std::string& prefix, NamedParams<S>& reg) {
    stem.collect(prefix + ".stem", reg);
    stem_norm.collect(prefix + ".stem_norm", reg);
    for (std::size_t si = 0; si < stages.size(); ++si)
      for (std::size_t bi = 0; bi < stages[si].size(); ++bi)
        stages[si][bi].collect(prefix + ".stage" + std::to_string(si + 1) + ".block" + std::to_string(bi), reg);
  }
};

}  // namespace ocr
