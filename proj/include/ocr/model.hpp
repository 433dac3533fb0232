#pragma once

#include <nlohmann/json.hpp>

#include "ocr/backbone.hpp"
#include "ocr/head.hpp"
#include "ocr/tps.hpp"
#include "ocr/vocab.hpp"

namespace ocr {

// Full hyperparameter record; persisted with every checkpoint so files are
// self-describing.
struct ModelConfig {
  std::string preset = "desk";
  CaseMode case_mode = CaseMode::insensitive;
  std::int64_t fiducials = 20;
  std::int64_t rect_h = 48;
  std::int64_t rect_w = 192;
  BackboneConfig backbone;
  HeadDims head;

  static ModelConfig desk(CaseMode mode = CaseMode::insensitive) {
    ModelConfig c;
    c.preset = "desk";
    c.case_mode = mode;
    c.backbone = BackboneConfig::desk();
    c.head.channels = c.backbone.out_channels();
    c.head.attn_dim = 128;
    c.head.hidden = 256;
    c.head.num_classes = Vocabulary::make(mode).num_classes();
    return c;
  }

  static ModelConfig full(CaseMode mode = CaseMode::insensitive) {
    ModelConfig c;
    c.preset = "full";
    c.case_mode = mode;
    c.backbone = BackboneConfig::full();
    c.head.channels = c.backbone.out_channels();
    c.head.attn_dim = 256;
    c.head.hidden = 1024;
    c.head.num_classes = Vocabulary::make(mode).num_classes();
    return c;
  }

  static ModelConfig preset_by_name(const std::string& name, CaseMode mode) {
    if (name == "desk") return desk(mode);
    if (name == "full") return full(mode);
    throw std::invalid_argument("unknown model preset '" + name + "' (expected desk|full)");
  }

  void validate() const {
    backbone.validate(rect_h, rect_w, head.feat_h, head.feat_w);
    if (head.channels != backbone.out_channels())
      throw std::invalid_argument("ModelConfig: head channels " + std::to_string(head.channels) +
                                  " != backbone output " + std::to_string(backbone.out_channels()));
    if (head.num_classes != Vocabulary::make(case_mode).num_classes())
      throw std::invalid_argument("ModelConfig: " + std::to_string(head.num_classes) + " classes inconsistent with " +
                                  std::string(case_mode_name(case_mode)) + " case mode");
    if (fiducials < 6 || fiducials % 2 != 0) throw std::invalid_argument("ModelConfig: fiducials must be even, >= 6");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["preset"] = preset;
    j["case_mode"] = case_mode_name(case_mode);
    j["fiducials"] = fiducials;
    j["rect_h"] = rect_h;
    j["rect_w"] = rect_w;
    j["backbone"] = {{"in_channels", backbone.in_channels},
                     {"stem_channels", backbone.stem_channels},
                     {"stem_stride", backbone.stem_stride},
                     {"pool_stride", backbone.pool_stride},
                     {"cardinality", backbone.cardinality},
                     {"stages", nlohmann::json::array()}};
    for (const auto& s : backbone.stages)
      j["backbone"]["stages"].push_back({{"blocks", s.blocks}, {"out_channels", s.out_channels}, {"width", s.width}, {"stride", s.stride}});
    j["head"] = {{"channels", head.channels},   {"encoder_layers", head.encoder_layers},
                 {"encoder_kernel", head.encoder_kernel}, {"attn_dim", head.attn_dim},
                 {"hidden", head.hidden},       {"embed", head.embed},
                 {"num_classes", head.num_classes}, {"max_len", head.max_len},
                 {"feat_h", head.feat_h},       {"feat_w", head.feat_w}};
    return j;
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.preset = j.at("preset").get<std::string>();
    c.case_mode = parse_case_mode(j.at("case_mode").get<std::string>());
    c.fiducials = j.at("fiducials").get<std::int64_t>();
    c.rect_h = j.at("rect_h").get<std::int64_t>();
    c.rect_w = j.at("rect_w").get<std::int64_t>();
    const auto& b = j.at("backbone");
    c.backbone.in_channels = b.at("in_channels").get<std::int64_t>();
    c.backbone.stem_channels = b.at("stem_channels").get<std::int64_t>();
    c.backbone.stem_stride = b.at("stem_stride").get<std::int64_t>();
    c.backbone.pool_stride = b.at("pool_stride").get<std::int64_t>();
    c.backbone.cardinality = b.at("cardinality").get<std::int64_t>();
    c.backbone.stages.clear();
    for (const auto& s : b.at("stages"))
      c.backbone.stages.push_back({s.at("blocks").get<std::int64_t>(), s.at("out_channels").get<std::int64_t>(),
                                   s.at("width").get<std::int64_t>(), s.at("stride").get<std::int64_t>()});
    const auto& h = j.at("head");
    c.head.channels = h.at("channels").get<std::int64_t>();
    c.head.encoder_layers = h.at("encoder_layers").get<std::int64_t>();
    c.head.encoder_kernel = h.at("encoder_kernel").get<std::int64_t>();
    c.head.attn_dim = h.at("attn_dim").get<std::int64_t>();
    c.head.hidden = h.at("hidden").get<std::int64_t>();
    c.head.embed = h.at("embed").get<std::int64_t>();
    c.head.num_classes = h.at("num_classes").get<std::int64_t>();
    c.head.max_len = h.at("max_len").get<std::int64_t>();
    c.head.feat_h = h.at("feat_h").get<std::int64_t>();
    c.head.feat_w = h.at("feat_w").get<std::int64_t>();
    return c;
  }
};

// TPS rectification -> grouped-conv feature extraction -> attention decoder.
template <class S>
struct Model {
  ModelConfig config;
  Vocabulary vocab;
  TpsRectifier<S> rectifier;
  Backbone<S> backbone;
  RecognitionHead<S> head;

  static Model make(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    RandomStream rng(seed);
    return Model{config, Vocabulary::make(config.case_mode),
                 TpsRectifier<S>(config.fiducials, config.rect_h, config.rect_w, rng),
                 Backbone<S>::make(config.backbone, rng), RecognitionHead<S>::make(config.head, rng)};
  }

  NamedParams<S> params() {
    NamedParams<S> reg;
    rectifier.collect("tps", reg);
    backbone.collect("backbone", reg);
    head.collect("head", reg);
    return reg;
  }

  // images [N,1,64,256] -> attention memory
  HeadMemory<S> forward_memory(const Tensor<S>& images) const {
    Tensor<S> rectified = rectifier.forward(images);
    Tensor<S> features = backbone.extract(rectified);
    return head.encode(features);
  }

  Tensor<S> teacher_forced_log_probs(const Tensor<S>& images, const std::vector<int>& targets, std::int64_t t_len,
                                     std::vector<Tensor<S>>* step_logits = nullptr) const {
    HeadMemory<S> mem = forward_memory(images);
    return head.forward_teacher_forced(mem, targets, images.dim(0), t_len, vocab, step_logits);
  }

  GreedyResult<S> predict(const Tensor<S>& images, std::int64_t max_len = 0) const {
    NoGradGuard ng;
    HeadMemory<S> mem = forward_memory(images);
    return head.greedy_decode(mem, max_len > 0 ? max_len : config.head.max_len, vocab);
  }
};

}  // namespace ocr
