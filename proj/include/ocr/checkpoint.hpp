#pragma once

#include <cstring>
#include <fstream>

#include "ocr/adam.hpp"
#include "ocr/model.hpp"

namespace ocr {

// Checkpoint format: little-endian binary
//   magic "TRCK", u32 version,
//   u32 header_len, header JSON (model config, step, optimizer metadata),
//   named tensor records: u32 name_len, name, u32 rank, u32 extents[], f32 payload.
// Parameters serialize as f32 regardless of the compute scalar.

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& f, std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

inline std::uint32_t read_u32(std::istream& f, const std::string& path) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  if (!f) throw std::runtime_error("checkpoint: truncated file " + path);
  return v;
}

template <class S>
void write_record(std::ostream& f, const std::string& name, const Shape& shape, const S* data, std::int64_t n) {
  write_u32(f, static_cast<std::uint32_t>(name.size()));
  f.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(f, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) write_u32(f, static_cast<std::uint32_t>(d));
  std::vector<float> buf(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(data[i]);
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
}

struct RawRecord {
  std::string name;
  Shape shape;
  std::vector<float> payload;
};

inline bool read_record(std::istream& f, const std::string& path, RawRecord& rec) {
  std::uint32_t name_len = 0;
  f.read(reinterpret_cast<char*>(&name_len), 4);
  if (f.eof()) return false;
  if (!f || name_len > 4096) throw std::runtime_error("checkpoint: corrupt record name in " + path);
  rec.name.resize(name_len);
  f.read(rec.name.data(), name_len);
  const std::uint32_t rank = read_u32(f, path);
  if (rank > 8) throw std::runtime_error("checkpoint: corrupt record rank in " + path);
  rec.shape.assign(rank, 0);
  for (auto& d : rec.shape) d = read_u32(f, path);
  rec.payload.resize(static_cast<std::size_t>(numel(rec.shape)));
  f.read(reinterpret_cast<char*>(rec.payload.data()), static_cast<std::streamsize>(rec.payload.size() * 4));
  if (!f) throw std::runtime_error("checkpoint: truncated payload for '" + rec.name + "' in " + path);
  return true;
}

}  // namespace detail

template <class S>
void save_checkpoint(const std::string& path, Model<S>& model, std::int64_t step,
                     const AdamState<S>* optimizer = nullptr) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  nlohmann::json header;
  header["model"] = model.config.to_json();
  std::string symbols;
  for (int i = 0; i < model.vocab.num_chars(); ++i) symbols.push_back(model.vocab.symbol(i));
  header["vocab"] = {{"case_mode", case_mode_name(model.vocab.mode())}, {"symbols", symbols}};
  header["step"] = step;
  header["has_optimizer"] = optimizer != nullptr;
  if (optimizer) {
    header["adam"] = {{"lr", optimizer->lr},       {"beta1", optimizer->beta1},
                      {"beta2", optimizer->beta2}, {"epsilon", optimizer->epsilon},
                      {"weight_decay", optimizer->weight_decay}, {"step", optimizer->step}};
  }
  const std::string hs = header.dump();
  f.write("TRCK", 4);
  detail::write_u32(f, kCheckpointVersion);
  detail::write_u32(f, static_cast<std::uint32_t>(hs.size()));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));

  NamedParams<S> params = model.params();
  for (auto& [name, t] : params.items) detail::write_record(f, name, t.shape(), t.data(), t.size());
  if (optimizer) {
    for (std::size_t i = 0; i < params.items.size(); ++i) {
      const auto& [name, t] = params.items[i];
      detail::write_record(f, "adam.m." + name, t.shape(), optimizer->m[i].data(), t.size());
      detail::write_record(f, "adam.v." + name, t.shape(), optimizer->v[i].data(), t.size());
    }
  }
  if (!f) throw std::runtime_error("save_checkpoint: short write to " + path);
}

// Fills an existing model's parameters (and optionally optimizer moments)
// from the records of a checkpoint. Shape disagreements are an error naming
// the tensor, which is what loading into the wrong preset produces.
template <class S>
void load_params(const std::string& path, Model<S>& model, AdamState<S>* optimizer = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_params: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "TRCK", 4) != 0) throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint32_t version = detail::read_u32(f, path);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                             std::to_string(kCheckpointVersion) + ") in " + path);
  const std::uint32_t header_len = detail::read_u32(f, path);
  std::string hs(header_len, '\0');
  f.read(hs.data(), header_len);
  if (!f) throw std::runtime_error("checkpoint: truncated header in " + path);

  NamedParams<S> params = model.params();
  std::vector<bool> seen(params.items.size(), false);
  detail::RawRecord rec;
  while (detail::read_record(f, path, rec)) {
    const bool is_m = rec.name.rfind("adam.m.", 0) == 0;
    const bool is_v = rec.name.rfind("adam.v.", 0) == 0;
    const std::string base = is_m || is_v ? rec.name.substr(7) : rec.name;
    std::size_t idx = params.items.size();
    for (std::size_t i = 0; i < params.items.size(); ++i)
      if (params.items[i].first == base) {
        idx = i;
        break;
      }
    if (idx == params.items.size())
      throw std::runtime_error("checkpoint: unknown tensor '" + rec.name + "' in " + path);
    Tensor<S>& t = params.items[idx].second;
    if (t.shape() != rec.shape)
      throw std::runtime_error("checkpoint: tensor '" + rec.name + "' has shape " + shape_str(rec.shape) +
                               ", model expects " + shape_str(t.shape()));
    if (is_m || is_v) {
      if (optimizer) {
        auto& dst = is_m ? optimizer->m[idx] : optimizer->v[idx];
        dst.resize(rec.payload.size());
        for (std::size_t i = 0; i < rec.payload.size(); ++i) dst[i] = static_cast<S>(rec.payload[i]);
      }
    } else {
      for (std::size_t i = 0; i < rec.payload.size(); ++i) t.data()[i] = static_cast<S>(rec.payload[i]);
      seen[idx] = true;
    }
  }
  for (std::size_t i = 0; i < params.items.size(); ++i)
    if (!seen[i]) throw std::runtime_error("checkpoint: missing tensor '" + params.items[i].first + "' in " + path);
}

template <class S>
struct LoadedCheckpoint {
  ModelConfig config;
  std::int64_t step = 0;
  bool has_optimizer = false;
  Model<S> model;
  AdamState<S> optimizer;
};

// Self-describing load: rebuilds the model from the stored config.
template <class S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "TRCK", 4) != 0) throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint32_t version = detail::read_u32(f, path);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                             std::to_string(kCheckpointVersion) + ") in " + path);
  const std::uint32_t header_len = detail::read_u32(f, path);
  std::string hs(header_len, '\0');
  f.read(hs.data(), header_len);
  if (!f) throw std::runtime_error("checkpoint: truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(hs);

  LoadedCheckpoint<S> out{ModelConfig::from_json(header.at("model")),
                          header.at("step").get<std::int64_t>(),
                          header.value("has_optimizer", false),
                          Model<S>::make(ModelConfig::from_json(header.at("model")), /*seed=*/0),
                          AdamState<S>{}};
  if (header.contains("vocab")) {
    std::string symbols;
    for (int i = 0; i < out.model.vocab.num_chars(); ++i) symbols.push_back(out.model.vocab.symbol(i));
    if (header["vocab"].at("symbols").get<std::string>() != symbols)
      throw std::runtime_error("checkpoint: stored vocabulary disagrees with the " +
                               std::string(case_mode_name(out.model.vocab.mode())) + " table in " + path);
  }
  if (out.has_optimizer) {
    NamedParams<S> params = out.model.params();
    out.optimizer = AdamState<S>::init(params.tensors());
    const auto& a = header.at("adam");
    out.optimizer.lr = a.at("lr").get<double>();
    out.optimizer.beta1 = a.at("beta1").get<double>();
    out.optimizer.beta2 = a.at("beta2").get<double>();
    out.optimizer.epsilon = a.at("epsilon").get<double>();
    out.optimizer.weight_decay = a.at("weight_decay").get<double>();
    out.optimizer.step = a.at("step").get<std::int64_t>();
  }
  f.close();
  load_params(path, out.model, out.has_optimizer ? &out.optimizer : nullptr);
  return out;
}

}  // namespace ocr
