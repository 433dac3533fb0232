#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocr/tensor.hpp"

namespace ocr {

// Binary tensor fixture: magic "TREC", u32 rank, u32 extents[rank], f64
// payload, all little-endian. Golden gradient fixtures for the tests are
// stored in this format.

inline void write_trec(const std::string& path, const Shape& shape, const std::vector<double>& payload) {
  if (numel(shape) != static_cast<std::int64_t>(payload.size()))
    throw std::invalid_argument("write_trec: payload does not match shape " + shape_str(shape));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_trec: cannot open " + path);
  f.write("TREC", 4);
  const std::uint32_t rank = static_cast<std::uint32_t>(shape.size());
  f.write(reinterpret_cast<const char*>(&rank), 4);
  for (auto d : shape) {
    const std::uint32_t e = static_cast<std::uint32_t>(d);
    f.write(reinterpret_cast<const char*>(&e), 4);
  }
  f.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * 8));
  if (!f) throw std::runtime_error("write_trec: short write to " + path);
}

inline std::pair<Shape, std::vector<double>> read_trec(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_trec: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "TREC", 4) != 0) throw std::runtime_error("read_trec: bad magic in " + path);
  std::uint32_t rank = 0;
  f.read(reinterpret_cast<char*>(&rank), 4);
  if (!f || rank > 8) throw std::runtime_error("read_trec: bad rank in " + path);
  Shape shape(rank);
  for (auto& d : shape) {
    std::uint32_t e = 0;
    f.read(reinterpret_cast<char*>(&e), 4);
    d = e;
  }
  if (!f) throw std::runtime_error("read_trec: truncated header in " + path);
  std::vector<double> payload(static_cast<std::size_t>(numel(shape)));
  f.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size() * 8));
  if (!f) throw std::runtime_error("read_trec: truncated payload in " + path);
  return {shape, payload};
}

}  // namespace ocr
