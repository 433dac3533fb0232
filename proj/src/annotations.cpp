#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "ocr/data.hpp"

namespace ocr {

using nlohmann::json;

std::vector<WordSample> load_annotations(const std::string& path, const std::string& source_tag, LoadStats* stats) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_annotations: cannot open " + path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();

  LoadStats local;
  std::vector<WordSample> samples;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("load_annotations: " + path + ":" + std::to_string(line_no) +
                               ": malformed JSON: " + e.what());
    }
    if (!rec.contains("image") || !rec.contains("words"))
      throw std::runtime_error("load_annotations: " + path + ":" + std::to_string(line_no) +
                               ": record requires \"image\" and \"words\"");
    const std::string img_rel = rec["image"].get<std::string>();
    const std::filesystem::path img_path = base / img_rel;

    Image8 parent;
    try {
      parent = read_pnm(img_path.string());
    } catch (const std::exception&) {
      std::cerr << "load_annotations: skipping missing/unreadable image " << img_path.string() << "\n";
      ++local.skipped_missing_image;
      continue;
    }
    ++local.images;

    for (const auto& w : rec["words"]) {
      const std::string text = w.value("text", std::string());
      if (text.empty()) {
        std::cerr << "load_annotations: " << path << ":" << line_no << ": skipping word with empty text\n";
        ++local.skipped_empty_text;
        continue;
      }
      Image8 pixels;
      if (w.contains("box")) {
        const auto& b = w["box"];
        if (!b.is_array() || b.size() != 4)
          throw std::runtime_error("load_annotations: " + path + ":" + std::to_string(line_no) +
                                   ": box must be [x,y,w,h]");
        const std::int64_t bx = b[0].get<std::int64_t>(), by = b[1].get<std::int64_t>();
        const std::int64_t bw = b[2].get<std::int64_t>(), bh = b[3].get<std::int64_t>();
        if (bw <= 0 || bh <= 0 || bx < 0 || by < 0 || bx + bw > parent.w || by + bh > parent.h) {
          std::cerr << "load_annotations: " << path << ":" << line_no << ": skipping word '" << text
                    << "' with box outside " << parent.w << "x" << parent.h << "\n";
          ++local.skipped_bad_box;
          continue;
        }
        pixels = crop(parent, bx, by, bw, bh);
      } else {
        pixels = parent;
      }
      samples.push_back(WordSample{std::move(pixels), text, source_tag});
      ++local.words;
    }
  }
  if (stats) *stats = local;
  return samples;
}

std::vector<std::int64_t> apportion(const MixSpec& mix) {
  if (mix.batch_size < 1) throw std::invalid_argument("apportion: batch_size must be positive");
  if (mix.entries.empty()) throw std::invalid_argument("apportion: empty mix");
  double total = 0.0;
  for (const auto& [tag, f] : mix.entries) {
    if (f < 0.0 || f > 1.0) throw std::invalid_argument("apportion: fraction for '" + tag + "' outside [0,1]");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("apportion: fractions sum to " + std::to_string(total) + ", expected 1");

  std::vector<std::int64_t> counts(mix.entries.size());
  std::vector<double> remainders(mix.entries.size());
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < mix.entries.size(); ++i) {
    const double exact = mix.entries[i].second * static_cast<double>(mix.batch_size);
    counts[i] = static_cast<std::int64_t>(exact);
    remainders[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::int64_t left = mix.batch_size - assigned;
  while (left > 0) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < remainders.size(); ++i)
      if (remainders[i] > remainders[best]) best = i;  // strict: ties keep the earlier entry
    counts[best] += 1;
    remainders[best] = -1.0;
    --left;
  }
  return counts;
}

}  // namespace ocr
