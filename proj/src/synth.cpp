#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ocr/data.hpp"

namespace ocr {

namespace {

// 5x7 bitmap font for [0-9a-z]. Letters use block capitals; '0' is slashed
// to stay distinct from 'o', and 'l' is an L-shape distinct from '1'.
struct Glyph {
  char c;
  const char* rows[7];
};

constexpr Glyph kFont[] = {
    {'0', {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "}},
    {'1', {"  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
    {'2', {" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"}},
    {'3', {" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "}},
    {'4', {"   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "}},
    {'5', {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "}},
    {'6', {"  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "}},
    {'7', {"#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "}},
    {'8', {" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "}},
    {'9', {" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "}},
    {'a', {" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
    {'b', {"#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "}},
    {'c', {" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "}},
    {'d', {"#### ", "#   #", "#   #", "#   #", "#   #", "#   #", "#### "}},
    {'e', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"}},
    {'f', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "}},
    {'g', {" ### ", "#   #", "#    ", "# ###", "#   #", "#   #", " ### "}},
    {'h', {"#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
    {'i', {" ### ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
    {'j', {"  ###", "   # ", "   # ", "   # ", "   # ", "#  # ", " ##  "}},
    {'k', {"#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"}},
    {'l', {"#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"}},
    {'m', {"#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"}},
    {'n', {"#   #", "##  #", "##  #", "# # #", "#  ##", "#  ##", "#   #"}},
    {'o', {" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
    {'p', {"#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "}},
    {'q', {" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"}},
    {'r', {"#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"}},
    {'s', {" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "}},
    {'t', {"#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "}},
    {'u', {"#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
    {'v', {"#   #", "#   #", "#   #", "#   #", " # # ", " # # ", "  #  "}},
    {'w', {"#   #", "#   #", "#   #", "# # #", "# # #", "## ##", "#   #"}},
    {'x', {"#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"}},
    {'y', {"#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "}},
    {'z', {"#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"}},
};

}  // namespace

const char* const* glyph_rows(char c) {
  for (const auto& g : kFont)
    if (g.c == c) return g.rows;
  throw std::invalid_argument(std::string("glyph_rows: no glyph for '") + c + "'");
}

std::vector<WordSample> synth_corpus(std::int64_t n, std::uint64_t seed, const std::string& charset) {
  if (n < 1) throw std::invalid_argument("synth_corpus: n must be >= 1");
  if (charset.empty()) throw std::invalid_argument("synth_corpus: empty charset");
  for (char c : charset) glyph_rows(c);  // validates the charset up front

  RandomStream rng(seed);
  std::vector<WordSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t idx = 0; idx < n; ++idx) {
    const std::int64_t len = rng.uniform_int(1, 10);
    std::string text;
    for (std::int64_t i = 0; i < len; ++i)
      text.push_back(charset[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(charset.size()) - 1))]);

    const std::int64_t scale = rng.uniform_int(2, 4);
    const std::int64_t mx = rng.uniform_int(2, 8);
    const std::int64_t my = rng.uniform_int(2, 8);
    std::int64_t bg = rng.uniform_int(0, 110);
    std::int64_t fg = rng.uniform_int(145, 255);
    if (rng.bernoulli(0.5)) std::swap(bg, fg);  // dark-on-light half the time
    const std::int64_t noise = rng.uniform_int(0, 12);

    Image8 img;
    img.c = 1;
    img.h = 7 * scale + 2 * my;
    img.w = len * 5 * scale + (len - 1) * scale + 2 * mx;
    img.px.assign(static_cast<std::size_t>(img.h * img.w), static_cast<std::uint8_t>(bg));

    for (std::int64_t i = 0; i < len; ++i) {
      const char* const* rows = glyph_rows(text[static_cast<std::size_t>(i)]);
      const std::int64_t gx = mx + i * 6 * scale;
      for (int ry = 0; ry < 7; ++ry)
        for (int rx = 0; rx < 5; ++rx) {
          if (rows[ry][rx] != '#') continue;
          for (std::int64_t sy = 0; sy < scale; ++sy)
            for (std::int64_t sx = 0; sx < scale; ++sx)
              img.at(my + ry * scale + sy, gx + rx * scale + sx) = static_cast<std::uint8_t>(fg);
        }
    }
    if (noise > 0) {
      for (auto& p : img.px) {
        const std::int64_t v = static_cast<std::int64_t>(p) + rng.uniform_int(-noise, noise);
        p = static_cast<std::uint8_t>(std::clamp<std::int64_t>(v, 0, 255));
      }
    }
    out.push_back(WordSample{std::move(img), std::move(text), "synth"});
  }
  return out;
}

void save_corpus(const std::string& dir, const std::vector<WordSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream ann(fs::path(dir) / "annotations.jsonl");
  if (!ann) throw std::runtime_error("save_corpus: cannot write annotations in " + dir);
  char name[32];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "images/%05zu.pgm", i);
    write_pnm((fs::path(dir) / name).string(), samples[i].pixels);
    nlohmann::json rec;
    rec["image"] = name;
    rec["words"] = nlohmann::json::array(
        {{{"box", {0, 0, samples[i].pixels.w, samples[i].pixels.h}}, {"text", samples[i].text}}});
    ann << rec.dump() << "\n";
  }
}

}  // namespace ocr
