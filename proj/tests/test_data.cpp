#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "ocr/data.hpp"
#include "ocr/evaluator.hpp"
#include "ocr/image.hpp"
#include "ocr/vocab.hpp"

namespace fs = std::filesystem;
using ocr::CaseMode;
using ocr::Image8;
using ocr::MixSpec;
using ocr::RandomStream;
using ocr::Vocabulary;
using ocr::WordSample;

namespace {

Image8 solid_image(std::int64_t h, std::int64_t w, std::int64_t c, std::initializer_list<std::uint8_t> color) {
  Image8 img;
  img.h = h;
  img.w = w;
  img.c = c;
  img.px.resize(static_cast<std::size_t>(h * w * c));
  std::int64_t i = 0;
  for (auto& p : img.px) p = color.begin()[i++ % c];
  return img;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("vocabulary layout and encoding") {
  Vocabulary v = Vocabulary::make(CaseMode::insensitive);
  CHECK(v.num_classes() == 40);
  CHECK(v.start() == 36);
  CHECK(v.end() == 37);
  CHECK(v.pad() == 38);
  CHECK(v.unk() == 39);

  CHECK(v.encode("ab1") == std::vector<int>{10, 11, 1, 37});
  CHECK(v.encode("A?") == std::vector<int>{10, 39, 37});
  CHECK(v.decode(v.encode("hello")) == "hello");
  CHECK_THROWS_AS(v.encode(""), std::invalid_argument);

  Vocabulary s = Vocabulary::make(CaseMode::sensitive);
  CHECK(s.num_classes() == 66);
  CHECK(s.decode(s.encode("HeLLo")) == "HeLLo");
}

TEST_CASE("vocabulary bijection over the character classes") {
  for (CaseMode mode : {CaseMode::insensitive, CaseMode::sensitive}) {
    Vocabulary v = Vocabulary::make(mode);
    for (int i = 0; i < v.num_chars(); ++i) {
      const std::string one(1, v.symbol(i));
      CHECK(v.decode(v.encode(one)) == one);
    }
    // Decoded strings never contain specials.
    const std::string out = v.decode({0, v.unk(), v.pad(), 5, v.start(), v.end(), 9});
    for (char c : out) CHECK(v.is_char(v.char_index(c)));
    CHECK(out == "05");
  }
}

TEST_CASE("pad_token_rows pads to the batch maximum") {
  auto [tokens, t_len] = ocr::pad_token_rows({{1, 2, 37}, {5, 37}}, 38);
  CHECK(t_len == 3);
  CHECK(tokens == std::vector<int>{1, 2, 37, 5, 37, 38});
}

TEST_CASE("apportionment follows the largest-remainder rule") {
  MixSpec half{{{"A", 0.5}, {"B", 0.5}}, 48};
  CHECK(ocr::apportion(half) == std::vector<std::int64_t>{24, 24});

  MixSpec table4{{{"MJ", 0.4}, {"OI", 0.2}, {"ST", 0.4}}, 48};
  CHECK(ocr::apportion(table4) == std::vector<std::int64_t>{19, 10, 19});

  MixSpec solo{{{"A", 1.0}}, 48};
  CHECK(ocr::apportion(solo) == std::vector<std::int64_t>{48});

  MixSpec bad{{{"A", 0.6}, {"B", 0.6}}, 48};
  CHECK_THROWS_AS(ocr::apportion(bad), std::invalid_argument);
}

TEST_CASE("apportionment counts are nonnegative and sum to batch_size") {
  RandomStream rng(99);
  for (int rep = 0; rep < 50; ++rep) {
    const int k = static_cast<int>(rng.uniform_int(1, 5));
    std::vector<double> raw(static_cast<std::size_t>(k));
    double total = 0;
    for (auto& f : raw) {
      f = rng.uniform(0.05, 1.0);
      total += f;
    }
    MixSpec mix;
    mix.batch_size = rng.uniform_int(1, 97);
    for (int i = 0; i < k; ++i) mix.entries.emplace_back("d" + std::to_string(i), raw[static_cast<std::size_t>(i)] / total);
    auto counts = ocr::apportion(mix);
    std::int64_t sum = 0;
    for (auto c : counts) {
      CHECK(c >= 0);
      sum += c;
    }
    CHECK(sum == mix.batch_size);
  }
}

TEST_CASE("preprocess maps white to ones and red to its luma") {
  RandomStream rng(1);
  WordSample white{solid_image(10, 30, 3, {255, 255, 255}), "w", "t"};
  auto t = ocr::preprocess<double>(white, false, rng);
  REQUIRE(t.shape() == ocr::Shape{1, 64, 256});
  for (std::int64_t i = 0; i < t.size(); ++i) CHECK(t.data()[i] == doctest::Approx(1.0).epsilon(1e-6));

  WordSample red{solid_image(8, 20, 3, {255, 0, 0}), "r", "t"};
  auto tr = ocr::preprocess<double>(red, false, rng);
  for (std::int64_t i = 0; i < tr.size(); ++i) CHECK(std::abs(tr.data()[i] - 0.299) <= 1.0 / 255.0);
}

TEST_CASE("preprocess is deterministic without augmentation and bounded with it") {
  RandomStream gen(7);
  auto corpus = ocr::synth_corpus(4, 11);
  for (const auto& s : corpus) {
    RandomStream r1(5), r2(5);
    auto a = ocr::preprocess<float>(s, false, r1);
    auto b = ocr::preprocess<float>(s, false, r2);
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);

    RandomStream r3(gen.next_u64());
    auto c = ocr::preprocess<float>(s, true, r3);
    REQUIRE(c.shape() == ocr::Shape{1, 64, 256});
    for (std::int64_t i = 0; i < c.size(); ++i) {
      CHECK(c.data()[i] >= 0.0f);
      CHECK(c.data()[i] <= 1.0f);
    }

    // Augmentation parameters come only from the stream: same seed, same
    // pixels.
    RandomStream r4(42), r5(42);
    auto d = ocr::preprocess<float>(s, true, r4);
    auto e = ocr::preprocess<float>(s, true, r5);
    for (std::int64_t i = 0; i < d.size(); ++i) CHECK(d.data()[i] == e.data()[i]);
  }
}

TEST_CASE("load_annotations crops words and skips invalid records") {
  TempDir dir("ocr_ann_test");
  // Parent image 1: 3 words. Parent image 2: referenced but missing.
  Image8 parent = solid_image(20, 30, 3, {10, 20, 30});
  for (std::int64_t y = 5; y < 9; ++y)
    for (std::int64_t x = 3; x < 10; ++x) parent.at(y, x, 0) = 200;
  ocr::write_pnm((dir.path / "p1.ppm").string(), parent);
  Image8 parent2 = solid_image(16, 16, 1, {77});
  ocr::write_pnm((dir.path / "p2.pgm").string(), parent2);

  std::ofstream ann(dir.path / "ann.jsonl");
  ann << R"({"image": "p1.ppm", "words": [{"box": [3,5,7,4], "text": "cat"}, {"box": [0,0,30,20], "text": "dog"}, {"box": [2,2,0,4], "text": "bad"}, {"text": "whole"}]})" << "\n";
  ann << R"({"image": "p2.pgm", "words": [{"box": [1,1,8,8], "text": "x9"}, {"box": [10,10,20,20], "text": "oob"}]})" << "\n";
  ann << R"({"image": "missing.ppm", "words": [{"text": "gone"}]})" << "\n";
  ann.close();

  ocr::LoadStats stats;
  auto samples = ocr::load_annotations((dir.path / "ann.jsonl").string(), "tag", &stats);
  REQUIRE(samples.size() == 4);  // cat, dog, whole, x9
  CHECK(stats.words == 4);
  CHECK(stats.skipped_bad_box == 2);
  CHECK(stats.skipped_missing_image == 1);
  CHECK(samples[0].text == "cat");
  CHECK(samples[0].source == "tag");

  // Crop content equals the manual pixel slice of the parent.
  const auto& cat = samples[0].pixels;
  REQUIRE(cat.h == 4);
  REQUIRE(cat.w == 7);
  for (std::int64_t y = 0; y < 4; ++y)
    for (std::int64_t x = 0; x < 7; ++x)
      for (std::int64_t ch = 0; ch < 3; ++ch) CHECK(cat.at(y, x, ch) == parent.at(y + 5, x + 3, ch));

  // Malformed JSON is fatal and reports the line number.
  std::ofstream bad(dir.path / "bad.jsonl");
  bad << R"({"image": "p1.ppm", "words": []})" << "\n";
  bad << "{nonsense\n";
  bad.close();
  CHECK_THROWS_WITH_AS(ocr::load_annotations((dir.path / "bad.jsonl").string(), "t", nullptr),
                       doctest::Contains(":2:"), std::runtime_error);
}

TEST_CASE("make_batch draws the apportioned counts per dataset") {
  auto a = ocr::synth_corpus(6, 21);
  auto b = ocr::synth_corpus(5, 22);
  std::map<std::string, std::vector<WordSample>> datasets{{"A", a}, {"B", b}};
  Vocabulary vocab = Vocabulary::make(CaseMode::insensitive);
  MixSpec mix{{{"A", 0.5}, {"B", 0.5}}, 8};
  RandomStream rng(3);
  auto batch = ocr::make_batch<float>(datasets, mix, vocab, rng, true);
  CHECK(batch.counts == std::vector<std::int64_t>{4, 4});
  REQUIRE(batch.images.shape() == ocr::Shape{8, 1, 64, 256});
  CHECK(std::count(batch.sources.begin(), batch.sources.end(), "A") == 4);
  CHECK(std::count(batch.sources.begin(), batch.sources.end(), "B") == 4);
  // Targets end-terminate and pad out each row.
  for (std::size_t r = 0; r < 8; ++r) {
    const std::string& text = batch.texts[r];
    bool saw_end = false;
    for (std::int64_t t = 0; t < batch.target_len; ++t) {
      const int tok = batch.targets[r * static_cast<std::size_t>(batch.target_len) + static_cast<std::size_t>(t)];
      if (saw_end) CHECK(tok == vocab.pad());
      if (tok == vocab.end()) saw_end = true;
    }
    CHECK(saw_end);
    CHECK(text.size() + 1 <= static_cast<std::size_t>(batch.target_len));
  }

  MixSpec unknown{{{"C", 1.0}}, 4};
  RandomStream rng2(4);
  CHECK_THROWS_AS(ocr::make_batch<float>(datasets, unknown, vocab, rng2, false), std::invalid_argument);
}

TEST_CASE("synthetic corpus is deterministic and well-formed") {
  auto a = ocr::synth_corpus(32, 7);
  auto b = ocr::synth_corpus(32, 7);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].text == b[i].text);
    CHECK(a[i].pixels.px == b[i].pixels.px);
    CHECK(a[i].text.size() >= 1);
    CHECK(a[i].text.size() <= 10);
    for (char c : a[i].text) CHECK(((c >= '0' && c <= '9') || (c >= 'a' && c <= 'z')));
  }
  CHECK_THROWS_AS(ocr::synth_corpus(4, 1, ""), std::invalid_argument);
}

TEST_CASE("glyphs for '1' and 'l' differ") {
  const char* const* one = ocr::glyph_rows('1');
  const char* const* ell = ocr::glyph_rows('l');
  bool differ = false;
  for (int r = 0; r < 7; ++r)
    if (std::string(one[r]) != ell[r]) differ = true;
  CHECK(differ);
}

TEST_CASE("corpus persists and round-trips through load_annotations") {
  TempDir dir("ocr_corpus_rt");
  auto corpus = ocr::synth_corpus(5, 77);
  ocr::save_corpus(dir.path.string(), corpus);
  auto loaded = ocr::load_annotations((dir.path / "annotations.jsonl").string(), "synth", nullptr);
  REQUIRE(loaded.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(loaded[i].text == corpus[i].text);
    CHECK(loaded[i].pixels.px == corpus[i].pixels.px);
  }
}

TEST_CASE("filter_dataset applies the alnum/min-length protocol") {
  auto mk = [](const std::string& t) { return WordSample{solid_image(4, 4, 1, {1}), t, "x"}; };
  std::vector<WordSample> samples = {mk("cat"), mk("a"), mk("x-1"), mk("dog!")};
  ocr::EvalProtocol protocol;
  protocol.filter_non_alphanumeric = true;
  protocol.min_length = 3;
  auto kept = ocr::filter_dataset(samples, protocol);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].text == "cat");

  // min_length=0 and filter off is the identity.
  ocr::EvalProtocol off;
  CHECK(ocr::filter_dataset(samples, off).size() == samples.size());

  // Idempotent.
  auto twice = ocr::filter_dataset(kept, protocol);
  REQUIRE(twice.size() == kept.size());
}

TEST_CASE("word_accuracy matches exactly under the case mode") {
  CHECK(ocr::word_accuracy({"hello", "world"}, {"hello", "word"}, CaseMode::insensitive) == doctest::Approx(0.5));
  CHECK(ocr::word_accuracy({"HeLLo"}, {"hello"}, CaseMode::insensitive) == doctest::Approx(1.0));
  CHECK(ocr::word_accuracy({"HeLLo"}, {"hello"}, CaseMode::sensitive) == doctest::Approx(0.0));
  CHECK(ocr::word_accuracy({""}, {"abc"}, CaseMode::insensitive) == doctest::Approx(0.0));
  CHECK_THROWS_AS(ocr::word_accuracy({"a"}, {}, CaseMode::insensitive), std::invalid_argument);
}
