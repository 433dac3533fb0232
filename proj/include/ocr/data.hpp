#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ocr/image.hpp"
#include "ocr/random.hpp"
#include "ocr/tensor.hpp"
#include "ocr/vocab.hpp"

namespace ocr {

// One cropped word with its transcription. The crop box, when present in
// the annotation, has already been applied to pixels.
struct WordSample {
  Image8 pixels;
  std::string text;
  std::string source;
};

struct LoadStats {
  std::int64_t images = 0;
  std::int64_t words = 0;
  std::int64_t skipped_missing_image = 0;
  std::int64_t skipped_bad_box = 0;
  std::int64_t skipped_empty_text = 0;
};

// JSONL annotations, one parent image per line:
//   {"image": "rel/path.ppm", "words": [{"box": [x,y,w,h], "text": "cat"}]}
// "box" may be omitted to take the whole image. Image paths resolve
// relative to the annotation file. Malformed JSON is fatal (with the line
// number); a missing image file or an out-of-bounds/degenerate box skips
// that record with a warning counted in stats.
std::vector<WordSample> load_annotations(const std::string& path, const std::string& source_tag,
                                         LoadStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Batch mixing
// ---------------------------------------------------------------------------

struct MixSpec {
  std::vector<std::pair<std::string, double>> entries;  // (dataset tag, fraction)
  std::int64_t batch_size = 48;
};

// Largest-remainder apportionment of fraction*batch_size per entry.
// Deterministic: ties go to the earlier entry. Fractions must sum to 1
// within 1e-9.
std::vector<std::int64_t> apportion(const MixSpec& mix);

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

constexpr std::int64_t kInputH = 64;
constexpr std::int64_t kInputW = 256;

// Resize to 64x256 (aspect-distorting) -> optional color jitter + Gaussian
// blur -> grayscale -> [0,1]. Augmentation parameters come only from rng.
template <class S>
Tensor<S> preprocess(const WordSample& sample, bool augment, RandomStream& rng) {
  ImageF img = to_float(sample.pixels);
  img = resize_bilinear(img, kInputH, kInputW);
  if (augment) {
    const float b = static_cast<float>(rng.uniform(0.6, 1.4));
    const float c = static_cast<float>(rng.uniform(0.6, 1.4));
    const float s = static_cast<float>(rng.uniform(0.6, 1.4));
    color_jitter(img, b, c, s);
    if (rng.bernoulli(0.5)) {
      const int ksize = rng.bernoulli(0.5) ? 3 : 5;
      const float sigma = static_cast<float>(rng.uniform(0.1, 2.0));
      gaussian_blur(img, ksize, sigma);
    }
  }
  std::vector<float> gray = to_gray(img);
  std::vector<S> out(gray.size());
  for (std::size_t i = 0; i < gray.size(); ++i) out[i] = static_cast<S>(gray[i] / 255.f);
  return Tensor<S>::from({1, kInputH, kInputW}, std::move(out));
}

// ---------------------------------------------------------------------------
// Batcher
// ---------------------------------------------------------------------------

template <class S>
struct Batch {
  Tensor<S> images;          // [B,1,64,256]
  std::vector<int> targets;  // row-major [B,T], end-terminated, pad-filled
  std::int64_t target_len = 0;
  std::vector<std::string> texts;
  std::vector<std::string> sources;
  std::vector<std::int64_t> counts;  // per MixSpec entry
};

// Draws counts per apportion(mix), sampling uniformly with replacement
// inside each dataset. Batch row order follows the MixSpec entry order.
template <class S>
Batch<S> make_batch(const std::map<std::string, std::vector<WordSample>>& datasets, const MixSpec& mix,
                    const Vocabulary& vocab, RandomStream& rng, bool augment) {
  const std::vector<std::int64_t> counts = apportion(mix);
  for (std::size_t i = 0; i < mix.entries.size(); ++i) {
    auto it = datasets.find(mix.entries[i].first);
    if (it == datasets.end())
      throw std::invalid_argument("make_batch: unknown dataset tag '" + mix.entries[i].first + "'");
    if (it->second.empty() && counts[i] > 0)
      throw std::invalid_argument("make_batch: dataset '" + mix.entries[i].first + "' is empty");
  }

  Batch<S> batch;
  batch.counts = counts;
  const std::int64_t b = mix.batch_size;
  std::vector<S> images(static_cast<std::size_t>(b * kInputH * kInputW));
  std::vector<std::vector<int>> rows;
  rows.reserve(static_cast<std::size_t>(b));
  std::int64_t row = 0;
  for (std::size_t i = 0; i < mix.entries.size(); ++i) {
    const auto& pool = datasets.at(mix.entries[i].first);
    for (std::int64_t k = 0; k < counts[i]; ++k, ++row) {
      const auto& sample = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
      Tensor<S> t = preprocess<S>(sample, augment, rng);
      std::copy(t.data(), t.data() + kInputH * kInputW, images.begin() + row * kInputH * kInputW);
      rows.push_back(vocab.encode(sample.text));
      batch.texts.push_back(sample.text);
      batch.sources.push_back(mix.entries[i].first);
    }
  }
  batch.images = Tensor<S>::from({b, 1, kInputH, kInputW}, std::move(images));
  auto [targets, t_len] = pad_token_rows(rows, vocab.pad());
  batch.targets = std::move(targets);
  batch.target_len = t_len;
  return batch;
}

// ---------------------------------------------------------------------------
// Synthetic desk-scale corpus
// ---------------------------------------------------------------------------

// Renders random alphanumeric strings (length 1-10) with a built-in 5x7
// bitmap font, random scale/offset/contrast and optional noise.
// Deterministic per seed.
std::vector<WordSample> synth_corpus(std::int64_t n, std::uint64_t seed,
                                     const std::string& charset = "0123456789abcdefghijklmnopqrstuvwxyz");

// 5x7 glyph rows for a charset character ('1' differs from 'l', '0' from 'o').
const char* const* glyph_rows(char c);

// Persists a corpus as PGM files + JSONL annotation that round-trips
// through load_annotations.
void save_corpus(const std::string& dir, const std::vector<WordSample>& samples);

}  // namespace ocr
