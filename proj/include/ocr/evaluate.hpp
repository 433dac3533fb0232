#pragma once

#include <filesystem>

#include "ocr/data.hpp"
#include "ocr/evaluator.hpp"
#include "ocr/model.hpp"

namespace ocr {

// Greedy transcription of samples with deterministic (augment-free)
// preprocessing, batched in fixed-size chunks.
template <class S>
std::vector<std::string> predict_strings(const Model<S>& model, const std::vector<WordSample>& samples,
                                         std::int64_t batch_size = 48) {
  NoGradGuard ng;
  std::vector<std::string> out;
  out.reserve(samples.size());
  RandomStream rng(0);  // unused by augment-free preprocessing
  for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(batch_size));
    const std::int64_t n = static_cast<std::int64_t>(end - begin);
    std::vector<S> images(static_cast<std::size_t>(n * kInputH * kInputW));
    for (std::size_t i = begin; i < end; ++i) {
      Tensor<S> t = preprocess<S>(samples[i], false, rng);
      std::copy(t.data(), t.data() + kInputH * kInputW,
                images.begin() + static_cast<std::int64_t>(i - begin) * kInputH * kInputW);
    }
    auto result = model.predict(Tensor<S>::from({n, 1, kInputH, kInputW}, std::move(images)));
    for (auto& text : result.texts) out.push_back(std::move(text));
  }
  return out;
}

struct EvalDatasetSpec {
  std::string name;
  std::string path;  // JSONL annotation
};

// Benchmark-protocol evaluation: per dataset, filter ground truths, decode
// greedily, compare under the protocol case mode. A missing dataset path
// yields an absent row and marks the report partial; other rows still
// evaluate.
template <class S>
EvalReport evaluate(const Model<S>& model, const std::vector<EvalDatasetSpec>& specs, const EvalProtocol& protocol,
                    bool preset_by_name = false, std::int64_t batch_size = 48) {
  EvalReport report;
  report.protocol = protocol;
  report.preset_by_name = preset_by_name;
  for (const auto& spec : specs) {
    EvalRow row;
    row.dataset = spec.name;
    if (!std::filesystem::exists(spec.path)) {
      row.absent = true;
      report.partial = true;
      report.rows.push_back(row);
      continue;
    }
    const EvalProtocol active =
        preset_by_name && has_protocol_preset(spec.name) ? protocol_preset(spec.name) : protocol;
    auto samples = load_annotations(spec.path, spec.name);
    row.n_total = static_cast<std::int64_t>(samples.size());
    auto kept = filter_dataset(samples, active);
    row.n_kept = static_cast<std::int64_t>(kept.size());
    if (!kept.empty()) {
      std::vector<std::string> truths;
      truths.reserve(kept.size());
      for (const auto& s : kept) truths.push_back(s.text);
      auto predictions = predict_strings(model, kept, batch_size);
      const double acc = word_accuracy(predictions, truths, active.case_mode);
      row.accuracy = acc;
      row.n_correct = static_cast<std::int64_t>(std::llround(acc * static_cast<double>(kept.size())));
    }
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace ocr
