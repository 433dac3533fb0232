#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ocr/data.hpp"
#include "ocr/vocab.hpp"

namespace ocr {

// Benchmark-protocol filter: which ground truths count at evaluation time.
struct EvalProtocol {
  bool filter_non_alphanumeric = false;
  std::int64_t min_length = 0;  // 0 = off
  CaseMode case_mode = CaseMode::insensitive;
};

// Presets by benchmark name. IC03/IC13 filter non-alphanumeric words
// shorter than 3 symbols; the others are evaluated unfiltered.
EvalProtocol protocol_preset(const std::string& benchmark);
bool has_protocol_preset(const std::string& benchmark);

struct EvalRow {
  std::string dataset;
  bool absent = false;  // dataset path missing; row kept as a marker
  std::int64_t n_total = 0;
  std::int64_t n_kept = 0;
  std::int64_t n_correct = 0;
  double accuracy = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::string checkpoint_id;
  EvalProtocol protocol;
  bool preset_by_name = false;  // per-dataset benchmark presets were applied
  bool partial = false;         // true when any row is absent
};

// Order-preserving, idempotent filter per protocol.
std::vector<WordSample> filter_dataset(const std::vector<WordSample>& samples, const EvalProtocol& protocol);

// Exact word match after case folding in insensitive mode. Throws on length
// mismatch.
double word_accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& ground_truths,
                     CaseMode case_mode);

std::string render_report_text(const EvalReport& report);
std::string render_report_csv(const EvalReport& report);

}  // namespace ocr
