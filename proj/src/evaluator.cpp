#include "ocr/evaluator.hpp"

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace ocr {

namespace {

bool all_alnum(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isalnum(c) != 0; });
}

std::string fold(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

EvalProtocol protocol_preset(const std::string& benchmark) {
  EvalProtocol p;
  if (benchmark == "ic03" || benchmark == "ic13") {
    p.filter_non_alphanumeric = true;
    p.min_length = 3;
  } else if (has_protocol_preset(benchmark)) {
    // ic15, svt, svtp, iiit5k: full evaluation subset.
  } else {
    throw std::invalid_argument("protocol_preset: unknown benchmark '" + benchmark + "'");
  }
  return p;
}

bool has_protocol_preset(const std::string& benchmark) {
  return benchmark == "ic03" || benchmark == "ic13" || benchmark == "ic15" || benchmark == "svt" ||
         benchmark == "svtp" || benchmark == "iiit5k";
}

std::vector<WordSample> filter_dataset(const std::vector<WordSample>& samples, const EvalProtocol& protocol) {
  std::vector<WordSample> kept;
  kept.reserve(samples.size());
  for (const auto& s : samples) {
    if (protocol.filter_non_alphanumeric && !all_alnum(s.text)) continue;
    if (protocol.min_length > 0 && static_cast<std::int64_t>(s.text.size()) < protocol.min_length) continue;
    kept.push_back(s);
  }
  return kept;
}

double word_accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& ground_truths,
                     CaseMode case_mode) {
  if (predictions.size() != ground_truths.size())
    throw std::invalid_argument("word_accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                                std::to_string(ground_truths.size()) + " ground truths");
  if (predictions.empty()) return 0.0;
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool match = case_mode == CaseMode::insensitive ? fold(predictions[i]) == fold(ground_truths[i])
                                                          : predictions[i] == ground_truths[i];
    if (match) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

std::string render_report_text(const EvalReport& report) {
  std::ostringstream os;
  if (!report.checkpoint_id.empty()) os << "checkpoint: " << report.checkpoint_id << "\n";
  if (report.preset_by_name) {
    os << "protocol: per-dataset benchmark presets, case-" << case_mode_name(report.protocol.case_mode) << "\n";
  } else {
    os << "protocol: " << (report.protocol.filter_non_alphanumeric ? "alnum-only" : "unfiltered") << ", min length "
       << report.protocol.min_length << ", case-" << case_mode_name(report.protocol.case_mode) << "\n";
  }
  std::size_t name_w = 7;
  for (const auto& r : report.rows) name_w = std::max(name_w, r.dataset.size());
  os << std::left << std::setw(static_cast<int>(name_w + 2)) << "dataset" << std::right << std::setw(8) << "total"
     << std::setw(8) << "kept" << std::setw(9) << "correct" << std::setw(10) << "accuracy" << "\n";
  for (const auto& r : report.rows) {
    os << std::left << std::setw(static_cast<int>(name_w + 2)) << r.dataset << std::right;
    if (r.absent) {
      os << std::setw(8) << "-" << std::setw(8) << "-" << std::setw(9) << "-" << std::setw(10) << "absent" << "\n";
    } else {
      os << std::setw(8) << r.n_total << std::setw(8) << r.n_kept << std::setw(9) << r.n_correct << std::setw(10)
         << std::fixed << std::setprecision(4) << r.accuracy << "\n";
    }
  }
  return os.str();
}

std::string render_report_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "dataset,n_total,n_kept,n_correct,accuracy,absent\n";
  for (const auto& r : report.rows) {
    os << r.dataset << "," << r.n_total << "," << r.n_kept << "," << r.n_correct << ","
       << std::setprecision(10) << r.accuracy << "," << (r.absent ? 1 : 0) << "\n";
  }
  return os.str();
}

}  // namespace ocr
