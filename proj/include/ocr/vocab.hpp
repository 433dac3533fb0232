#pragma once

#include <string>
#include <vector>

namespace ocr {

enum class CaseMode { insensitive, sensitive };

inline const char* case_mode_name(CaseMode m) { return m == CaseMode::insensitive ? "insensitive" : "sensitive"; }
CaseMode parse_case_mode(const std::string& s);

// Bijection between recognizable symbols and class indices.
//
// Insensitive (40 classes): 0-9 digits, 10-35 'a'-'z', then start, end,
// pad, unk. Sensitive (66 classes): 0-9 digits, 10-35 'a'-'z', 36-61
// 'A'-'Z', then the four specials.
class Vocabulary {
 public:
  static Vocabulary make(CaseMode mode);

  CaseMode mode() const { return mode_; }
  int num_classes() const { return static_cast<int>(chars_.size()) + 4; }
  int num_chars() const { return static_cast<int>(chars_.size()); }
  int start() const { return num_chars(); }
  int end() const { return num_chars() + 1; }
  int pad() const { return num_chars() + 2; }
  int unk() const { return num_chars() + 3; }
  bool is_char(int idx) const { return idx >= 0 && idx < num_chars(); }
  char symbol(int idx) const { return chars_[static_cast<std::size_t>(idx)]; }

  // Out-of-vocabulary characters map to unk; insensitive mode folds case
  // first. Throws on empty text.
  std::vector<int> encode(const std::string& text) const;

  // Characters up to the first end token; specials never appear in the
  // output.
  std::string decode(const std::vector<int>& tokens) const;

  int char_index(char ch) const;

 private:
  CaseMode mode_ = CaseMode::insensitive;
  std::vector<char> chars_;
};

// Pads token rows with the pad index to a common length (at least min_len).
// Returns the row-major [N,T] matrix and T.
std::pair<std::vector<int>, std::int64_t> pad_token_rows(const std::vector<std::vector<int>>& rows, int pad_index,
                                                         std::int64_t min_len = 1);

}  // namespace ocr
