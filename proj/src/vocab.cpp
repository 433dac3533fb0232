#include "ocr/vocab.hpp"

#include <cctype>
#include <cstdint>
#include <stdexcept>

namespace ocr {

CaseMode parse_case_mode(const std::string& s) {
  if (s == "insensitive") return CaseMode::insensitive;
  if (s == "sensitive") return CaseMode::sensitive;
  throw std::invalid_argument("unknown case mode '" + s + "' (expected insensitive|sensitive)");
}

Vocabulary Vocabulary::make(CaseMode mode) {
  Vocabulary v;
  v.mode_ = mode;
  for (char c = '0'; c <= '9'; ++c) v.chars_.push_back(c);
  for (char c = 'a'; c <= 'z'; ++c) v.chars_.push_back(c);
  if (mode == CaseMode::sensitive)
    for (char c = 'A'; c <= 'Z'; ++c) v.chars_.push_back(c);
  return v;
}

int Vocabulary::char_index(char ch) const {
  char c = ch;
  if (mode_ == CaseMode::insensitive) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (std::size_t i = 0; i < chars_.size(); ++i)
    if (chars_[i] == c) return static_cast<int>(i);
  return unk();
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  if (text.empty()) throw std::invalid_argument("Vocabulary::encode: empty text");
  std::vector<int> out;
  out.reserve(text.size() + 1);
  for (char ch : text) out.push_back(char_index(ch));
  out.push_back(end());
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& tokens) const {
  std::string out;
  for (int t : tokens) {
    if (t == end()) break;
    if (is_char(t)) out.push_back(symbol(t));
  }
  return out;
}

std::pair<std::vector<int>, std::int64_t> pad_token_rows(const std::vector<std::vector<int>>& rows, int pad_index,
                                                         std::int64_t min_len) {
  std::int64_t t_len = min_len;
  for (const auto& r : rows) t_len = std::max(t_len, static_cast<std::int64_t>(r.size()));
  std::vector<int> out(rows.size() * static_cast<std::size_t>(t_len), pad_index);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) out[i * static_cast<std::size_t>(t_len) + j] = rows[i][j];
  return {std::move(out), t_len};
}

}  // namespace ocr
