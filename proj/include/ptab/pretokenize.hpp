#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace ptab {

inline constexpr std::string_view kSepLiteral = "[SEP]";

/// One normalized token together with the byte range it came from.
struct Piece {
  std::string text;
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Sign, digits, at most one decimal point, at least one digit.
inline bool is_numeric_literal(std::string_view s) {
  std::size_t i = 0;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
  bool digit = false, dot = false;
  for (; i < s.size(); ++i) {
    if (std::isdigit(static_cast<unsigned char>(s[i]))) {
      digit = true;
    } else if (s[i] == '.' && !dot) {
      dot = true;
    } else {
      return false;
    }
  }
  return digit;
}

/// Word-level pre-tokenization shared by the textualizer's length budget and
/// the encoder input. Lowercases; splits on whitespace; ":" and the literal
/// "[SEP]" are standalone tokens; numeric literals become one token per
/// character.
inline std::vector<Piece> pretokenize(std::string_view text) {
  std::vector<Piece> out;
  std::size_t start = 0;
  std::size_t i = 0;
  auto flush = [&](std::size_t stop) {
    if (stop <= start) return;
    const auto word = text.substr(start, stop - start);
    if (is_numeric_literal(word)) {
      for (std::size_t k = 0; k < word.size(); ++k)
        out.push_back({std::string(1, word[k]), start + k, start + k + 1});
    } else {
      std::string lower(word);
      for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      out.push_back({std::move(lower), start, stop});
    }
  };
  while (i < text.size()) {
    if (text.compare(i, kSepLiteral.size(), kSepLiteral) == 0) {
      flush(i);
      out.push_back({std::string(kSepLiteral), i, i + kSepLiteral.size()});
      i += kSepLiteral.size();
      start = i;
    } else if (text[i] == ':') {
      flush(i);
      out.push_back({":", i, i + 1});
      start = ++i;
    } else if (std::isspace(static_cast<unsigned char>(text[i]))) {
      flush(i);
      start = ++i;
    } else {
      ++i;
    }
  }
  flush(i);
  return out;
}

inline std::size_t count_tokens(std::string_view text) {
  return pretokenize(text).size();
}

}  // namespace ptab
