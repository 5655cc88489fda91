#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptab/error.hpp"
#include "ptab/pretokenize.hpp"
#include "ptab/textualizer.hpp"

namespace ptab {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr std::size_t kNumSpecials = 5;
inline constexpr std::array<std::string_view, kNumSpecials> kSpecialTokens = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

inline bool is_special(TokenId id) {
  return id >= 0 && static_cast<std::size_t>(id) < kNumSpecials;
}

class Vocabulary {
 public:
  Vocabulary() {
    for (auto s : kSpecialTokens) append(std::string(s));
  }

  /// Specials followed by `tokens` in order. Throws FormatError on duplicates
  /// or on a token that collides with a special.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    for (const auto& t : tokens) {
      if (v.index_.count(t)) throw FormatError("duplicate vocabulary token '" + t + "'");
      v.append(t);
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }

  TokenId id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view token) const {
    return index_.count(std::string(token)) != 0;
  }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw RangeError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(tokens_.size()));
    return tokens_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  void append(std::string t) {
    index_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(std::move(t));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Pre-tokenized fields of a sentence, one piece list per phrase.
inline std::vector<std::vector<Piece>> sentence_pieces(const Sentence& s) {
  std::vector<std::vector<Piece>> out;
  out.reserve(s.phrases.size());
  for (const auto& p : s.phrases) out.push_back(pretokenize(p.rendered));
  return out;
}

/// Tokens with frequency >= min_freq, most frequent first, ties broken
/// lexicographically, capped so that the vocabulary (specials included) has at
/// most max_size entries.
inline Vocabulary build_vocab(const std::vector<const Corpus*>& corpora,
                              std::size_t min_freq = 1, std::size_t max_size = 30000) {
  if (min_freq < 1) throw ContractError("build_vocab: min_freq must be >= 1");
  if (max_size <= kNumSpecials) throw ContractError("build_vocab: max_size must be > 5");
  std::map<std::string, std::size_t> freq;
  for (const Corpus* c : corpora)
    for (const auto& s : c->sentences)
      for (const auto& field : sentence_pieces(s))
        for (const auto& piece : field)
          if (piece.text != kSepLiteral) ++freq[piece.text];
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : freq)
    if (n >= min_freq) ranked.emplace_back(tok, n);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second > b.second;  // map order already lexicographic
  });
  std::vector<std::string> tokens;
  for (auto& [tok, n] : ranked) {
    if (tokens.size() + kNumSpecials >= max_size) break;
    bool special = false;
    for (auto s : kSpecialTokens) special = special || tok == s;
    if (!special) tokens.push_back(tok);
  }
  return Vocabulary::from_tokens(tokens);
}

inline Vocabulary build_vocab(const std::vector<Corpus>& corpora,
                              std::size_t min_freq = 1, std::size_t max_size = 30000) {
  std::vector<const Corpus*> ptrs;
  for (const auto& c : corpora) ptrs.push_back(&c);
  return build_vocab(ptrs, min_freq, max_size);
}

struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  bool operator==(const TokenSpan&) const = default;
};

struct TokenSequence {
  std::vector<TokenId> ids;          // length max_len
  std::vector<std::uint8_t> pad_mask;  // 1 = real token
  std::vector<TokenSpan> token_spans;  // one per field
  std::size_t n_real = 0;
  bool truncated = false;

  std::size_t max_len() const { return ids.size(); }
};

inline TokenSequence encode(const Sentence& sentence, const Vocabulary& vocab,
                            std::size_t max_len) {
  if (max_len < 4) throw ContractError("encode: max_len must be >= 4");
  TokenSequence seq;
  seq.ids.assign(max_len, kPad);
  seq.pad_mask.assign(max_len, 0);
  std::size_t pos = 0;
  auto push = [&](TokenId id) {
    if (pos >= max_len) {
      seq.truncated = true;
      return false;
    }
    seq.ids[pos] = id;
    seq.pad_mask[pos] = 1;
    ++pos;
    return true;
  };
  push(kCls);
  const auto fields = sentence_pieces(sentence);
  for (std::size_t f = 0; f < fields.size(); ++f) {
    if (f > 0 && sentence.use_sep) push(kSep);
    TokenSpan span{std::min(pos, max_len), 0};
    for (const auto& piece : fields[f]) {
      if (piece.text == kSepLiteral) {
        // a literal separator inside a cell closes the span; keep spans
        // covering non-special positions only
        if (!push(kSep)) break;
        continue;
      }
      if (!push(vocab.id(piece.text))) break;
    }
    span.end = std::min(pos, max_len);
    seq.token_spans.push_back(span);
  }
  seq.n_real = pos;
  return seq;
}

inline std::string decode(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::string out;
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size())
      throw RangeError("decode: id " + std::to_string(id) + " >= vocabulary size " +
                       std::to_string(vocab.size()));
    if (id == kPad || id == kCls) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

inline nlohmann::json to_json(const Vocabulary& v) {
  nlohmann::json specials = nlohmann::json::object();
  for (std::size_t i = 0; i < kNumSpecials; ++i)
    specials[std::string(kSpecialTokens[i])] = i;
  return {{"tokens", v.tokens()}, {"specials", specials}};
}

inline Vocabulary vocabulary_from_json(const nlohmann::json& j) {
  try {
    const auto tokens = j.at("tokens").get<std::vector<std::string>>();
    if (tokens.size() < kNumSpecials) throw FormatError("vocabulary lacks special tokens");
    for (std::size_t i = 0; i < kNumSpecials; ++i)
      if (tokens[i] != kSpecialTokens[i])
        throw FormatError("vocabulary id " + std::to_string(i) + " must be " +
                          std::string(kSpecialTokens[i]));
    return Vocabulary::from_tokens(
        std::vector<std::string>(tokens.begin() + kNumSpecials, tokens.end()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed vocabulary: ") + e.what());
  }
}

inline void save_vocabulary(const std::filesystem::path& path, const Vocabulary& v) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write vocabulary " + path.string());
  out << to_json(v).dump() << '\n';
}

inline Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open vocabulary " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("vocabulary " + path.string() + ": " + e.what());
  }
  return vocabulary_from_json(j);
}

}  // namespace ptab
