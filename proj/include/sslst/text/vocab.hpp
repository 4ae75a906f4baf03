/*
 * Copyright 2026 The sslst Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "sslst/text/normalize.hpp"
#include "sslst/text/utf8.hpp"

namespace sslst::text {

enum class VocabKind { Character, Subword };

inline constexpr long kPad = 0;
inline constexpr long kBos = 1;
inline constexpr long kEos = 2;
inline constexpr long kUnk = 3;
inline constexpr long kMask = 4;
inline constexpr long kNumReserved = 5;

inline const std::vector<std::string>& reserved_symbols() {
  static const std::vector<std::string> r{"<pad>", "<s>", "</s>", "<unk>", "<mask>"};
  return r;
}

// Word-start marker used by subword vocabularies.
inline const std::string kWordMark = "\xE2\x96\x81";  // U+2581

class Vocabulary {
 public:
  Vocabulary() : Vocabulary(VocabKind::Character, {}) {}

  // `symbols` excludes the reserved ones, which always occupy ids 0..4.
  Vocabulary(VocabKind kind, const std::vector<std::string>& symbols) : kind_(kind) {
    symbols_ = reserved_symbols();
    for (const auto& s : symbols) {
      if (std::find(symbols_.begin(), symbols_.begin() + kNumReserved, s) != symbols_.begin() + kNumReserved)
        throw TextError("symbol '" + s + "' collides with a reserved symbol");
      symbols_.push_back(s);
    }
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      if (!index_.emplace(symbols_[i], static_cast<long>(i)).second)
        throw TextError("duplicate vocabulary symbol '" + symbols_[i] + "'");
    }
  }

  VocabKind kind() const { return kind_; }
  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  const std::string& symbol(long id) const { return symbols_.at(static_cast<std::size_t>(id)); }

  long id(const std::string& sym) const {
    auto it = index_.find(sym);
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& sym) const { return index_.count(sym) != 0; }

  // Symbol strings of a text (characters, or subword pieces).
  std::vector<std::string> segment(const std::string& text) const {
    if (kind_ == VocabKind::Character) return utf8_chars(text);
    std::vector<std::string> pieces;
    std::string word;
    auto flush = [&] {
      if (word.empty()) return;
      auto w = segment_word(word);
      pieces.insert(pieces.end(), w.begin(), w.end());
      word.clear();
    };
    for (char32_t c : utf8_decode(text)) {
      if (is_space(c))
        flush();
      else
        utf8_append(word, c);
    }
    flush();
    return pieces;
  }

  std::vector<long> encode(const std::string& text) const {
    std::vector<long> ids;
    for (const auto& s : segment(text)) ids.push_back(id(s));
    return ids;
  }

  // Inverse of encode for in-vocabulary text; pad/bos/eos/mask are dropped.
  std::string decode(const std::vector<long>& ids) const {
    std::string out;
    for (long i : ids) {
      if (i == kPad || i == kBos || i == kEos || i == kMask) continue;
      if (i < 0 || static_cast<std::size_t>(i) >= symbols_.size()) throw TextError("id out of range");
      out += symbols_[static_cast<std::size_t>(i)];
    }
    if (kind_ == VocabKind::Subword) {
      std::string spaced;
      std::size_t pos = 0;
      while (pos < out.size()) {
        if (out.compare(pos, kWordMark.size(), kWordMark) == 0) {
          if (!spaced.empty()) spaced.push_back(' ');
          pos += kWordMark.size();
        } else {
          spaced.push_back(out[pos++]);
        }
      }
      return spaced;
    }
    return out;
  }

  // FNV-1a over the symbol list; identifies the output layer's meaning.
  std::string fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& s : symbols_) {
      h = fnv1a(s.data(), s.size(), h);
      h = fnv1a("\n", 1, h);
    }
    return hex64(h);
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write vocabulary '" + path + "'");
    for (const auto& s : symbols_) os << s << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read vocabulary '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) {
      utf8_decode(line);
      lines.push_back(line);
    }
    if (lines.size() < static_cast<std::size_t>(kNumReserved) ||
        !std::equal(reserved_symbols().begin(), reserved_symbols().end(), lines.begin()))
      throw TextError("vocabulary '" + path + "' does not start with the reserved symbols");
    std::vector<std::string> body(lines.begin() + kNumReserved, lines.end());
    bool subword = std::any_of(body.begin(), body.end(),
                               [](const std::string& s) { return s.find(kWordMark) != std::string::npos; });
    return Vocabulary(subword ? VocabKind::Subword : VocabKind::Character, body);
  }

 private:
  // Repeatedly merge the adjacent pair whose concatenation has the lowest id,
  // which replays the merge order recorded by the vocabulary's symbol order.
  std::vector<std::string> segment_word(const std::string& word) const {
    std::vector<std::string> parts{kWordMark};
    for (auto& c : utf8_chars(word)) parts.push_back(std::move(c));
    while (parts.size() > 1) {
      long best = -1;
      std::size_t at = 0;
      for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        auto it = index_.find(parts[i] + parts[i + 1]);
        if (it != index_.end() && (best < 0 || it->second < best)) {
          best = it->second;
          at = i;
        }
      }
      if (best < 0) break;
      parts[at] += parts[at + 1];
      parts.erase(parts.begin() + static_cast<long>(at) + 1);
    }
    return parts;
  }

  VocabKind kind_;
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, long> index_;
};

namespace detail {

// Distinct symbols sorted by descending count, then ascending code point.
inline std::vector<std::string> order_by_frequency(const std::map<char32_t, std::size_t>& counts) {
  std::vector<std::pair<char32_t, std::size_t>> v(counts.begin(), counts.end());
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (const auto& [cp, _] : v) out.push_back(utf8_encode(cp));
  return out;
}

}  // namespace detail

inline Vocabulary build_char_vocab(const std::vector<std::string>& corpus) {
  if (corpus.empty()) throw TextError("cannot build a vocabulary from an empty corpus");
  std::map<char32_t, std::size_t> counts;
  for (const auto& line : corpus)
    for (char32_t c : utf8_decode(line)) ++counts[c];
  return Vocabulary(VocabKind::Character, detail::order_by_frequency(counts));
}

// Byte-pair merges over word-marked text. The result holds the reserved
// symbols, every base character (including the word mark) and merge results
// in merge order, capped at `size`.
inline Vocabulary build_subword_vocab(const std::vector<std::string>& corpus, std::size_t size) {
  if (corpus.empty()) throw TextError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> word_freq;
  for (const auto& line : corpus)
    for (const auto& w : tokenize_whitespace(line)) ++word_freq[w];

  std::map<char32_t, std::size_t> char_counts;
  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  const char32_t mark = utf8_decode(kWordMark)[0];
  for (const auto& [w, f] : word_freq) {
    std::vector<std::string> parts{kWordMark};
    char_counts[mark] += f;
    for (char32_t c : utf8_decode(w)) {
      char_counts[c] += f;
      parts.push_back(utf8_encode(c));
    }
    words.emplace_back(std::move(parts), f);
  }
  std::vector<std::string> symbols = detail::order_by_frequency(char_counts);
  const std::size_t base = symbols.size() + kNumReserved;
  if (size < base)
    throw TextError("subword vocabulary size " + std::to_string(size) + " is below the " +
                    std::to_string(base) + " reserved and base symbols");
  std::unordered_map<std::string, bool> present;
  for (const auto& s : symbols) present[s] = true;

  while (symbols.size() + kNumReserved < size) {
    std::map<std::pair<std::string, std::string>, std::size_t> pairs;
    for (const auto& [parts, f] : words)
      for (std::size_t i = 0; i + 1 < parts.size(); ++i) pairs[{parts[i], parts[i + 1]}] += f;
    if (pairs.empty())
      throw TextError("corpus too small for subword vocabulary of size " + std::to_string(size) +
                      "; achievable size is " + std::to_string(symbols.size() + kNumReserved));
    // Highest count; ties go to the lexicographically smallest pair (map order).
    auto best = pairs.begin();
    for (auto it = pairs.begin(); it != pairs.end(); ++it)
      if (it->second > best->second) best = it;
    const auto [left, right] = best->first;
    const std::string merged = left + right;
    for (auto& [parts, _] : words) {
      std::vector<std::string> next;
      for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i + 1 < parts.size() && parts[i] == left && parts[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(parts[i]);
        }
      }
      parts = std::move(next);
    }
    if (!present[merged]) {
      present[merged] = true;
      symbols.push_back(merged);
    }
  }
  return Vocabulary(VocabKind::Subword, symbols);
}

}  // namespace sslst::text
