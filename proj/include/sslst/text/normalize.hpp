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

#include <string>
#include <string_view>
#include <vector>

#include "sslst/text/utf8.hpp"

namespace sslst::text {

inline bool is_space(char32_t c) {
  return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\v' || c == U'\f' ||
         c == 0x00A0 || (c >= 0x2000 && c <= 0x200B) || c == 0x202F || c == 0x205F || c == 0x3000;
}

inline bool is_punct(char32_t c) {
  if (c < 0x80) return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
                       (c >= 0x7B && c <= 0x7E);
  return c == 0x00A1 || c == 0x00A7 || c == 0x00AB || c == 0x00B6 || c == 0x00B7 || c == 0x00BB ||
         c == 0x00BF || (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) ||
         (c >= 0x3001 && c <= 0x3003) || (c >= 0x3008 && c <= 0x3011) || (c >= 0xFF01 && c <= 0xFF0F) ||
         (c >= 0xFF1A && c <= 0xFF20);
}

// Punctuation variants folded to their ASCII form (empty: keep as is).
inline std::u32string_view fold_punct(char32_t c) {
  switch (c) {
    case 0x2018: case 0x2019: case 0x201A: case 0x201B: case 0x2032: case 0x00B4: case 0x0060:
      return U"'";
    case 0x201C: case 0x201D: case 0x201E: case 0x201F: case 0x00AB: case 0x00BB: case 0x2033:
      return U"\"";
    case 0x2010: case 0x2011: case 0x2012: case 0x2013: case 0x2014: case 0x2015: case 0x2212:
      return U"-";
    case 0x2026: return U"...";
    case 0x3001: case 0xFF0C: return U",";
    case 0x3002: case 0xFF0E: return U".";
    case 0xFF01: return U"!";
    case 0xFF1F: return U"?";
    case 0xFF1A: return U":";
    case 0xFF1B: return U";";
    case 0xFF08: return U"(";
    case 0xFF09: return U")";
    default: return {};
  }
}

inline char32_t to_lower(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 32;
  if (c < 0x80) return c;
  if (c >= 0x00C0 && c <= 0x00DE && c != 0x00D7) return c + 32;
  if ((c >= 0x0100 && c <= 0x0137) || (c >= 0x014A && c <= 0x0177)) return (c % 2 == 0) ? c + 1 : c;
  if ((c >= 0x0139 && c <= 0x0148) || (c >= 0x0179 && c <= 0x017E)) return (c % 2 == 1) ? c + 1 : c;
  if (c >= 0x0391 && c <= 0x03A9 && c != 0x03A2) return c + 32;
  if (c >= 0x0410 && c <= 0x042F) return c + 32;
  if (c >= 0x0400 && c <= 0x040F) return c + 80;
  return c;
}

// Fold punctuation variants to ASCII, lowercase, optionally drop all
// punctuation (transcripts), collapse whitespace runs to one space, trim.
inline std::string normalize(std::string_view raw, bool is_transcript) {
  const std::u32string in = utf8_decode(raw);
  std::u32string folded;
  folded.reserve(in.size());
  for (char32_t c : in) {
    auto f = fold_punct(c);
    if (!f.empty())
      folded.append(f);
    else
      folded.push_back(c);
  }
  std::u32string out;
  out.reserve(folded.size());
  bool pending_space = false;
  for (char32_t c : folded) {
    if (is_space(c) || (is_transcript && is_punct(c))) {
      pending_space = pending_space || is_space(c);
      continue;
    }
    if (pending_space && !out.empty()) out.push_back(U' ');
    pending_space = false;
    out.push_back(to_lower(c));
  }
  return utf8_encode(out);
}

// Whitespace split with every punctuation character detached as its own token.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::u32string cur;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back(utf8_encode(cur));
    cur.clear();
  };
  for (char32_t c : utf8_decode(text)) {
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      tokens.push_back(utf8_encode(c));
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return tokens;
}

inline std::vector<std::string> tokenize_whitespace(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char32_t c : utf8_decode(text)) {
    if (is_space(c)) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      utf8_append(cur, c);
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

inline std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

}  // namespace sslst::text
