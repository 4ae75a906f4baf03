// Fuzz text over ASCII, punctuation variants and multi-byte UTF-8 (test-only).
#pragma once

#include <string>
#include <vector>

#include "sslst/common.hpp"

namespace sslst::testing {

inline std::string random_text(Rng& rng, std::size_t len) {
  static const std::vector<std::string> alphabet{
      "a", "B", "z", "Q", " ", "  ", "\t", ",", ".", "!", "?", "-", "'", "\"", "3",
      "\xE2\x80\x9C", "\xE2\x80\x9D", "\xE2\x80\x99", "\xE2\x80\x94", "\xE2\x80\xA6",
      "\xC3\x89", "\xC3\xA9", "\xD0\x96", "\xE3\x80\x82", "\xEF\xBC\x81"};
  std::string s;
  for (std::size_t i = 0; i < len; ++i)
    s += alphabet[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(alphabet.size()) - 1))];
  return s;
}

}  // namespace sslst::testing
