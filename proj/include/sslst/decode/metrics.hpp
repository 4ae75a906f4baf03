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
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "sslst/common.hpp"
#include "sslst/text/normalize.hpp"

namespace sslst::decode {

template <class Tok>
std::size_t edit_distance(const std::vector<Tok>& a, const std::vector<Tok>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0u : 1u)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

template <class Tok>
double wer(const std::vector<Tok>& ref, const std::vector<Tok>& hyp) {
  if (ref.empty()) throw InvalidArgument("wer: empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

inline double wer(const std::string& ref, const std::string& hyp) {
  return wer(text::tokenize_whitespace(ref), text::tokenize_whitespace(hyp));
}

// Total edits over total reference words.
inline double corpus_wer(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
  if (refs.size() != hyps.size()) throw InvalidArgument("wer: reference and hypothesis counts differ");
  std::size_t edits = 0, words = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    auto r = text::tokenize_whitespace(refs[i]);
    if (r.empty()) throw InvalidArgument("wer: empty reference at segment " + std::to_string(i));
    edits += edit_distance(r, text::tokenize_whitespace(hyps[i]));
    words += r.size();
  }
  if (words == 0) throw InvalidArgument("wer: empty reference corpus");
  return static_cast<double>(edits) / static_cast<double>(words);
}

struct BleuStats {
  double score = 0.0;
  std::array<double, 4> precisions{};
  double brevity_penalty = 1.0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
};

inline std::vector<std::string> bleu_tokens(const std::string& s) {
  std::u32string lower;
  for (char32_t c : text::utf8_decode(s)) lower.push_back(text::to_lower(c));
  return text::tokenize(text::utf8_encode(lower));
}

// Corpus BLEU-4 with one reference per segment, no smoothing.
inline BleuStats corpus_bleu(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
  if (refs.size() != hyps.size()) throw InvalidArgument("bleu: reference and hypothesis counts differ");
  std::array<std::size_t, 4> match{}, total{};
  BleuStats st;
  for (std::size_t s = 0; s < refs.size(); ++s) {
    const auto r = bleu_tokens(refs[s]);
    const auto h = bleu_tokens(hyps[s]);
    st.ref_len += r.size();
    st.hyp_len += h.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, std::size_t> rc, hc;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++rc[{r.begin() + static_cast<long>(i), r.begin() + static_cast<long>(i + n)}];
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hc[{h.begin() + static_cast<long>(i), h.begin() + static_cast<long>(i + n)}];
      for (const auto& [g, c] : hc) {
        auto it = rc.find(g);
        if (it != rc.end()) match[n - 1] += std::min(c, it->second);
        total[n - 1] += c;
      }
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    st.precisions[n] = total[n] == 0 ? 0.0 : static_cast<double>(match[n]) / static_cast<double>(total[n]);
    if (st.precisions[n] == 0.0)
      zero = true;
    else
      log_sum += std::log(st.precisions[n]);
  }
  if (st.hyp_len < st.ref_len)
    st.brevity_penalty = st.hyp_len == 0 ? 0.0 : std::exp(1.0 - static_cast<double>(st.ref_len) / static_cast<double>(st.hyp_len));
  st.score = zero ? 0.0 : 100.0 * st.brevity_penalty * std::exp(log_sum / 4.0);
  return st;
}

inline double bleu(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
  return corpus_bleu(refs, hyps).score;
}

inline std::string format_metric(const std::string& name, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s=%.2f", name.c_str(), value);
  return buf;
}

}  // namespace sslst::decode
