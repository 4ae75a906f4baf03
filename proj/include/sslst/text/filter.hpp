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

#include <cstddef>
#include <vector>

namespace sslst::text {

struct SampleSize {
  std::size_t frames = 0;
  std::size_t chars = 0;
  bool operator==(const SampleSize&) const = default;
};

struct FilterLimits {
  std::size_t min_frames = 5;
  std::size_t max_frames = 3000;
  std::size_t min_chars = 1;
  std::size_t max_chars = 400;
};

inline bool keep_sample(const SampleSize& s, const FilterLimits& lim = {}) {
  return s.frames >= lim.min_frames && s.frames <= lim.max_frames && s.chars >= lim.min_chars &&
         s.chars <= lim.max_chars;
}

// Indices of the samples that survive, in input order.
inline std::vector<std::size_t> filter_indices(const std::vector<SampleSize>& corpus, const FilterLimits& lim = {}) {
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (keep_sample(corpus[i], lim)) kept.push_back(i);
  return kept;
}

inline std::vector<SampleSize> filter_samples(const std::vector<SampleSize>& corpus, const FilterLimits& lim = {}) {
  std::vector<SampleSize> out;
  for (std::size_t i : filter_indices(corpus, lim)) out.push_back(corpus[i]);
  return out;
}

}  // namespace sslst::text
