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
#include <cmath>
#include <vector>

#include "sslst/common.hpp"
#include "sslst/numerics/tensor.hpp"

namespace sslst::audio {

struct AugmentPolicy {
  std::size_t time_masks = 2;
  std::size_t time_width = 100;
  std::size_t freq_masks = 2;
  std::size_t freq_width = 27;  // at the reference dimension
  std::size_t reference_dim = 80;

  std::size_t scaled_freq_width(std::size_t dim) const {
    return static_cast<std::size_t>(std::lround(static_cast<double>(freq_width) * static_cast<double>(dim) /
                                                static_cast<double>(reference_dim)));
  }
};

struct MaskRect {
  std::size_t start = 0, width = 0;
  bool operator==(const MaskRect&) const = default;
};

struct AugmentMasks {
  std::vector<MaskRect> time, freq;
};

// Draw order: all time widths, all time starts, all frequency widths, all
// frequency starts. Width w ~ U{0..max}; start ~ U{0..extent-w}.
inline AugmentMasks sample_masks(std::size_t frames, std::size_t dim, const AugmentPolicy& p, Rng& rng) {
  AugmentMasks m;
  auto draw = [&](std::vector<MaskRect>& out, std::size_t count, std::size_t max_w, std::size_t extent) {
    out.resize(count);
    for (auto& r : out) r.width = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(max_w)));
    for (auto& r : out) r.start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(extent - r.width)));
  };
  draw(m.time, p.time_masks, std::min(p.time_width, frames), frames);
  draw(m.freq, p.freq_masks, std::min(p.scaled_freq_width(dim), dim), dim);
  return m;
}

template <class T>
void apply_masks(Tensor<T>& f, const AugmentMasks& m) {
  const std::size_t D = f.dim(1);
  for (const auto& r : m.time)
    std::fill(f.ptr() + r.start * D, f.ptr() + (r.start + r.width) * D, T(0));
  for (const auto& r : m.freq)
    for (std::size_t t = 0; t < f.dim(0); ++t) std::fill(f.ptr() + t * D + r.start, f.ptr() + t * D + r.start + r.width, T(0));
}

template <class T>
Tensor<T> specaugment(const Tensor<T>& frames, const AugmentPolicy& p, Rng rng) {
  if (frames.rank() != 2 || frames.size() == 0) throw InvalidArgument("specaugment expects a non-empty [T, D] matrix");
  Tensor<T> out = frames;
  apply_masks(out, sample_masks(frames.dim(0), frames.dim(1), p, rng));
  return out;
}

}  // namespace sslst::audio
