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

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "sslst/corpus/manifest.hpp"

namespace sslst::corpus {

// Toy language: symbol a is a 100 ms tone at base_hz + step_hz * a (+ the
// language offset); the "translation" reverses the sequence and maps each
// symbol through a -> (mult * a + add) mod alphabet.
struct SynthSpec {
  int alphabet = 20;
  std::size_t tone_samples = 1600;
  double base_hz = 300.0;
  double step_hz = 120.0;
  double freq_offset_hz = 0.0;
  double amplitude = 0.5;
  double noise = 0.01;
  std::size_t min_len = 3;
  std::size_t max_len = 10;
  int bijection_mult = 7;
  int bijection_add = 3;
  std::string src_lang = "en";
  std::string tgt_lang = "tg";

  double tone_hz(int a) const { return base_hz + step_hz * a + freq_offset_hz; }
  int translate_symbol(int a) const { return ((bijection_mult * a + bijection_add) % alphabet + alphabet) % alphabet; }
  void validate() const;
};

inline void SynthSpec::validate() const {
  if (alphabet < 1 || alphabet > 26) throw InvalidArgument("synth: alphabet must be in 1..26");
  std::vector<bool> hit(static_cast<std::size_t>(alphabet), false);
  for (int a = 0; a < alphabet; ++a) hit[static_cast<std::size_t>(translate_symbol(a))] = true;
  for (bool h : hit)
    if (!h) throw InvalidArgument("synth: symbol map is not a bijection");
  if (alphabet < 1 || alphabet > 26) throw InvalidArgument("synth: alphabet must be in 1..26");
  if (min_len < 1 || max_len < min_len) throw InvalidArgument("synth: invalid length range");
  if (tone_hz(alphabet - 1) >= audio::kSampleRate / 2.0) throw InvalidArgument("synth: tones exceed Nyquist");
}

struct SynthUtterance {
  std::string id;
  std::vector<int> symbols;
  std::string transcript;
  std::string translation;
  audio::Waveform audio;
};

inline std::string symbols_to_text(const std::vector<int>& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out.push_back(' ');
    out.push_back(static_cast<char>('a' + s[i]));
  }
  return out;
}

inline std::vector<int> translate(const SynthSpec& spec, const std::vector<int>& src) {
  std::vector<int> out(src.rbegin(), src.rend());
  for (auto& a : out) a = spec.translate_symbol(a);
  return out;
}

inline SynthUtterance synth_utterance(const SynthSpec& spec, std::size_t index, std::uint64_t seed) {
  Rng rng(mix_seed(seed ^ index));
  SynthUtterance u;
  char id[64];
  std::snprintf(id, sizeof id, "%s-%06zu", spec.src_lang.c_str(), index);
  u.id = id;
  const auto len = static_cast<std::size_t>(rng.uniform_int(static_cast<long>(spec.min_len), static_cast<long>(spec.max_len)));
  for (std::size_t i = 0; i < len; ++i) u.symbols.push_back(static_cast<int>(rng.uniform_int(0, spec.alphabet - 1)));
  u.transcript = symbols_to_text(u.symbols);
  u.translation = symbols_to_text(translate(spec, u.symbols));
  u.audio.samples.reserve(len * spec.tone_samples);
  for (int a : u.symbols) {
    const double w = 2.0 * M_PI * spec.tone_hz(a) / audio::kSampleRate;
    for (std::size_t n = 0; n < spec.tone_samples; ++n)
      u.audio.samples.push_back(spec.amplitude * std::sin(w * static_cast<double>(n)) + rng.normal(0.0, spec.noise));
  }
  return u;
}

inline std::vector<SynthUtterance> synth_corpus(const SynthSpec& spec, std::size_t n, std::uint64_t seed,
                                                std::size_t first_index = 0) {
  if (n < 1) throw InvalidArgument("synth: n must be at least 1");
  spec.validate();
  std::vector<SynthUtterance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_utterance(spec, first_index + i, seed));
  return out;
}

// Writes <dir>/wav/<id>.wav and returns the manifest rows (audio kept in memory).
inline Corpus write_synth_corpus(const std::filesystem::path& dir, const SynthSpec& spec,
                                 const std::vector<SynthUtterance>& utts) {
  std::filesystem::create_directories(dir / "wav");
  Corpus out;
  for (const auto& s : utts) {
    Utterance u;
    u.id = s.id;
    u.audio_path = "wav/" + s.id + ".wav";
    u.src_lang = spec.src_lang;
    u.tgt_lang = spec.tgt_lang;
    u.src_text = s.transcript;
    u.tgt_text = s.translation;
    u.base_dir = dir;
    audio::save_wav(u.resolved_audio().string(), s.audio);
    u.audio = audio::parse_wav(audio::encode_wav(s.audio));
    out.push_back(std::move(u));
  }
  return out;
}

// Decoder-free baseline: per tone segment, the candidate frequency with the
// largest Goertzel power wins.
inline std::vector<int> classify_tones(const SynthSpec& spec, const audio::Waveform& w) {
  std::vector<int> out;
  for (std::size_t start = 0; start + spec.tone_samples <= w.size(); start += spec.tone_samples) {
    int best = 0;
    double best_p = -1.0;
    for (int a = 0; a < spec.alphabet; ++a) {
      const double coeff = 2.0 * std::cos(2.0 * M_PI * spec.tone_hz(a) / audio::kSampleRate);
      double s1 = 0, s2 = 0;
      for (std::size_t n = 0; n < spec.tone_samples; ++n) {
        const double s0 = w.samples[start + n] + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
      }
      const double p = s1 * s1 + s2 * s2 - coeff * s1 * s2;
      if (p > best_p) {
        best_p = p;
        best = a;
      }
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace sslst::corpus
