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

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sslst/audio/wav.hpp"
#include "sslst/text/normalize.hpp"

namespace sslst::corpus {

SSLST_DEFINE_ERROR(ManifestError, Error, "manifest");
SSLST_DEFINE_ERROR(ManifestColumnError, ManifestError, "manifest-column");
SSLST_DEFINE_ERROR(ManifestDuplicateError, ManifestError, "manifest-duplicate");
SSLST_DEFINE_ERROR(ManifestAudioError, ManifestError, "manifest-audio");

struct Utterance {
  std::string id;
  std::string audio_path;  // as written in the manifest
  std::string src_lang;
  std::string tgt_lang;
  std::string src_text;
  std::string tgt_text;  // empty for ASR-only rows
  std::filesystem::path base_dir;
  audio::Waveform audio;  // filled on demand

  std::filesystem::path resolved_audio() const {
    std::filesystem::path p(audio_path);
    return p.is_absolute() ? p : base_dir / p;
  }
  const audio::Waveform& waveform() {
    if (audio.samples.empty()) audio = audio::load_wav(resolved_audio().string());
    return audio;
  }
  bool operator==(const Utterance& o) const {
    return id == o.id && audio_path == o.audio_path && src_lang == o.src_lang && tgt_lang == o.tgt_lang &&
           src_text == o.src_text && tgt_text == o.tgt_text;
  }
};

using Corpus = std::vector<Utterance>;

inline const std::vector<std::string>& manifest_columns() {
  static const std::vector<std::string> c{"id", "audio_path", "src_lang", "tgt_lang", "src_text", "tgt_text"};
  return c;
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace detail

// Source text is normalized as a transcript (punctuation removed), target
// text as a translation. Audio files must exist; they are decoded lazily.
inline Corpus parse_manifest(std::istream& is, const std::filesystem::path& base_dir, const std::string& where) {
  std::string line;
  if (!std::getline(is, line)) throw ManifestColumnError(where + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_tabs(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  std::string missing;
  for (const auto& c : manifest_columns())
    if (!col.count(c)) missing += (missing.empty() ? "" : ", ") + c;
  if (!missing.empty()) throw ManifestColumnError(where + ": missing column(s) " + missing);

  Corpus out;
  std::set<std::string> seen;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_tabs(line);
    if (f.size() != header.size())
      throw ManifestColumnError(where + ": row " + std::to_string(row) + " has " + std::to_string(f.size()) +
                                " fields, expected " + std::to_string(header.size()));
    Utterance u;
    u.id = f[col["id"]];
    if (!seen.insert(u.id).second)
      throw ManifestDuplicateError(where + ": row " + std::to_string(row) + ": duplicate id '" + u.id + "'");
    u.audio_path = f[col["audio_path"]];
    u.src_lang = f[col["src_lang"]];
    u.tgt_lang = f[col["tgt_lang"]];
    u.src_text = text::normalize(f[col["src_text"]], true);
    u.tgt_text = text::normalize(f[col["tgt_text"]], false);
    u.base_dir = base_dir;
    if (!std::filesystem::exists(u.resolved_audio()))
      throw ManifestAudioError(where + ": row " + std::to_string(row) + ": audio file '" + u.audio_path +
                               "' not found");
    out.push_back(std::move(u));
  }
  return out;
}

inline Corpus load_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open manifest '" + path + "'");
  return parse_manifest(is, std::filesystem::path(path).parent_path(), path);
}

inline void write_manifest(const std::string& path, const Corpus& corpus) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write manifest '" + path + "'");
  os << text::join(manifest_columns(), "\t") << '\n';
  for (const auto& u : corpus) {
    for (const std::string* s : {&u.id, &u.audio_path, &u.src_lang, &u.tgt_lang, &u.src_text, &u.tgt_text})
      if (s->find_first_of("\t\n") != std::string::npos)
        throw ManifestError("utterance '" + u.id + "': fields may not contain tabs or newlines");
    os << u.id << '\t' << u.audio_path << '\t' << u.src_lang << '\t' << u.tgt_lang << '\t' << u.src_text << '\t'
       << u.tgt_text << '\n';
  }
}

struct CorpusStats {
  std::size_t utterances = 0;
  double hours = 0.0;
  std::map<std::string, std::size_t> char_histogram;  // over source text
};

inline CorpusStats corpus_stats(Corpus& corpus) {
  CorpusStats st;
  std::size_t samples = 0;
  for (auto& u : corpus) {
    ++st.utterances;
    samples += u.waveform().size();
    for (const auto& c : text::utf8_chars(u.src_text)) ++st.char_histogram[c];
  }
  st.hours = static_cast<double>(samples) / audio::kSampleRate / 3600.0;
  return st;
}

}  // namespace sslst::corpus
