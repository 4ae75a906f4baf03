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
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sslst/common.hpp"

namespace sslst::audio {

inline constexpr int kSampleRate = 16000;

SSLST_DEFINE_ERROR(WavError, Error, "wav");
SSLST_DEFINE_ERROR(WavFormatError, WavError, "wav-format");
SSLST_DEFINE_ERROR(WavEncodingError, WavError, "wav-encoding");
SSLST_DEFINE_ERROR(WavChannelError, WavError, "wav-channels");
SSLST_DEFINE_ERROR(WavRateError, WavError, "wav-rate");

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t read_u16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

inline Waveform parse_wav(const std::string& bytes, const std::string& where = "<memory>") {
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(b, "RIFF", 4) != 0 || std::memcmp(b + 8, "WAVE", 4) != 0)
    throw WavFormatError(where + ": not a RIFF/WAVE file");
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = detail::read_u32(b + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw WavFormatError(where + ": truncated chunk");
    if (std::memcmp(b + pos, "fmt ", 4) == 0) {
      if (len < 16) throw WavFormatError(where + ": short fmt chunk");
      format = detail::read_u16(b + body);
      channels = detail::read_u16(b + body + 2);
      rate = detail::read_u32(b + body + 4);
      bits = detail::read_u16(b + body + 14);
      have_fmt = true;
    } else if (std::memcmp(b + pos, "data", 4) == 0) {
      if (!have_fmt) throw WavFormatError(where + ": data chunk before fmt chunk");
      if (format != 1 || bits != 16)
        throw WavEncodingError(where + ": expected 16-bit PCM, got format " + std::to_string(format) + " with " +
                               std::to_string(bits) + " bits");
      if (channels != 1) throw WavChannelError(where + ": expected mono, got " + std::to_string(channels) + " channels");
      if (rate != kSampleRate)
        throw WavRateError(where + ": expected 16000 Hz, got " + std::to_string(rate) + " Hz");
      if (len < 2) throw WavFormatError(where + ": no samples");
      Waveform w;
      w.samples.resize(len / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = static_cast<std::int16_t>(detail::read_u16(b + body + 2 * i)) / 32768.0;
      return w;
    }
    pos = body + len + (len & 1);
  }
  throw WavFormatError(where + (have_fmt ? ": missing data chunk" : ": missing fmt chunk"));
}

inline Waveform load_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_wav(bytes, path);
}

// Samples are clipped to [-1, 1) and rounded to the nearest PCM16 value.
inline std::string encode_wav(const Waveform& w, std::uint16_t channels = 1) {
  std::string out = "RIFF";
  const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
  detail::put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, channels);
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2 * channels);
  detail::put_u16(out, static_cast<std::uint16_t>(2 * channels));
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, data_len);
  for (double s : w.samples) {
    double v = std::round(s * 32768.0);
    v = std::min(32767.0, std::max(-32768.0, v));
    detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
  return out;
}

inline void save_wav(const std::string& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write '" + path + "'");
  const std::string bytes = encode_wav(w);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace sslst::audio
