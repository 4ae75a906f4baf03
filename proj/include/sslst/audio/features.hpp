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
#include <complex>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "sslst/audio/wav.hpp"
#include "sslst/numerics/tensor.hpp"

namespace sslst::audio {

enum class FeatureKind { LogMel, CpcContext, VqEmbedding, MlmContext };

inline const char* feature_kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::LogMel: return "fbank";
    case FeatureKind::CpcContext: return "cpc";
    case FeatureKind::VqEmbedding: return "vq";
    case FeatureKind::MlmContext: return "mlm";
  }
  return "?";
}

template <class T>
struct FeatureSequence {
  Tensor<T> frames;  // [T, D]
  double hop_ms = 10.0;
  FeatureKind kind = FeatureKind::LogMel;

  std::size_t num_frames() const { return frames.dim(0); }
  std::size_t dim() const { return frames.dim(1); }
};

struct LogMelConfig {
  std::size_t n_mels = 80;
  std::size_t window = 400;
  std::size_t hop = 160;
  std::size_t n_fft = 512;
  double f_min = 0.0;
  double f_max = 8000.0;
  double floor = 1e-10;
};

inline std::size_t num_frames(std::size_t samples, const LogMelConfig& cfg = {}) {
  return samples < cfg.window ? 0 : (samples - cfg.window) / cfg.hop + 1;
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular filters with centers equally spaced on the mel scale; returns
// an [n_fft/2+1, n_mels] weight matrix.
inline std::vector<double> mel_filterbank(const LogMelConfig& cfg) {
  const std::size_t bins = cfg.n_fft / 2 + 1;
  const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.f_max);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  std::vector<double> w(bins * cfg.n_mels, 0.0);
  for (std::size_t k = 0; k < bins; ++k) {
    const double f = static_cast<double>(k) * kSampleRate / static_cast<double>(cfg.n_fft);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      const double l = edges[m], c = edges[m + 1], r = edges[m + 2];
      double v = 0.0;
      if (f > l && f <= c)
        v = (f - l) / (c - l);
      else if (f > c && f < r)
        v = (r - f) / (r - c);
      w[k * cfg.n_mels + m] = v;
    }
  }
  return w;
}

template <class T = float>
FeatureSequence<T> logmel(const Waveform& wav, const LogMelConfig& cfg = {}) {
  if (wav.sample_rate != kSampleRate) throw WavRateError("logmel expects 16000 Hz audio");
  const std::size_t frames = num_frames(wav.size(), cfg);
  if (frames == 0)
    throw InvalidArgument("waveform of " + std::to_string(wav.size()) + " samples is shorter than one " +
                          std::to_string(cfg.window) + "-sample window");
  static thread_local std::vector<double> cached_fb;
  static thread_local std::size_t cached_key = 0;
  const std::size_t key = cfg.n_mels * 1000003u + cfg.n_fft;
  if (cached_key != key || cached_fb.empty()) {
    cached_fb = mel_filterbank(cfg);
    cached_key = key;
  }
  std::vector<double> hann(cfg.window);
  for (std::size_t n = 0; n < cfg.window; ++n)
    hann[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(n) / static_cast<double>(cfg.window - 1));

  const std::size_t bins = cfg.n_fft / 2 + 1;
  Eigen::FFT<double> fft;
  std::vector<double> buf(cfg.n_fft, 0.0);
  std::vector<std::complex<double>> spec;
  std::vector<double> power(bins);
  FeatureSequence<T> out;
  out.frames = Tensor<T>({frames, cfg.n_mels});
  out.hop_ms = 1000.0 * static_cast<double>(cfg.hop) / kSampleRate;
  for (std::size_t t = 0; t < frames; ++t) {
    const double* x = wav.samples.data() + t * cfg.hop;
    for (std::size_t n = 0; n < cfg.window; ++n) buf[n] = x[n] * hann[n];
    fft.fwd(spec, buf);
    for (std::size_t k = 0; k < bins; ++k) power[k] = std::norm(spec[k]);
    T* row = out.frames.ptr() + t * cfg.n_mels;
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += power[k] * cached_fb[k * cfg.n_mels + m];
      row[m] = static_cast<T>(std::log(std::max(e, cfg.floor)));
    }
  }
  return out;
}

// Feature cache: "SSLF1", u32 D, u32 T, then T*D little-endian f32 values.
template <class T>
void save_features(const std::string& path, const Tensor<T>& frames) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write '" + path + "'");
  std::string hdr = "SSLF1";
  detail::put_u32(hdr, static_cast<std::uint32_t>(frames.dim(1)));
  detail::put_u32(hdr, static_cast<std::uint32_t>(frames.dim(0)));
  os.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  std::vector<float> f(frames.data.begin(), frames.data.end());
  os.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
}

template <class T = float>
Tensor<T> load_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  unsigned char hdr[13];
  if (!is.read(reinterpret_cast<char*>(hdr), 13) || std::memcmp(hdr, "SSLF1", 5) != 0)
    throw IoError("'" + path + "' is not a feature cache");
  const std::size_t D = detail::read_u32(hdr + 5), T_ = detail::read_u32(hdr + 9);
  std::vector<float> f(D * T_);
  if (!is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float))))
    throw IoError("'" + path + "' is truncated");
  return Tensor<T>({T_, D}, std::vector<T>(f.begin(), f.end()));
}

}  // namespace sslst::audio
