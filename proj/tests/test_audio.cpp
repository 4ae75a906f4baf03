#include <catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <filesystem>
#include <random>

#include "sslst/audio/features.hpp"
#include "sslst/audio/specaugment.hpp"
#include "sslst/audio/wav.hpp"

using namespace sslst;
using namespace sslst::audio;

namespace {

Waveform noise(std::size_t n, Rng& rng, double amp = 0.3) {
  Waveform w;
  w.samples.resize(n);
  for (auto& s : w.samples) s = amp * rng.uniform(-1.0, 1.0);
  return w;
}

std::string patch_u16(std::string bytes, std::size_t offset, std::uint16_t v) {
  bytes[offset] = static_cast<char>(v & 0xff);
  bytes[offset + 1] = static_cast<char>(v >> 8);
  return bytes;
}

// Direct-definition reference: naive DFT, explicit triangles, natural log.
std::vector<double> reference_logmel_frame(const std::vector<double>& x, std::size_t start) {
  const double pi = std::acos(-1.0);
  std::vector<double> power(257);
  for (std::size_t k = 0; k <= 256; ++k) {
    std::complex<double> acc = 0;
    for (std::size_t n = 0; n < 400; ++n) {
      const double w = 0.5 - 0.5 * std::cos(2 * pi * n / 399.0);
      acc += x[start + n] * w * std::polar(1.0, -2 * pi * double(k) * double(n) / 512.0);
    }
    power[k] = std::norm(acc);
  }
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  std::vector<double> out(80);
  for (std::size_t m = 0; m < 80; ++m) {
    const double l = hz(mel(8000.0) * m / 81.0), c = hz(mel(8000.0) * (m + 1) / 81.0),
                 r = hz(mel(8000.0) * (m + 2) / 81.0);
    double e = 0;
    for (std::size_t k = 0; k <= 256; ++k) {
      const double f = k * 16000.0 / 512.0;
      if (f > l && f <= c) e += power[k] * (f - l) / (c - l);
      if (f > c && f < r) e += power[k] * (r - f) / (r - c);
    }
    out[m] = std::log(std::max(e, 1e-10));
  }
  return out;
}

}  // namespace

TEST_CASE("wav: read and scaling", "[audio]") {
  Waveform zeros;
  zeros.samples.assign(16000, 0.0);
  auto w = parse_wav(encode_wav(zeros));
  REQUIRE(w.size() == 16000);
  for (double s : w.samples) REQUIRE(s == 0.0);

  Waveform extremes;
  extremes.samples = {-1.0, 32767.0 / 32768.0, 0.5};
  auto e = parse_wav(encode_wav(extremes));
  CHECK(e.samples == std::vector<double>{-1.0, 32767.0 / 32768.0, 0.5});

  auto path = std::filesystem::temp_directory_path() / "sslst_test.wav";
  save_wav(path.string(), extremes);
  CHECK(load_wav(path.string()).samples == e.samples);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_wav(path.string()), IoError);
}

TEST_CASE("wav: distinct errors for unsupported inputs", "[audio]") {
  Waveform w;
  w.samples.assign(10, 0.1);
  const std::string good = encode_wav(w);
  CHECK_THROWS_AS(parse_wav(encode_wav(w, 2)), WavChannelError);
  std::string rate = good;
  rate[24] = static_cast<char>(0x40);  // 8000 Hz
  rate[25] = static_cast<char>(0x1f);
  CHECK_THROWS_AS(parse_wav(rate), WavRateError);
  CHECK_THROWS_AS(parse_wav(patch_u16(good, 34, 8)), WavEncodingError);
  CHECK_THROWS_AS(parse_wav(patch_u16(good, 20, 3)), WavEncodingError);
  CHECK_THROWS_AS(parse_wav("RIFX0000WAVE"), WavFormatError);
  CHECK_THROWS_AS(parse_wav(good.substr(0, 30)), WavFormatError);
}

TEST_CASE("logmel: shape and floor", "[audio]") {
  Waveform w;
  w.samples.assign(16000, 0.0);
  auto f = logmel<double>(w);
  REQUIRE(f.frames.shape == Shape{98, 80});
  for (double v : f.frames.data) REQUIRE(v == std::log(1e-10));
  w.samples.resize(399);
  CHECK_THROWS_AS(logmel(w), InvalidArgument);
}

TEST_CASE("logmel: framing formula on random lengths", "[audio][property]") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(400, 6000));
    auto f = logmel(noise(n, rng));
    REQUIRE(f.num_frames() == (n - 400) / 160 + 1);
    REQUIRE(f.dim() == 80);
    REQUIRE(f.frames.all_finite());
  }
}

TEST_CASE("logmel: matches direct-definition reference", "[audio]") {
  Rng rng(2);
  auto w = noise(1200, rng);
  auto f = logmel<double>(w);
  for (std::size_t t = 0; t < f.num_frames(); ++t) {
    auto ref = reference_logmel_frame(w.samples, t * 160);
    for (std::size_t m = 0; m < 80; ++m) REQUIRE(std::abs(f.frames.data[t * 80 + m] - ref[m]) < 1e-9);
  }
}

TEST_CASE("logmel: delay by one hop shifts frames", "[audio]") {
  Rng rng(3);
  auto w = noise(4000, rng);
  Waveform d;
  d.samples.assign(160, 0.0);
  d.samples.insert(d.samples.end(), w.samples.begin(), w.samples.end());
  auto a = logmel<double>(w), b = logmel<double>(d);
  REQUIRE(b.num_frames() == a.num_frames() + 1);
  for (std::size_t t = 0; t < a.num_frames(); ++t)
    for (std::size_t m = 0; m < 80; ++m) REQUIRE(b.frames.data[(t + 1) * 80 + m] == a.frames.data[t * 80 + m]);
}

TEST_CASE("logmel: amplitude scaling adds 2 ln c", "[audio][property]") {
  Rng rng(4);
  for (double c : {2.0, 0.5, 0.37, 3.1}) {
    auto w = noise(3000, rng, 0.2);
    Waveform s = w;
    for (auto& x : s.samples) x *= c;
    auto a = logmel<double>(w), b = logmel<double>(s);
    std::size_t checked = 0;
    for (std::size_t i = 0; i < a.frames.size(); ++i) {
      if (a.frames.data[i] <= std::log(1e-10) + 1.0 || b.frames.data[i] <= std::log(1e-10) + 1.0) continue;
      REQUIRE(std::abs(b.frames.data[i] - a.frames.data[i] - 2 * std::log(c)) < 1e-9);
      ++checked;
    }
    REQUIRE(checked > 100);
  }
}

TEST_CASE("logmel: pure", "[audio]") {
  Rng rng(5);
  auto w = noise(5000, rng);
  REQUIRE(bitwise_equal(logmel(w).frames, logmel(w).frames));
}

TEST_CASE("feature cache round trip", "[audio]") {
  Rng rng(6);
  auto f = logmel(noise(2000, rng));
  auto path = std::filesystem::temp_directory_path() / "sslst_test.feat";
  save_features(path.string(), f.frames);
  auto g = load_features(path.string());
  REQUIRE(bitwise_equal(f.frames, g));
  std::filesystem::remove(path);
}

TEST_CASE("specaugment: scaled frequency width", "[audio]") {
  AugmentPolicy p;
  CHECK(p.scaled_freq_width(80) == 27);
  CHECK(p.scaled_freq_width(512) == 173);
}

TEST_CASE("specaugment: identity policy", "[audio]") {
  Rng rng(7);
  Tensor<float> f({50, 80});
  for (auto& v : f.data) v = static_cast<float>(rng.normal());
  AugmentPolicy p;
  p.time_masks = p.freq_masks = 0;
  REQUIRE(bitwise_equal(specaugment(f, p, Rng(42)), f));
}

TEST_CASE("specaugment: seed 42 matches reference sampler transcript", "[audio]") {
  Tensor<double> f({50, 80});
  for (std::size_t i = 0; i < f.size(); ++i) f.data[i] = 1.0 + static_cast<double>(i);
  AugmentPolicy p;
  auto out = specaugment(f, p, Rng(42));

  // Replay the documented draws straight from the raw mt19937_64 stream.
  std::mt19937_64 eng(42);
  auto uint_draw = [&](long lo, long hi) {
    const double u = static_cast<double>(eng() >> 11) * 0x1.0p-53;
    return static_cast<std::size_t>(lo + static_cast<long>(std::floor(u * static_cast<double>(hi - lo + 1))));
  };
  std::size_t tw[2], ts[2], fw[2], fs[2];
  for (auto& w : tw) w = uint_draw(0, 50);
  for (int i = 0; i < 2; ++i) ts[i] = uint_draw(0, static_cast<long>(50 - tw[i]));
  for (auto& w : fw) w = uint_draw(0, 27);
  for (int i = 0; i < 2; ++i) fs[i] = uint_draw(0, static_cast<long>(80 - fw[i]));

  Rng r(42);
  auto masks = sample_masks(50, 80, p, r);
  for (int i = 0; i < 2; ++i) {
    CHECK(masks.time[i] == MaskRect{ts[i], tw[i]});
    CHECK(masks.freq[i] == MaskRect{fs[i], fw[i]});
  }
  for (std::size_t t = 0; t < 50; ++t)
    for (std::size_t d = 0; d < 80; ++d) {
      bool masked = false;
      for (int i = 0; i < 2; ++i)
        masked = masked || (t >= ts[i] && t < ts[i] + tw[i]) || (d >= fs[i] && d < fs[i] + fw[i]);
      REQUIRE(out.data[t * 80 + d] == (masked ? 0.0 : f.data[t * 80 + d]));
    }
}

TEST_CASE("specaugment: cells outside masks untouched, bounded zero rows", "[audio][property]") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = static_cast<std::size_t>(rng.uniform_int(1, 300));
    const std::size_t D = static_cast<std::size_t>(rng.uniform_int(1, 120));
    Tensor<float> f({T, D});
    for (auto& v : f.data) v = static_cast<float>(1.0 + rng.uniform01());
    AugmentPolicy p;
    const std::uint64_t seed = rng.next();
    auto out = specaugment(f, p, Rng(seed));
    REQUIRE(bitwise_equal(out, specaugment(f, p, Rng(seed))));
    Rng r(seed);
    auto m = sample_masks(T, D, p, r);
    std::size_t zero_rows = 0;
    for (std::size_t t = 0; t < T; ++t) {
      bool all_zero = true;
      for (std::size_t d = 0; d < D; ++d) {
        bool in = false;
        for (const auto& rc : m.time) in = in || (t >= rc.start && t < rc.start + rc.width);
        for (const auto& rc : m.freq) in = in || (d >= rc.start && d < rc.start + rc.width);
        const float v = out.data[t * D + d];
        if (!in) REQUIRE(v == f.data[t * D + d]);
        all_zero = all_zero && v == 0.0f;
      }
      zero_rows += all_zero;
    }
    if (D > 2 * p.scaled_freq_width(D)) REQUIRE(zero_rows <= p.time_masks * p.time_width);
  }
}
