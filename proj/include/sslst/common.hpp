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
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sslst {

// Base of every error thrown by the toolkit. `category()` is what the CLI
// prints before the message and maps to an exit status.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* category() const noexcept { return "error"; }
};

#define SSLST_DEFINE_ERROR(Name, Base, cat)                            \
  class Name : public Base {                                           \
   public:                                                             \
    explicit Name(const std::string& what) : Base(what) {}             \
    const char* category() const noexcept override { return cat; }     \
  }

SSLST_DEFINE_ERROR(InvalidArgument, Error, "invalid-argument");
SSLST_DEFINE_ERROR(IoError, Error, "io");

// splitmix64 finalizer; used to derive independent per-item seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seeded generator with fully documented draw rules so that samplers built
// on it can be replayed from the raw mt19937_64 stream:
//   uniform01()        = (next() >> 11) * 2^-53
//   uniform_int(lo,hi) = lo + floor(uniform01() * (hi - lo + 1))
//   normal()           = Box-Muller on two uniform01() draws (u1 first),
//                        sqrt(-2 ln(1 - u1)) * cos(2 pi u2); no caching.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  long uniform_int(long lo, long hi) {
    if (hi < lo) throw InvalidArgument("uniform_int: empty range");
    const double span = static_cast<double>(hi - lo + 1);
    long v = lo + static_cast<long>(std::floor(uniform01() * span));
    return v > hi ? hi : v;
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  template <typename It>
  void shuffle(It first, It last) {
    // Fisher-Yates from the back, j = uniform_int(0, i).
    const long n = static_cast<long>(last - first);
    for (long i = n - 1; i > 0; --i) {
      long j = uniform_int(0, i);
      std::swap(first[i], first[j]);
    }
  }

  Rng fork(std::uint64_t salt) { return Rng(mix_seed(engine_() ^ mix_seed(salt))); }

 private:
  std::mt19937_64 engine_;
};

// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
  return s;
}

}  // namespace sslst
