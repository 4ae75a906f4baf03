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
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sslst/numerics/params.hpp"

namespace sslst::transfer {

SSLST_DEFINE_ERROR(CheckpointError, Error, "checkpoint");
SSLST_DEFINE_ERROR(CheckpointMagicError, CheckpointError, "checkpoint-magic");
SSLST_DEFINE_ERROR(CheckpointTruncatedError, CheckpointError, "checkpoint-truncated");
SSLST_DEFINE_ERROR(CheckpointDtypeError, CheckpointError, "checkpoint-dtype");
SSLST_DEFINE_ERROR(CheckpointMismatchError, CheckpointError, "checkpoint-mismatch");

inline constexpr char kMagic[] = "SSLST1";
inline constexpr std::size_t kMagicSize = 6;

enum class Dtype : std::uint8_t { F32 = 1, F64 = 2 };

template <typename T>
constexpr Dtype dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Dtype::F32 : Dtype::F64;
}

inline std::size_t dtype_size(Dtype d) { return d == Dtype::F32 ? 4 : 8; }

struct CheckpointMeta {
  nlohmann::json arch = nlohmann::json::object();  // architecture descriptor
  std::string kind;                                // "seq2seq", "cpc", "mlm"
  std::string vocab_fingerprint;                   // empty for models without a projection
  long step = 0;
  long order = 0;  // creation order; larger is newer

  nlohmann::json to_json() const {
    return {{"arch", arch}, {"kind", kind}, {"vocab_fingerprint", vocab_fingerprint}, {"step", step}, {"order", order}};
  }
};

// A stored tensor keeps its on-disk dtype; values are held in double, which
// represents every f32 exactly.
struct StoredTensor {
  Dtype dtype = Dtype::F32;
  Tensor<double> value;
};

struct Checkpoint {
  CheckpointMeta meta;
  std::map<std::string, StoredTensor> tensors;

  template <typename T>
  static Checkpoint from_params(const ParamSet<T>& params, CheckpointMeta meta) {
    Checkpoint c;
    c.meta = std::move(meta);
    for (const auto& [name, p] : params) {
      Tensor<double> v(p.value.shape);
      std::copy(p.value.data.begin(), p.value.data.end(), v.data.begin());
      c.tensors.emplace(name, StoredTensor{dtype_of<T>(), std::move(v)});
    }
    return c;
  }

  // Copy every tensor into `params`, which must hold exactly the same names
  // and shapes.
  template <typename T>
  void load_into(ParamSet<T>& params) const {
    for (const auto& [name, p] : params)
      if (!tensors.count(name)) throw CheckpointMismatchError("checkpoint has no tensor '" + name + "'");
    for (const auto& [name, st] : tensors) {
      if (!params.contains(name)) throw CheckpointMismatchError("model has no parameter '" + name + "'");
      auto& p = params.at(name);
      if (p.value.shape != st.value.shape)
        throw CheckpointMismatchError("tensor '" + name + "' has shape " + shape_str(st.value.shape) + ", model expects " +
                                      shape_str(p.value.shape));
      for (std::size_t i = 0; i < st.value.size(); ++i) p.value.data[i] = static_cast<T>(st.value.data[i]);
    }
  }

  const Tensor<double>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointMismatchError("checkpoint has no tensor '" + name + "'");
    return it->second.value;
  }
};

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string where) : b_(bytes), where_(std::move(where)) {}

  template <typename U>
  U get(const std::string& what) {
    need(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }

  std::string bytes(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n, const std::string& what) {
    if (b_.size() - pos_ < n)
      throw CheckpointTruncatedError(where_ + ": truncated while reading " + what + " (need " + std::to_string(n) +
                                     " bytes at offset " + std::to_string(pos_) + ", " +
                                     std::to_string(b_.size() - pos_) + " left)");
  }

  const std::string& b_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Layout (all integers little-endian):
//   "SSLST1" | u32 meta_len | meta JSON (UTF-8) | u32 tensor_count |
//   per tensor: u32 name_len | name | u8 dtype | u8 rank | u64 extents[rank] | payload
inline std::string encode_checkpoint(const Checkpoint& c) {
  std::string out(kMagic, kMagicSize);
  const std::string meta = c.meta.to_json().dump();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, st] : c.tensors) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(st.dtype));
    out.push_back(static_cast<char>(st.value.rank()));
    for (std::size_t e : st.value.shape) detail::put_le<std::uint64_t>(out, e);
    for (double v : st.value.data) {
      if (st.dtype == Dtype::F32) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_le(out, bits);
      } else {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        detail::put_le(out, bits);
      }
    }
  }
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& where = "checkpoint") {
  if (bytes.size() < kMagicSize || bytes.compare(0, kMagicSize, kMagic) != 0)
    throw CheckpointMagicError(where + ": not a checkpoint (bad magic)");
  detail::Reader r(bytes, where);
  r.bytes(kMagicSize, "magic");
  Checkpoint c;
  const auto meta_len = r.get<std::uint32_t>("metadata length");
  const std::string meta = r.bytes(meta_len, "metadata");
  try {
    const auto j = nlohmann::json::parse(meta);
    c.meta.arch = j.at("arch");
    c.meta.kind = j.at("kind").get<std::string>();
    c.meta.vocab_fingerprint = j.at("vocab_fingerprint").get<std::string>();
    c.meta.step = j.at("step").get<long>();
    c.meta.order = j.at("order").get<long>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + ": malformed metadata: " + e.what());
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.get<std::uint32_t>("name length of tensor #" + std::to_string(k));
    const std::string name = r.bytes(name_len, "name of tensor #" + std::to_string(k));
    const auto tag = r.get<std::uint8_t>("dtype of '" + name + "'");
    if (tag != static_cast<std::uint8_t>(Dtype::F32) && tag != static_cast<std::uint8_t>(Dtype::F64))
      throw CheckpointDtypeError(where + ": tensor '" + name + "' has unknown dtype tag " + std::to_string(tag));
    const auto rank = r.get<std::uint8_t>("rank of '" + name + "'");
    Shape shape;
    for (std::uint8_t i = 0; i < rank; ++i) shape.push_back(r.get<std::uint64_t>("extents of '" + name + "'"));
    StoredTensor st{static_cast<Dtype>(tag), Tensor<double>(shape)};
    const std::size_t n = st.value.size(), es = dtype_size(st.dtype);
    const std::string payload = r.bytes(n * es, "payload of '" + name + "'");
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits = 0;
      for (std::size_t b = 0; b < es; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(payload[i * es + b])) << (8 * b);
      if (st.dtype == Dtype::F32) {
        const auto b32 = static_cast<std::uint32_t>(bits);
        float f;
        std::memcpy(&f, &b32, 4);
        st.value.data[i] = f;
      } else {
        std::memcpy(&st.value.data[i], &bits, 8);
      }
    }
    if (!c.tensors.emplace(name, std::move(st)).second)
      throw CheckpointError(where + ": duplicate tensor name '" + name + "'");
  }
  if (!r.done()) throw CheckpointError(where + ": trailing bytes after the last tensor");
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint '" + path + "'");
  const std::string bytes = encode_checkpoint(c);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("short write to '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_checkpoint(ss.str(), path);
}

// Mean of the `k` checkpoints with the greatest creation order. The result
// keeps the newest metadata with step = max step.
inline Checkpoint average_checkpoints(std::vector<Checkpoint> cks, std::size_t k = 5) {
  if (cks.empty()) throw InvalidArgument("average_checkpoints: no checkpoints");
  if (k == 0) throw InvalidArgument("average_checkpoints: k must be positive");
  std::stable_sort(cks.begin(), cks.end(), [](const Checkpoint& a, const Checkpoint& b) { return a.meta.order > b.meta.order; });
  if (cks.size() > k) cks.resize(k);
  const Checkpoint& ref = cks.front();
  for (const auto& c : cks) {
    if (c.meta.arch != ref.meta.arch || c.meta.kind != ref.meta.kind)
      throw CheckpointMismatchError("average_checkpoints: architecture differs between checkpoints");
    if (c.tensors.size() != ref.tensors.size())
      throw CheckpointMismatchError("average_checkpoints: tensor sets differ");
    for (const auto& [name, st] : ref.tensors) {
      auto it = c.tensors.find(name);
      if (it == c.tensors.end()) throw CheckpointMismatchError("average_checkpoints: tensor '" + name + "' missing");
      if (it->second.value.shape != st.value.shape)
        throw CheckpointMismatchError("average_checkpoints: tensor '" + name + "' changes shape");
    }
  }
  Checkpoint out = ref;
  for (auto& [name, st] : out.tensors) {
    for (std::size_t i = 0; i < st.value.size(); ++i) {
      double s = 0;
      for (const auto& c : cks) s += c.tensors.at(name).value.data[i];
      double mean = s / static_cast<double>(cks.size());
      if (st.dtype == Dtype::F32) mean = static_cast<float>(mean);
      st.value.data[i] = mean;
    }
  }
  for (const auto& c : cks) out.meta.step = std::max(out.meta.step, c.meta.step);
  return out;
}

inline Checkpoint average_checkpoint_files(const std::vector<std::string>& paths, std::size_t k = 5) {
  std::vector<Checkpoint> cks;
  for (const auto& p : paths) cks.push_back(load_checkpoint(p));
  return average_checkpoints(std::move(cks), k);
}

// Hash of every tensor's name, shape and bytes; used to prove that tensors
// outside a transfer scope are untouched.
template <typename T>
std::map<std::string, std::uint64_t> tensor_hashes(const ParamSet<T>& params) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& [name, p] : params) {
    std::uint64_t h = fnv1a(name.data(), name.size());
    for (std::size_t e : p.value.shape) h = fnv1a(&e, sizeof e, h);
    out[name] = fnv1a(p.value.data.data(), p.value.data.size() * sizeof(T), h);
  }
  return out;
}

}  // namespace sslst::transfer
