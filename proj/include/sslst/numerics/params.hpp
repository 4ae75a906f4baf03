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

#include <map>
#include <string>
#include <vector>

#include "sslst/numerics/tensor.hpp"

namespace sslst {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
};

// Named parameter tensors of one model. Names are dotted paths; the leading
// component is the namespace used by transfer ("enc.", "dec.", "proj.", ...).
// Iteration order is lexicographic, which fixes checkpoint and optimizer order.
template <typename T>
class ParamSet {
 public:
  Parameter<T>& add(const std::string& name, Shape shape) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) throw InvalidArgument("duplicate parameter name '" + name + "'");
    it->second.name = name;
    it->second.value = Tensor<T>(shape);
    it->second.grad = Tensor<T>(std::move(shape));
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Parameter<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("no parameter named '" + name + "'");
    return it->second;
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("no parameter named '" + name + "'");
    return it->second;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, _] : params_) out.push_back(k);
    return out;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.grad.fill(T(0));
  }

  TensorMap<T> values() const {
    TensorMap<T> out;
    for (const auto& [k, p] : params_) out.emplace(k, p.value);
    return out;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.params_.size() != b.params_.size()) return false;
    for (const auto& [k, p] : a.params_) {
      auto it = b.params_.find(k);
      if (it == b.params_.end() || !bitwise_equal(p.value, it->second.value)) return false;
    }
    return true;
  }

 private:
  std::map<std::string, Parameter<T>> params_;
};

namespace init {

template <typename T>
void normal(Tensor<T>& t, Rng& rng, double stddev) {
  for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, stddev));
}

template <typename T>
void uniform(Tensor<T>& t, Rng& rng, double bound) {
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
}

// Glorot-uniform for a [fan_in, fan_out] weight.
template <typename T>
void glorot(Tensor<T>& t, Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  uniform(t, rng, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

template <typename T>
void constant(Tensor<T>& t, double v) {
  t.fill(static_cast<T>(v));
}

}  // namespace init

}  // namespace sslst
