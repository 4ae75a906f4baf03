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
#include <map>
#include <string>

#include "sslst/numerics/params.hpp"

namespace sslst {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct OptimizerState {
  AdamConfig config;
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
  long step = 0;
};

// Bias-corrected Adam update on every trainable parameter, using the grad
// buffers held by `params`. Moments are created lazily with zeros.
template <typename T>
void adam_step(ParamSet<T>& params, OptimizerState<T>& state, double lr) {
  for (auto& [name, p] : params) {
    if (p.grad.shape != p.value.shape)
      throw InvalidArgument("adam_step: grad shape " + shape_str(p.grad.shape) +
                            " != param shape " + shape_str(p.value.shape) + " for '" + name + "'");
    auto it = state.m.find(name);
    if (it != state.m.end() && it->second.shape != p.value.shape)
      throw InvalidArgument("adam_step: moment shape mismatch for '" + name + "'");
  }
  state.step += 1;
  const double b1 = state.config.beta1, b2 = state.config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    auto& m = state.m.try_emplace(name, Tensor<T>(p.value.shape)).first->second;
    auto& v = state.v.try_emplace(name, Tensor<T>(p.value.shape)).first->second;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data[i];
      const double mi = b1 * m.data[i] + (1.0 - b1) * g;
      const double vi = b2 * v.data[i] + (1.0 - b2) * g * g;
      m.data[i] = static_cast<T>(mi);
      v.data[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + state.config.eps);
      p.value.data[i] = static_cast<T>(p.value.data[i] - update);
    }
  }
}

template <typename T>
double global_grad_norm(const ParamSet<T>& params) {
  double s = 0;
  for (const auto& [_, p] : params)
    if (p.trainable)
      for (T g : p.grad.data) s += static_cast<double>(g) * g;
  return std::sqrt(s);
}

// Rescale all grads so that their global L2 norm is at most `max_norm`.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParamSet<T>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& [_, p] : params)
      for (auto& g : p.grad.data) g *= s;
  }
  return norm;
}

enum class ScheduleKind { Fixed, PolynomialDecay };

// Fixed: `peak` at every step. Polynomial decay (power 1): linear warmup
// from 0 to `peak` over `warmup` steps, then linear decay to `end` at
// `total` steps, constant afterwards.
class Schedule {
 public:
  static Schedule fixed(double lr) { return Schedule(ScheduleKind::Fixed, lr, 0, 0, lr); }

  static Schedule polynomial(double peak, long warmup, long total, double end) {
    if (warmup < 0 || total < warmup)
      throw InvalidArgument("polynomial schedule: total steps (" + std::to_string(total) +
                            ") must be >= warmup steps (" + std::to_string(warmup) + ")");
    return Schedule(ScheduleKind::PolynomialDecay, peak, warmup, total, end);
  }

  ScheduleKind kind() const { return kind_; }
  double peak() const { return peak_; }
  long warmup() const { return warmup_; }
  long total() const { return total_; }
  double end() const { return end_; }

  double lr(long step) const {
    if (step < 0) throw InvalidArgument("schedule step must be non-negative");
    if (kind_ == ScheduleKind::Fixed) return peak_;
    if (step < warmup_) return peak_ * static_cast<double>(step) / static_cast<double>(warmup_);
    if (step >= total_) return end_;
    const double frac = static_cast<double>(step - warmup_) / static_cast<double>(total_ - warmup_);
    return peak_ + (end_ - peak_) * frac;
  }

 private:
  Schedule(ScheduleKind k, double peak, long warmup, long total, double end)
      : kind_(k), peak_(peak), warmup_(warmup), total_(total), end_(end) {}

  ScheduleKind kind_;
  double peak_;
  long warmup_;
  long total_;
  double end_;
};

inline double schedule_lr(const Schedule& s, long step) { return s.lr(step); }

// Clip, then take one Adam step at the learning rate of the step being taken
// (1-based). Returns the pre-clip gradient norm.
template <typename T>
double optimizer_update(ParamSet<T>& params, OptimizerState<T>& state, const Schedule& schedule,
                        double clip_norm) {
  const double norm = clip_grad_norm(params, clip_norm);
  adam_step(params, state, schedule.lr(state.step + 1));
  return norm;
}

}  // namespace sslst
