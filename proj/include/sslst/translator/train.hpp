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

#include <chrono>
#include <functional>
#include <numeric>
#include <vector>

#include "sslst/audio/specaugment.hpp"
#include "sslst/translator/seq2seq.hpp"

namespace sslst::translator {

// Groups of example indices whose padded size (count x longest) stays within
// `frame_budget`. Indices are sorted by length (ties by index), cut greedily,
// and the resulting batches are shuffled. An example longer than the budget
// forms a batch of its own.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& lengths,
                                                          std::size_t frame_budget, Rng& rng) {
  if (frame_budget == 0) throw InvalidArgument("frame budget must be positive");
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> cur;
  for (std::size_t i : order) {
    if (!cur.empty() && (cur.size() + 1) * lengths[i] > frame_budget) {
      batches.push_back(std::move(cur));
      cur.clear();
    }
    cur.push_back(i);
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  rng.shuffle(batches.begin(), batches.end());
  return batches;
}

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t frame_budget = 8000;
  Schedule schedule = recurrent_schedule();
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  bool augment = true;
  audio::AugmentPolicy policy;
};

struct StepRecord {
  long step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

// One optimizer step on `batch`: SpecAugment on each example's frames (when
// `policy` is given), teacher-forced cross-entropy, clipping and Adam.
// Returns the mean token loss before the update.
template <typename T>
double train_step(Seq2SeqModel<T>& model, Batch<T> batch, const audio::AugmentPolicy* policy,
                  OptimizerState<T>& opt, const Schedule& schedule, double clip_norm, Rng& rng) {
  if (batch.size() == 0) throw InvalidArgument("train_step: empty batch");
  if (policy && batch.features.rank() == 3) {
    const std::size_t tmax = batch.features.dim(1), D = batch.features.dim(2);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const std::size_t len = batch.lengths[b];
      auto first = batch.features.data.begin() + static_cast<long>(b * tmax * D);
      Tensor<T> rows({len, D}, std::vector<T>(first, first + static_cast<long>(len * D)));
      rows = audio::specaugment(rows, *policy, Rng(rng.next()));
      std::copy(rows.data.begin(), rows.data.end(), first);
    }
  }
  auto fail = [&](const std::string& why) {
    std::string ids;
    for (const auto& id : batch.ids) ids += (ids.empty() ? "" : ", ") + id;
    return TrainingError("non-finite " + why + " at step " + std::to_string(opt.step + 1) + " (examples: " + ids + ")");
  };
  Graph<T> g;
  NodeId loss;
  try {
    loss = model.loss(g, batch);
    model.params.zero_grad();
    g.backward(loss);
  } catch (const NonFiniteError& e) {
    throw fail(std::string("value (") + e.what() + ")");
  }
  const double value = g.value(loss).item();
  if (!std::isfinite(value)) throw fail("loss");
  const double norm = optimizer_update(model.params, opt, schedule, clip_norm);
  if (!std::isfinite(norm)) throw fail("gradient");
  return value;
}

using EpochCallback = std::function<bool(std::size_t epoch, double mean_loss)>;
using StepCallback = std::function<void(const StepRecord&)>;

// Epoch loop over `examples`. `on_epoch` runs after every epoch (1-based)
// and may stop training by returning false. Returns the epochs completed.
template <typename T>
std::size_t train(Seq2SeqModel<T>& model, const std::vector<Example<T>>& examples, const TrainConfig& tc,
                  OptimizerState<T>& opt, const EpochCallback& on_epoch = {}, const StepCallback& on_step = {}) {
  if (examples.empty()) throw InvalidArgument("train: no examples");
  Rng rng(tc.seed);
  std::vector<std::size_t> lengths;
  for (const auto& e : examples) lengths.push_back(e.frames());
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    double total = 0;
    auto batches = make_batches(lengths, tc.frame_budget, rng);
    for (const auto& idx : batches) {
      std::vector<const Example<T>*> part;
      for (std::size_t i : idx) part.push_back(&examples[i]);
      const double lr = tc.schedule.lr(opt.step + 1);
      const double l = train_step(model, collate(part), tc.augment ? &tc.policy : nullptr, opt, tc.schedule, tc.clip_norm, rng);
      total += l;
      if (on_step)
        on_step({opt.step, l, lr, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
    }
    if (on_epoch && !on_epoch(epoch, total / static_cast<double>(batches.size()))) return epoch;
  }
  return tc.epochs;
}

}  // namespace sslst::translator
