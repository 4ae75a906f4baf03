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
#include <functional>
#include <string>
#include <vector>

#include "sslst/audio/wav.hpp"
#include "sslst/numerics/graph.hpp"
#include "sslst/numerics/optim.hpp"

namespace sslst::ssl {

struct CpcConfig {
  std::vector<long> kernels{10, 8, 4, 4, 4};
  std::vector<long> strides{5, 4, 2, 2, 2};
  std::size_t channels = 64;
  std::size_t agg_layers = 3;
  long agg_kernel = 3;
  std::size_t steps_ahead = 12;  // K
  std::size_t negatives = 10;    // N

  std::size_t hop() const {
    std::size_t h = 1;
    for (long s : strides) h *= static_cast<std::size_t>(s);
    return h;
  }
  void validate() const {
    if (kernels.empty() || kernels.size() != strides.size()) throw InvalidArgument("cpc: kernels and strides differ in length");
    for (std::size_t i = 0; i < kernels.size(); ++i)
      if (strides[i] < 1 || kernels[i] < strides[i]) throw InvalidArgument("cpc: each kernel must be >= its stride");
    if (channels < 1 || agg_kernel < 1 || steps_ahead < 1) throw InvalidArgument("cpc: empty layer");
  }
};

// Contrastive loss over a batch of latent/context sequences. For each
// sequence b, step k = 1..K and position i < T-k, the head output h_k(c_i)
// is scored against z_{i+k} (label 1) and N negatives (label 0) drawn
// uniformly from the other T-1 frames of the same sequence. Draw order is
// b, then k, then i, then the N negatives. The sum is divided by the number
// of sigmoid terms, so zero logits give exactly ln 2.
template <typename T>
NodeId cpc_loss(Graph<T>& g, NodeId z, NodeId c, NodeId heads_w, NodeId heads_b, std::size_t K, std::size_t N,
                Rng& rng) {
  const Shape zs = g.shape(z);
  const Shape cs = g.shape(c);
  if (zs.size() != 3 || cs.size() != 3 || zs[0] != cs[0] || zs[1] != cs[1])
    throw InvalidArgument("cpc_loss: z " + shape_str(zs) + " and c " + shape_str(cs) + " disagree");
  const std::size_t B = zs[0], Tn = zs[1], Dz = zs[2];
  if (Tn <= K)
    throw InvalidArgument("cpc_loss: " + std::to_string(Tn) + " frames, need more than K=" + std::to_string(K));
  if (g.shape(heads_w) != Shape{cs[2], K * Dz}) throw InvalidArgument("cpc_loss: head shape mismatch");

  NodeId pred = g.reshape(g.affine(c, heads_w, heads_b), {B * Tn * K, Dz});
  std::vector<long> rows, index;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 1; k <= K; ++k)
      for (std::size_t i = 0; i + k < Tn; ++i) {
        rows.push_back(static_cast<long>((b * Tn + i) * K + (k - 1)));
        const long pos = static_cast<long>(i + k);
        index.push_back(static_cast<long>(b * Tn) + pos);
        for (std::size_t j = 0; j < N; ++j) {
          long neg = rng.uniform_int(0, static_cast<long>(Tn) - 2);
          if (neg >= pos) ++neg;
          index.push_back(static_cast<long>(b * Tn) + neg);
        }
      }
  const std::size_t M = rows.size();
  NodeId logits = g.row_dot_gather(g.gather_rows(pred, rows), g.reshape(z, {B * Tn, Dz}), index, 1 + N);
  std::vector<T> labels(M * (1 + N), T(0));
  for (std::size_t m = 0; m < M; ++m) labels[m * (1 + N)] = T(1);
  return g.logistic_loss(logits, labels, static_cast<double>(M * (1 + N)));
}

// wav2vec-style model: strided causal convolutions over raw audio (latents
// z), an optional k-means quantizer, and a causal convolutional aggregator
// (contexts c) with one prediction head per future step. Aggregator blocks
// are residual with layer norm, and the heads start at zero; without both the
// contexts collapse onto the constant predictor on tonal audio.
template <typename T>
class CpcModel {
 public:
  CpcConfig cfg;
  ParamSet<T> params;

  CpcModel() = default;
  explicit CpcModel(CpcConfig c) : cfg(std::move(c)) {
    cfg.validate();
    const std::size_t C = cfg.channels;
    std::size_t cin = 1;
    for (std::size_t l = 0; l < cfg.kernels.size(); ++l) {
      const std::string p = "cpc.enc." + std::to_string(l);
      params.add(p + ".w", {static_cast<std::size_t>(cfg.kernels[l]), cin, C});
      params.add(p + ".b", {C});
      params.add(p + ".ln.g", {C});
      params.add(p + ".ln.b", {C});
      cin = C;
    }
    for (std::size_t l = 0; l < cfg.agg_layers; ++l) {
      const std::string p = "cpc.agg." + std::to_string(l);
      params.add(p + ".w", {static_cast<std::size_t>(cfg.agg_kernel), C, C});
      params.add(p + ".b", {C});
      params.add(p + ".ln.g", {C});
      params.add(p + ".ln.b", {C});
    }
    params.add("cpc.heads.w", {C, cfg.steps_ahead * C});
    params.add("cpc.heads.b", {cfg.steps_ahead * C});
  }

  void init(Rng& rng) {
    for (auto& [name, p] : params) {
      if (name.ends_with(".ln.g"))
        init::constant(p.value, 1.0);
      else if (name.ends_with(".w") && p.value.rank() == 3)
        init::glorot(p.value, rng, p.value.dim(0) * p.value.dim(1), p.value.dim(2));
      else if (name != "vq.codebook")
        init::constant(p.value, 0.0);
    }
  }

  std::size_t latent_dim() const { return cfg.channels; }
  std::size_t context_dim() const { return cfg.channels; }

  std::size_t frames(std::size_t samples) const {
    for (long s : cfg.strides) samples /= static_cast<std::size_t>(s);
    return samples;
  }

  bool quantized() const { return params.contains("vq.codebook"); }
  void set_codebook(const Tensor<T>& cb) {
    if (cb.rank() != 2 || cb.dim(1) != latent_dim()) throw InvalidArgument("codebook dimension mismatch");
    if (!quantized()) params.add("vq.codebook", cb.shape).trainable = false;
    auto& p = params.at("vq.codebook");
    p.value = cb;
    p.grad = Tensor<T>(cb.shape);
  }
  const Tensor<T>& codebook() const { return params.at("vq.codebook").value; }

  struct Nodes {
    NodeId z = Graph<T>::none;   // encoder latents [B, T, C]
    NodeId zq = Graph<T>::none;  // quantized latents (== z without a codebook)
    NodeId c = Graph<T>::none;   // contexts [B, T, C]
    std::size_t batch = 0, frames = 0;
  };

  // wav is [B, L, 1].
  NodeId encode(Graph<T>& g, NodeId wav) {
    const std::size_t L = g.shape(wav).at(1);
    if (frames(L) == 0)
      throw InvalidArgument("waveform of " + std::to_string(L) + " samples yields no encoder frame (hop " +
                            std::to_string(cfg.hop()) + ")");
    NodeId x = wav;
    for (std::size_t l = 0; l < cfg.kernels.size(); ++l) {
      const std::string p = "cpc.enc." + std::to_string(l);
      x = g.conv1d(x, g.param(params.at(p + ".w")), g.param(params.at(p + ".b")), cfg.strides[l],
                   cfg.kernels[l] - cfg.strides[l]);
      x = g.relu(g.layer_norm(x, g.param(params.at(p + ".ln.g")), g.param(params.at(p + ".ln.b"))));
    }
    return x;
  }

  NodeId aggregate(Graph<T>& g, NodeId z) {
    NodeId x = z;
    for (std::size_t l = 0; l < cfg.agg_layers; ++l) {
      const std::string p = "cpc.agg." + std::to_string(l);
      NodeId y = g.conv1d(x, g.param(params.at(p + ".w")), g.param(params.at(p + ".b")), 1, cfg.agg_kernel - 1);
      y = g.relu(g.layer_norm(y, g.param(params.at(p + ".ln.g")), g.param(params.at(p + ".ln.b"))));
      x = g.scale(g.add(x, y), std::sqrt(0.5));
    }
    return x;
  }

  Nodes forward(Graph<T>& g, NodeId wav) {
    Nodes n;
    n.z = encode(g, wav);
    n.batch = g.shape(n.z)[0];
    n.frames = g.shape(n.z)[1];
    n.zq = quantized() ? g.quantize(n.z, codebook()) : n.z;
    n.c = aggregate(g, n.zq);
    return n;
  }

  NodeId loss(Graph<T>& g, const Nodes& n, Rng& rng) {
    return cpc_loss(g, n.zq, n.c, g.param(params.at("cpc.heads.w")), g.param(params.at("cpc.heads.b")),
                    cfg.steps_ahead, cfg.negatives, rng);
  }
};

template <typename T>
Tensor<T> waveform_batch(const std::vector<const std::vector<double>*>& clips, std::size_t length) {
  Tensor<T> t({clips.size(), length, 1});
  for (std::size_t b = 0; b < clips.size(); ++b)
    for (std::size_t i = 0; i < length; ++i) t.data[b * length + i] = static_cast<T>((*clips[b])[i]);
  return t;
}

struct SslTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 8;
  std::size_t crop_samples = 4800;
  Schedule schedule = Schedule::fixed(1e-3);
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

template <typename T>
std::vector<double> train_cpc(CpcModel<T>& model, const std::vector<audio::Waveform>& corpus,
                              const SslTrainConfig& tc, OptimizerState<T>& opt, const StepCallback& on_step = {}) {
  if (corpus.empty()) throw InvalidArgument("train_cpc: empty corpus");
  Rng rng(tc.seed);
  std::vector<double> losses;
  for (std::size_t step = 0; step < tc.steps; ++step) {
    std::vector<std::size_t> pick;
    std::size_t len = tc.crop_samples;
    for (std::size_t b = 0; b < tc.batch; ++b) {
      pick.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(corpus.size()) - 1)));
      len = std::min(len, corpus[pick.back()].size());
    }
    len -= len % model.cfg.hop();
    std::vector<std::vector<double>> crops;
    std::vector<const std::vector<double>*> ptrs;
    for (std::size_t i : pick) {
      const auto& s = corpus[i].samples;
      const std::size_t off = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(s.size() - len)));
      crops.emplace_back(s.begin() + static_cast<long>(off), s.begin() + static_cast<long>(off + len));
    }
    for (const auto& c : crops) ptrs.push_back(&c);
    Graph<T> g;
    auto nodes = model.forward(g, g.input("wav", waveform_batch<T>(ptrs, len)));
    NodeId loss = model.loss(g, nodes, rng);
    model.params.zero_grad();
    g.backward(loss);
    optimizer_update(model.params, opt, tc.schedule, tc.clip_norm);
    losses.push_back(g.value(loss).item());
    if (on_step) on_step(step, losses.back());
  }
  return losses;
}

// Mean loss over whole utterances with a fixed negative-sampling seed.
template <typename T>
double cpc_eval_loss(CpcModel<T>& model, const std::vector<audio::Waveform>& corpus, std::uint64_t seed = 7) {
  if (corpus.empty()) throw InvalidArgument("cpc_eval_loss: empty corpus");
  Rng rng(seed);
  double total = 0;
  for (const auto& w : corpus) {
    Graph<T> g;
    const std::size_t len = w.size() - w.size() % model.cfg.hop();
    auto nodes = model.forward(g, g.input("wav", waveform_batch<T>({&w.samples}, len)));
    total += g.value(model.loss(g, nodes, rng)).item();
  }
  return total / static_cast<double>(corpus.size());
}

}  // namespace sslst::ssl
