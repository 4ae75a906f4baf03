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
#include <string>
#include <vector>

#include "sslst/numerics/graph.hpp"
#include "sslst/numerics/optim.hpp"
#include "sslst/ssl/cpc.hpp"

namespace sslst::ssl {

struct MlmConfig {
  std::size_t codes = 64;  // V; MASK = V, PAD = V + 1
  std::size_t width = 128;
  std::size_t blocks = 4;
  std::size_t heads = 4;
  std::size_t ffn = 512;
  std::size_t max_len = 1024;
  double mask_prob = 0.15;
  std::size_t mask_span = 1;
  double embed_std = 0.01;

  long mask_id() const { return static_cast<long>(codes); }
  long pad_id() const { return static_cast<long>(codes) + 1; }
  void validate() const {
    if (codes < 1 || width < 1 || heads < 1 || width % heads != 0)
      throw InvalidArgument("mlm: width must be a positive multiple of heads");
    if (mask_span < 1) throw InvalidArgument("mlm: mask_span must be at least 1");
  }
};

struct MaskedSequence {
  std::vector<long> tokens;   // codes with MASK at selected positions
  std::vector<long> targets;  // original code at selected positions, -1 elsewhere
  std::size_t masked() const {
    std::size_t n = 0;
    for (long t : targets) n += t >= 0;
    return n;
  }
};

// Position t starts a masked span iff uniform01() < p, drawn for t = 0, 1, ...
// in order (one draw per position).
inline MaskedSequence mask_batch(const std::vector<long>& codes, double p, long mask_id, Rng& rng,
                                 std::size_t span = 1) {
  if (codes.empty()) throw InvalidArgument("mask_batch: empty sequence");
  MaskedSequence m{codes, std::vector<long>(codes.size(), -1)};
  for (std::size_t t = 0; t < codes.size(); ++t) {
    if (rng.uniform01() >= p) continue;
    for (std::size_t s = t; s < std::min(codes.size(), t + span); ++s) {
      m.tokens[s] = mask_id;
      m.targets[s] = codes[s];
    }
  }
  return m;
}

inline double sinusoid(std::size_t pos, std::size_t i, std::size_t d) {
  const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
  return i % 2 == 0 ? std::sin(static_cast<double>(pos) * rate) : std::cos(static_cast<double>(pos) * rate);
}

// Pre-norm transformer encoder over discrete codes with tied output layer.
template <typename T>
class MlmModel {
 public:
  MlmConfig cfg;
  std::string prefix = "mlm.";
  ParamSet<T> params;

  MlmModel() = default;
  explicit MlmModel(MlmConfig c, std::string pfx = "mlm.") : cfg(c), prefix(std::move(pfx)) {
    cfg.validate();
    declare(params, cfg, prefix);
  }

  static void declare(ParamSet<T>& ps, const MlmConfig& cfg, const std::string& pfx) {
    const std::size_t d = cfg.width;
    ps.add(pfx + "embed", {cfg.codes + 2, d});
    ps.add(pfx + "out.b", {cfg.codes});
    for (std::size_t l = 0; l < cfg.blocks; ++l) {
      const std::string p = pfx + "block" + std::to_string(l) + ".";
      for (const char* ln : {"ln1", "ln2"}) {
        ps.add(p + ln + ".g", {d});
        ps.add(p + ln + ".b", {d});
      }
      for (const char* w : {"q", "k", "v", "o"}) {
        ps.add(p + "attn." + w + ".w", {d, d});
        ps.add(p + "attn." + w + ".b", {d});
      }
      ps.add(p + "ffn.w1", {d, cfg.ffn});
      ps.add(p + "ffn.b1", {cfg.ffn});
      ps.add(p + "ffn.w2", {cfg.ffn, d});
      ps.add(p + "ffn.b2", {d});
    }
    ps.add(pfx + "ln.g", {d});
    ps.add(pfx + "ln.b", {d});
  }

  static void initialize(ParamSet<T>& ps, const MlmConfig& cfg, const std::string& pfx, Rng& rng) {
    for (auto& [name, p] : ps) {
      if (!name.starts_with(pfx)) continue;
      if (name == pfx + "embed")
        init::normal(p.value, rng, cfg.embed_std);
      else if (name.ends_with(".g"))
        init::constant(p.value, 1.0);
      else if (p.value.rank() == 2)
        init::glorot(p.value, rng, p.value.dim(0), p.value.dim(1));
      else
        init::constant(p.value, 0.0);
    }
  }

  void init(Rng& rng) { initialize(params, cfg, prefix, rng); }

  // Hidden states [B, T, d] for right-padded token rows.
  static NodeId hidden(Graph<T>& g, ParamSet<T>& ps, const MlmConfig& cfg, const std::string& pfx,
                       const std::vector<std::vector<long>>& seqs) {
    const std::size_t B = seqs.size(), d = cfg.width, H = cfg.heads, dh = d / H;
    std::size_t Tn = 0;
    for (const auto& s : seqs) Tn = std::max(Tn, s.size());
    if (B == 0 || Tn == 0) throw InvalidArgument("mlm: empty batch");
    if (Tn > cfg.max_len) throw InvalidArgument("mlm: sequence of " + std::to_string(Tn) + " exceeds max_len");
    std::vector<long> ids(B * Tn, cfg.pad_id());
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < seqs[b].size(); ++t) {
        const long id = seqs[b][t];
        if (id < 0 || id > cfg.mask_id()) throw InvalidArgument("mlm: token " + std::to_string(id) + " out of range");
        ids[b * Tn + t] = id;
      }
    auto P = [&](const std::string& n) { return g.param(ps.at(pfx + n)); };

    Tensor<T> pos({B, Tn, d});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < Tn; ++t)
        for (std::size_t i = 0; i < d; ++i) pos.data[(b * Tn + t) * d + i] = static_cast<T>(sinusoid(t, i, d));
    std::vector<T> key_mask(B * H * Tn * Tn, T(0));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t q = 0; q < Tn; ++q)
          for (std::size_t k = 0; k < seqs[b].size(); ++k) key_mask[((b * H + h) * Tn + q) * Tn + k] = T(1);

    NodeId x = g.add(g.scale(g.embedding(P("embed"), ids, {B, Tn}), std::sqrt(static_cast<double>(d))),
                     g.constant(std::move(pos)));
    auto heads_of = [&](NodeId y) { return g.reshape(g.permute0213(g.reshape(y, {B, Tn, H, dh})), {B * H, Tn, dh}); };
    for (std::size_t l = 0; l < cfg.blocks; ++l) {
      const std::string p = "block" + std::to_string(l) + ".";
      NodeId a = g.layer_norm(x, P(p + "ln1.g"), P(p + "ln1.b"));
      NodeId q = heads_of(g.affine(a, P(p + "attn.q.w"), P(p + "attn.q.b")));
      NodeId k = heads_of(g.affine(a, P(p + "attn.k.w"), P(p + "attn.k.b")));
      NodeId v = heads_of(g.affine(a, P(p + "attn.v.w"), P(p + "attn.v.b")));
      NodeId att = g.masked_softmax(g.scale(g.batch_matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh))), key_mask);
      NodeId ctx = g.reshape(g.permute0213(g.reshape(g.batch_matmul(att, v), {B, H, Tn, dh})), {B, Tn, d});
      x = g.add(x, g.affine(ctx, P(p + "attn.o.w"), P(p + "attn.o.b")));
      NodeId f = g.layer_norm(x, P(p + "ln2.g"), P(p + "ln2.b"));
      f = g.affine(g.relu(g.affine(f, P(p + "ffn.w1"), P(p + "ffn.b1"))), P(p + "ffn.w2"), P(p + "ffn.b2"));
      x = g.add(x, f);
    }
    return g.layer_norm(x, P("ln.g"), P("ln.b"));
  }

  NodeId hidden(Graph<T>& g, const std::vector<std::vector<long>>& seqs) { return hidden(g, params, cfg, prefix, seqs); }

  // Logits over the V codes, [B*T, V], using the first V embedding rows.
  NodeId logits(Graph<T>& g, NodeId h) {
    const auto& hs = g.shape(h);
    NodeId table = g.slice(g.param(params.at(prefix + "embed")), 0, 0, cfg.codes);
    NodeId flat = g.reshape(h, {hs[0] * hs[1], hs[2]});
    return g.add_broadcast(g.matmul(flat, table, true), g.param(params.at(prefix + "out.b")), 0);
  }

  // Mean cross-entropy over masked positions of the batch.
  NodeId loss(Graph<T>& g, const std::vector<MaskedSequence>& batch) {
    std::vector<std::vector<long>> seqs;
    std::size_t Tn = 0, masked = 0;
    for (const auto& m : batch) {
      seqs.push_back(m.tokens);
      Tn = std::max(Tn, m.tokens.size());
      masked += m.masked();
    }
    if (masked == 0) throw InvalidArgument("mlm_loss: no masked positions");
    std::vector<long> targets(batch.size() * Tn, -1);
    for (std::size_t b = 0; b < batch.size(); ++b)
      std::copy(batch[b].targets.begin(), batch[b].targets.end(), targets.begin() + static_cast<long>(b * Tn));
    return g.cross_entropy(logits(g, hidden(g, seqs)), targets);
  }
};

struct MlmTrainConfig {
  std::size_t steps = 1000;
  std::size_t batch = 8;
  std::size_t crop_tokens = 100;
  Schedule schedule = Schedule::fixed(5e-4);
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
};

template <typename T>
std::vector<double> train_mlm(MlmModel<T>& model, const std::vector<std::vector<long>>& corpus, const MlmTrainConfig& tc,
                              OptimizerState<T>& opt, const StepCallback& on_step = {}) {
  if (corpus.empty()) throw InvalidArgument("train_mlm: empty corpus");
  Rng rng(tc.seed);
  std::vector<double> losses;
  for (std::size_t step = 0; step < tc.steps; ++step) {
    std::vector<MaskedSequence> batch;
    std::size_t masked = 0;
    while (masked == 0) {
      batch.clear();
      for (std::size_t b = 0; b < tc.batch; ++b) {
        const auto& s = corpus[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(corpus.size()) - 1))];
        const std::size_t len = std::min(tc.crop_tokens, s.size());
        const auto off = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(s.size() - len)));
        std::vector<long> crop(s.begin() + static_cast<long>(off), s.begin() + static_cast<long>(off + len));
        batch.push_back(mask_batch(crop, model.cfg.mask_prob, model.cfg.mask_id(), rng, model.cfg.mask_span));
        masked += batch.back().masked();
      }
    }
    Graph<T> g;
    NodeId loss = model.loss(g, batch);
    model.params.zero_grad();
    g.backward(loss);
    optimizer_update(model.params, opt, tc.schedule, tc.clip_norm);
    losses.push_back(g.value(loss).item());
    if (on_step) on_step(step, losses.back());
  }
  return losses;
}

// Held-out loss with a fixed masking seed.
template <typename T>
double mlm_eval_loss(MlmModel<T>& model, const std::vector<std::vector<long>>& corpus, std::uint64_t seed = 7) {
  Rng rng(seed);
  double total = 0;
  std::size_t n = 0;
  for (const auto& s : corpus) {
    auto m = mask_batch(s, model.cfg.mask_prob, model.cfg.mask_id(), rng, model.cfg.mask_span);
    if (m.masked() == 0) continue;
    Graph<T> g;
    total += g.value(model.loss(g, {m})).item();
    ++n;
  }
  if (n == 0) throw InvalidArgument("mlm_eval_loss: nothing masked");
  return total / static_cast<double>(n);
}

}  // namespace sslst::ssl
