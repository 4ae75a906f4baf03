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
#include <optional>
#include <string>
#include <vector>

#include "sslst/numerics/graph.hpp"
#include "sslst/numerics/optim.hpp"
#include "sslst/numerics/params.hpp"
#include "sslst/ssl/mlm.hpp"
#include "sslst/text/vocab.hpp"

namespace sslst::translator {

SSLST_DEFINE_ERROR(TrainingError, Error, "training");

// Encoder frames after the two stride-2 convolutions.
inline std::size_t reduced_length(std::size_t frames) { return ((frames + 1) / 2 + 1) / 2; }

struct Seq2SeqConfig {
  std::size_t input_dim = 80;
  std::size_t input_width = 128;  // two tanh layers
  std::size_t conv_channels = 16;
  std::size_t enc_layers = 3;
  std::size_t enc_hidden = 128;  // per direction
  std::size_t dec_layers = 2;
  std::size_t dec_hidden = 256;
  std::size_t embed_dim = 128;
  std::size_t attention_dim = 128;
  std::size_t vocab_size = 0;

  static constexpr std::size_t kTimeReduction = 4;

  std::size_t conv_width() const { return reduced_length(input_width); }
  std::size_t encoder_dim() const { return 2 * enc_hidden; }

  void validate() const {
    std::vector<std::string> bad;
    if (input_dim == 0) bad.push_back("input_dim must be positive");
    if (input_width == 0) bad.push_back("input_width must be positive");
    if (conv_channels == 0) bad.push_back("conv_channels must be positive");
    if (enc_layers == 0 || enc_hidden == 0) bad.push_back("encoder needs at least one layer of positive width");
    if (dec_layers == 0 || dec_hidden == 0) bad.push_back("decoder needs at least one layer of positive width");
    if (embed_dim == 0 || attention_dim == 0) bad.push_back("embed_dim and attention_dim must be positive");
    if (vocab_size <= static_cast<std::size_t>(text::kNumReserved))
      bad.push_back("vocab_size must exceed the " + std::to_string(text::kNumReserved) + " reserved symbols");
    if (!bad.empty()) {
      std::string msg = "invalid seq2seq config:";
      for (const auto& b : bad) msg += "\n  " + b;
      throw InvalidArgument(msg);
    }
  }
};

enum class EncoderKind { Recurrent, MaskedLm };

// One training or decoding example. Recurrent encoders read `features`
// ([T, D]); masked-LM encoders read `codes`. `target` excludes bos/eos.
template <typename T>
struct Example {
  std::string id;
  Tensor<T> features;
  std::vector<long> codes;
  std::vector<long> target;

  bool has_features() const { return features.rank() == 2; }
  std::size_t frames() const { return has_features() ? features.dim(0) : codes.size(); }
};

// Right-padded batch. Targets are framed as bos ... eos and padded with pad.
template <typename T>
struct Batch {
  std::vector<std::string> ids;
  Tensor<T> features;  // [B, Tmax, D]; rank 0 for code input
  std::vector<std::vector<long>> codes;
  std::vector<std::size_t> lengths;
  std::vector<long> targets;  // [B, Lmax] row-major
  std::vector<std::size_t> target_lengths;  // including bos and eos
  std::size_t max_target = 0;

  std::size_t size() const { return lengths.size(); }
};

template <typename T>
Batch<T> collate(const std::vector<const Example<T>*>& examples) {
  if (examples.empty()) throw InvalidArgument("cannot collate an empty batch");
  Batch<T> b;
  const bool codes = !examples[0]->has_features();
  std::size_t tmax = 0, dim = 0;
  for (const auto* e : examples) {
    if (e->has_features() == codes) throw InvalidArgument("batch mixes feature and code examples");
    if (e->frames() == 0) throw InvalidArgument("example '" + e->id + "' has no frames");
    if (!codes) {
      if (dim && e->features.dim(1) != dim) throw InvalidArgument("example '" + e->id + "' has a different feature dimension");
      dim = e->features.dim(1);
    }
    tmax = std::max(tmax, e->frames());
    b.max_target = std::max(b.max_target, e->target.size() + 2);
  }
  const std::size_t B = examples.size();
  if (!codes) b.features = Tensor<T>({B, tmax, dim});
  b.targets.assign(B * b.max_target, text::kPad);
  for (std::size_t i = 0; i < B; ++i) {
    const auto& e = *examples[i];
    b.ids.push_back(e.id);
    b.lengths.push_back(e.frames());
    if (codes)
      b.codes.push_back(e.codes);
    else
      std::copy(e.features.data.begin(), e.features.data.end(), b.features.data.begin() + static_cast<long>(i * tmax * dim));
    long* row = b.targets.data() + i * b.max_target;
    row[0] = text::kBos;
    std::copy(e.target.begin(), e.target.end(), row + 1);
    row[e.target.size() + 1] = text::kEos;
    b.target_lengths.push_back(e.target.size() + 2);
  }
  return b;
}

// Encoder states [B, T', E] with their validity mask and the attention keys.
struct EncoderNodes {
  NodeId states = 0;
  NodeId keys = 0;
  std::size_t steps = 0;
  std::vector<std::size_t> lengths;
};

struct DecoderNodes {
  std::vector<NodeId> layers;  // [B, 2H] = [h, c] per layer
  NodeId context = 0;          // [B, E]
};

struct StepNodes {
  NodeId logits = 0;
  NodeId attention = 0;
  DecoderNodes next;
};

// Attention-based encoder-decoder. Parameter names live under "enc.",
// "dec." and "proj." so that transfer can select them by prefix.
template <typename T>
class Seq2SeqModel {
 public:
  Seq2SeqConfig cfg;
  EncoderKind kind = EncoderKind::Recurrent;
  ssl::MlmConfig mlm_cfg;
  ParamSet<T> params;

  static inline const std::string kMlmPrefix = "enc.mlm.";

  Seq2SeqModel() = default;

  explicit Seq2SeqModel(Seq2SeqConfig c) : cfg(c) {
    cfg.validate();
    declare_encoder();
    declare_decoder();
  }

  // Masked-LM encoder copied from `mlm`, a bridge to the attention width and
  // a fresh decoder. `rng` only touches the bridge and the decoder.
  static Seq2SeqModel hybrid(const ssl::MlmModel<T>& mlm, Seq2SeqConfig c, Rng& rng, bool train_encoder = true) {
    c.input_dim = mlm.cfg.width;
    c.validate();
    Seq2SeqModel m;
    m.cfg = c;
    m.kind = EncoderKind::MaskedLm;
    m.mlm_cfg = mlm.cfg;
    ssl::MlmModel<T>::declare(m.params, mlm.cfg, kMlmPrefix);
    for (const auto& [name, p] : mlm.params) {
      auto& dst = m.params.at(kMlmPrefix + name.substr(mlm.prefix.size()));
      if (dst.value.shape != p.value.shape) throw InvalidArgument("hybrid: shape mismatch for '" + name + "'");
      dst.value = p.value;
      dst.trainable = train_encoder;
    }
    m.params.add("enc.bridge.w", {mlm.cfg.width, c.encoder_dim()});
    m.params.add("enc.bridge.b", {c.encoder_dim()});
    m.declare_decoder();
    m.init_matching(rng, [](const std::string& n) { return !n.starts_with(kMlmPrefix); });
    return m;
  }

  void init(Rng& rng) {
    init_matching(rng, [](const std::string& n) { return !n.starts_with(kMlmPrefix); });
  }

  // Re-draw only the decoder and projection.
  void init_decoder(Rng& rng) {
    init_matching(rng, [](const std::string& n) { return n.starts_with("dec.") || n.starts_with("proj."); });
  }

  std::size_t vocab_size() const { return cfg.vocab_size; }

  // ---- encoder ------------------------------------------------------------

  EncoderNodes encode(Graph<T>& g, const Batch<T>& batch) {
    EncoderNodes out;
    if (batch.size() == 0) throw InvalidArgument("encode: empty batch");
    if (kind == EncoderKind::MaskedLm) {
      if (batch.codes.size() != batch.size()) throw InvalidArgument("hybrid encoder expects code sequences");
      NodeId h = ssl::MlmModel<T>::hidden(g, params, mlm_cfg, kMlmPrefix, batch.codes);
      out.states = g.affine(h, P(g, "enc.bridge.w"), P(g, "enc.bridge.b"));
      out.lengths = batch.lengths;
      out.steps = g.shape(h)[1];
    } else {
      NodeId x = g.input("features", batch.features);
      out = encode_features(g, x, batch.lengths);
    }
    out.keys = g.affine(out.states, P(g, "dec.att.wk"), P(g, "dec.att.b"));
    return out;
  }

  // x is [B, T, D] with rows past each length treated as padding.
  EncoderNodes encode_features(Graph<T>& g, NodeId x, const std::vector<std::size_t>& lengths) {
    const Shape xs = g.shape(x);
    if (xs.size() != 3 || xs[2] != cfg.input_dim)
      throw InvalidArgument("encoder expects [B, T, " + std::to_string(cfg.input_dim) + "] features, got " + shape_str(xs));
    if (lengths.size() != xs[0]) throw InvalidArgument("encoder: one length per batch row required");
    const std::size_t B = xs[0], Tn = xs[1];
    for (std::size_t l : lengths)
      if (l == 0 || l > Tn) throw InvalidArgument("encoder: length " + std::to_string(l) + " outside [1, " + std::to_string(Tn) + "]");

    auto time_mask = [&](std::size_t steps, std::size_t inner, auto reduce) {
      std::vector<T> m(B * steps * inner, T(0));
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < reduce(lengths[b]); ++t)
          std::fill_n(m.begin() + static_cast<long>((b * steps + t) * inner), inner, T(1));
      return m;
    };
    auto same = [](std::size_t l) { return l; };
    auto half = [](std::size_t l) { return (l + 1) / 2; };
    auto quarter = [](std::size_t l) { return reduced_length(l); };

    NodeId h = g.tanh(g.affine(x, P(g, "enc.in.0.w"), P(g, "enc.in.0.b")));
    h = g.tanh(g.affine(h, P(g, "enc.in.1.w"), P(g, "enc.in.1.b")));
    h = g.mask_rows(h, time_mask(Tn, 1, same));
    h = g.reshape(h, {B, Tn, cfg.input_width, 1});
    const std::size_t T1 = (Tn + 1) / 2, W1 = (cfg.input_width + 1) / 2;
    h = g.relu(g.conv2d(h, P(g, "enc.conv.0.w"), P(g, "enc.conv.0.b"), 2, 2, 1, 1));
    h = g.mask_rows(h, time_mask(T1, W1, half));
    const std::size_t T2 = reduced_length(Tn), W2 = cfg.conv_width();
    h = g.relu(g.conv2d(h, P(g, "enc.conv.1.w"), P(g, "enc.conv.1.b"), 2, 2, 1, 1));
    h = g.mask_rows(h, time_mask(T2, W2, quarter));
    h = g.reshape(h, {B, T2, W2 * cfg.conv_channels});

    std::vector<std::size_t> reduced(B);
    for (std::size_t b = 0; b < B; ++b) reduced[b] = reduced_length(lengths[b]);
    const std::size_t H = cfg.enc_hidden;
    for (std::size_t l = 0; l < cfg.enc_layers; ++l) {
      std::vector<NodeId> dirs;
      for (const char* dir : {"fw", "bw"}) {
        const std::string p = "enc.blstm." + std::to_string(l) + "." + dir + ".";
        NodeId xw = g.affine(h, P(g, p + "wx"), P(g, p + "b"));
        NodeId wh = P(g, p + "wh");
        NodeId s = g.constant(Tensor<T>({B, 2 * H}));
        std::vector<NodeId> seq(T2);
        const bool back = dir[0] == 'b';
        for (std::size_t i = 0; i < T2; ++i) {
          const std::size_t t = back ? T2 - 1 - i : i;
          std::vector<T> m(B);
          for (std::size_t b = 0; b < B; ++b) m[b] = t < reduced[b] ? T(1) : T(0);
          s = g.lstm_step(xw, t, s, wh, m);
          seq[t] = s;
        }
        dirs.push_back(g.stack(seq, H));
      }
      h = g.concat(dirs, 2);
    }
    EncoderNodes out;
    out.states = h;
    out.steps = T2;
    out.lengths = std::move(reduced);
    return out;
  }

  std::vector<T> attention_mask(const EncoderNodes& enc) const {
    std::vector<T> m(enc.lengths.size() * enc.steps, T(0));
    for (std::size_t b = 0; b < enc.lengths.size(); ++b)
      std::fill_n(m.begin() + static_cast<long>(b * enc.steps), enc.lengths[b], T(1));
    return m;
  }

  // ---- decoder ------------------------------------------------------------

  DecoderNodes initial_decoder(Graph<T>& g, std::size_t batch) const {
    DecoderNodes d;
    for (std::size_t l = 0; l < cfg.dec_layers; ++l) d.layers.push_back(g.constant(Tensor<T>({batch, 2 * cfg.dec_hidden})));
    d.context = g.constant(Tensor<T>({batch, cfg.encoder_dim()}));
    return d;
  }

  // One decoder step with input feeding: [embed(prev); previous context]
  // drives the LSTM stack, whose top output attends over the encoder.
  StepNodes decode_step(Graph<T>& g, const EncoderNodes& enc, const std::vector<T>& mask, const DecoderNodes& prev,
                        const std::vector<long>& tokens) {
    const std::size_t B = tokens.size(), Hd = cfg.dec_hidden, E = cfg.encoder_dim();
    for (long t : tokens)
      if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
        throw InvalidArgument("decoder token " + std::to_string(t) + " outside vocabulary of " + std::to_string(cfg.vocab_size));
    if (prev.layers.size() != cfg.dec_layers) throw InvalidArgument("decoder state has the wrong number of layers");
    StepNodes out;
    NodeId x = g.concat({g.embedding(P(g, "dec.embed"), tokens, {B}), prev.context}, 1);
    for (std::size_t l = 0; l < cfg.dec_layers; ++l) {
      const std::string p = "dec.lstm." + std::to_string(l) + ".";
      NodeId xw = g.reshape(g.affine(x, P(g, p + "wx"), P(g, p + "b")), {B, 1, 4 * Hd});
      NodeId s = g.lstm_step(xw, 0, prev.layers[l], P(g, p + "wh"));
      out.next.layers.push_back(s);
      x = g.slice(s, 1, 0, Hd);
    }
    NodeId q = g.affine(x, P(g, "dec.att.wq"));
    NodeId e = g.affine(g.tanh(g.add_broadcast(enc.keys, q, 1)), P(g, "dec.att.v"));
    out.attention = g.masked_softmax(g.reshape(e, {B, enc.steps}), mask);
    out.next.context = g.reshape(g.batch_matmul(g.reshape(out.attention, {B, 1, enc.steps}), enc.states), {B, E});
    out.logits = g.affine(g.concat({x, out.next.context}, 1), P(g, "proj.w"), P(g, "proj.b"));
    return out;
  }

  // Teacher-forced logits for every target position, step-major [L * B, V],
  // with matching targets (-1 on padding).
  std::pair<NodeId, std::vector<long>> teacher_forced(Graph<T>& g, const Batch<T>& batch, const EncoderNodes& enc) {
    const std::size_t B = batch.size(), L = batch.max_target;
    const auto mask = attention_mask(enc);
    DecoderNodes d = initial_decoder(g, B);
    std::vector<NodeId> steps;
    std::vector<long> targets;
    for (std::size_t j = 0; j + 1 < L; ++j) {
      std::vector<long> prev(B);
      for (std::size_t b = 0; b < B; ++b) {
        prev[b] = batch.targets[b * L + j];
        targets.push_back(j + 1 < batch.target_lengths[b] ? batch.targets[b * L + j + 1] : -1);
      }
      auto s = decode_step(g, enc, mask, d, prev);
      steps.push_back(s.logits);
      d = s.next;
    }
    return {g.concat(steps, 0), std::move(targets)};
  }

  // Mean cross-entropy over non-padding target tokens.
  NodeId loss(Graph<T>& g, const Batch<T>& batch) {
    EncoderNodes enc = encode(g, batch);
    auto [logits, targets] = teacher_forced(g, batch, enc);
    return g.cross_entropy(logits, targets);
  }

  // Summed negative log-likelihood of each example's target.
  std::vector<double> example_nll(const Batch<T>& batch) {
    Graph<T> g;
    EncoderNodes enc = encode(g, batch);
    auto [logits, targets] = teacher_forced(g, batch, enc);
    const auto& lv = g.value(logits);
    const std::size_t V = cfg.vocab_size, B = batch.size();
    std::vector<double> out(B, 0.0);
    for (std::size_t r = 0; r < targets.size(); ++r) {
      if (targets[r] < 0) continue;
      const T* row = lv.ptr() + r * V;
      double mx = *std::max_element(row, row + V), z = 0;
      for (std::size_t v = 0; v < V; ++v) z += std::exp(static_cast<double>(row[v]) - mx);
      out[r % B] += mx + std::log(z) - static_cast<double>(row[targets[r]]);
    }
    return out;
  }

 private:
  NodeId P(Graph<T>& g, const std::string& name) { return g.param(params.at(name)); }

  void declare_encoder() {
    const std::size_t W = cfg.input_width, C = cfg.conv_channels, H = cfg.enc_hidden;
    params.add("enc.in.0.w", {cfg.input_dim, W});
    params.add("enc.in.0.b", {W});
    params.add("enc.in.1.w", {W, W});
    params.add("enc.in.1.b", {W});
    params.add("enc.conv.0.w", {3, 3, 1, C});
    params.add("enc.conv.0.b", {C});
    params.add("enc.conv.1.w", {3, 3, C, C});
    params.add("enc.conv.1.b", {C});
    std::size_t in = cfg.conv_width() * C;
    for (std::size_t l = 0; l < cfg.enc_layers; ++l) {
      for (const char* dir : {"fw", "bw"}) {
        const std::string p = "enc.blstm." + std::to_string(l) + "." + dir + ".";
        params.add(p + "wx", {in, 4 * H});
        params.add(p + "wh", {H, 4 * H});
        params.add(p + "b", {4 * H});
      }
      in = 2 * H;
    }
  }

  void declare_decoder() {
    const std::size_t Hd = cfg.dec_hidden, E = cfg.encoder_dim(), A = cfg.attention_dim;
    params.add("dec.embed", {cfg.vocab_size, cfg.embed_dim});
    std::size_t in = cfg.embed_dim + E;
    for (std::size_t l = 0; l < cfg.dec_layers; ++l) {
      const std::string p = "dec.lstm." + std::to_string(l) + ".";
      params.add(p + "wx", {in, 4 * Hd});
      params.add(p + "wh", {Hd, 4 * Hd});
      params.add(p + "b", {4 * Hd});
      in = Hd;
    }
    params.add("dec.att.wk", {E, A});
    params.add("dec.att.b", {A});
    params.add("dec.att.wq", {Hd, A});
    params.add("dec.att.v", {A, 1});
    params.add("proj.w", {Hd + E, cfg.vocab_size});
    params.add("proj.b", {cfg.vocab_size});
  }

  // Glorot weights, zero biases, LSTM forget-gate bias 1, small embeddings.
  template <typename Pred>
  void init_matching(Rng& rng, Pred keep) {
    for (auto& [name, p] : params) {
      if (!keep(name)) continue;
      auto& v = p.value;
      if (name == "dec.embed") {
        init::uniform(v, rng, 0.1);
      } else if (v.rank() == 4) {
        init::glorot(v, rng, v.dim(0) * v.dim(1) * v.dim(2), v.dim(0) * v.dim(1) * v.dim(3));
      } else if (v.rank() == 2) {
        init::glorot(v, rng, v.dim(0), v.dim(1));
      } else {
        init::constant(v, 0.0);
        if (name.find("lstm.") != std::string::npos && name.ends_with(".b")) {
          const std::size_t h = v.size() / 4;
          std::fill_n(v.data.begin() + static_cast<long>(h), h, T(1));
        }
      }
    }
  }
};

// Learning-rate schedules: fixed 1e-3 for the recurrent model, polynomial
// decay peaking at 5e-5 for the masked-LM backbone.
inline Schedule recurrent_schedule() { return Schedule::fixed(1e-3); }

inline Schedule hybrid_schedule(long total_steps, long warmup_steps) {
  return Schedule::polynomial(5e-5, warmup_steps, total_steps, 0.0);
}

}  // namespace sslst::translator
