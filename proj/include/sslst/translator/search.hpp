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
#include <vector>

#include "sslst/decode/beam.hpp"
#include "sslst/translator/seq2seq.hpp"

namespace sslst::translator {

namespace detail {

template <typename T>
Tensor<T> take_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  Shape s = x.shape;
  const std::size_t inner = x.size() / s[0];
  s[0] = rows.size();
  Tensor<T> out(s);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.data.begin() + static_cast<long>(rows[i] * inner), inner, out.data.begin() + static_cast<long>(i * inner));
  return out;
}

}  // namespace detail

// Encoder result held as plain tensors, reusable across decoder steps.
template <typename T>
struct EncoderOutput {
  Tensor<T> states;  // [B, T', E]
  Tensor<T> keys;    // [B, T', A]
  std::vector<std::size_t> lengths;

  std::size_t size() const { return lengths.size(); }
  std::size_t steps() const { return states.rank() == 3 ? states.dim(1) : 0; }

  EncoderOutput rows(const std::vector<std::size_t>& idx) const {
    EncoderOutput out{detail::take_rows(states, idx), detail::take_rows(keys, idx), {}};
    for (std::size_t i : idx) out.lengths.push_back(lengths.at(i));
    return out;
  }
};

template <typename T>
struct DecoderState {
  std::vector<Tensor<T>> layers;  // [B, 2H] each
  Tensor<T> context;              // [B, E]

  std::size_t size() const { return context.dim(0); }

  DecoderState rows(const std::vector<std::size_t>& idx) const {
    DecoderState out;
    for (const auto& l : layers) out.layers.push_back(detail::take_rows(l, idx));
    out.context = detail::take_rows(context, idx);
    return out;
  }
};

template <typename T>
struct StepResult {
  Tensor<T> logprobs;   // [B, V]
  DecoderState<T> state;
  Tensor<T> attention;  // [B, T']
};

template <typename T>
EncoderOutput<T> encode(Seq2SeqModel<T>& model, const Batch<T>& batch) {
  Graph<T> g;
  EncoderNodes n = model.encode(g, batch);
  return {g.value(n.states), g.value(n.keys), n.lengths};
}

template <typename T>
DecoderState<T> initial_state(const Seq2SeqModel<T>& model, std::size_t batch) {
  DecoderState<T> s;
  for (std::size_t l = 0; l < model.cfg.dec_layers; ++l) s.layers.emplace_back(Shape{batch, 2 * model.cfg.dec_hidden});
  s.context = Tensor<T>({batch, model.cfg.encoder_dim()});
  return s;
}

// Log-probabilities of the next token for each row, the successor state
// and the attention weights used to form the new context.
template <typename T>
StepResult<T> decode_step(Seq2SeqModel<T>& model, const std::vector<long>& prev, const DecoderState<T>& state,
                          const EncoderOutput<T>& enc) {
  const std::size_t B = prev.size();
  if (enc.size() != B || state.size() != B)
    throw InvalidArgument("decode_step: " + std::to_string(B) + " tokens for " + std::to_string(enc.size()) +
                          " encoder rows and " + std::to_string(state.size()) + " states");
  for (std::size_t l : enc.lengths)
    if (l == 0) throw InvalidArgument("decode_step: empty encoder output");
  Graph<T> g;
  EncoderNodes en;
  en.states = g.constant(enc.states);
  en.keys = g.constant(enc.keys);
  en.steps = enc.steps();
  en.lengths = enc.lengths;
  DecoderNodes d;
  for (const auto& l : state.layers) d.layers.push_back(g.constant(l));
  d.context = g.constant(state.context);
  StepNodes s = model.decode_step(g, en, model.attention_mask(en), d, prev);
  StepResult<T> out;
  out.logprobs = g.value(g.log_softmax(s.logits));
  for (NodeId l : s.next.layers) out.state.layers.push_back(g.value(l));
  out.state.context = g.value(s.next.context);
  out.attention = g.value(s.attention);
  return out;
}

// Adapts one encoded utterance to the beam-search step interface. A state
// is the flattened [h, c] of every layer followed by the context.
template <typename T>
class BeamScorer {
 public:
  using State = std::vector<T>;

  BeamScorer(Seq2SeqModel<T>& model, EncoderOutput<T> enc) : model_(model), enc_(std::move(enc)) {
    if (enc_.size() != 1) throw InvalidArgument("beam scorer takes a single utterance");
    if (enc_.steps() == 0 || enc_.lengths[0] == 0) throw InvalidArgument("beam scorer: empty encoder output");
  }

  State initial() const { return flatten(initial_state(model_, 1), 0); }

  std::pair<std::vector<std::vector<double>>, std::vector<State>> step(const std::vector<State>& states,
                                                                        const std::vector<long>& prev) {
    const std::size_t n = states.size();
    DecoderState<T> d = initial_state(model_, n);
    const std::size_t w = 2 * model_.cfg.dec_hidden, e = model_.cfg.encoder_dim();
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t off = 0;
      for (auto& l : d.layers) {
        std::copy_n(states[i].begin() + static_cast<long>(off), w, l.data.begin() + static_cast<long>(i * w));
        off += w;
      }
      std::copy_n(states[i].begin() + static_cast<long>(off), e, d.context.data.begin() + static_cast<long>(i * e));
    }
    if (replicated_.size() != n) replicated_ = enc_.rows(std::vector<std::size_t>(n, 0));
    auto r = decode_step(model_, prev, d, replicated_);
    std::pair<std::vector<std::vector<double>>, std::vector<State>> out;
    const std::size_t V = model_.cfg.vocab_size;
    for (std::size_t i = 0; i < n; ++i) {
      out.first.emplace_back(r.logprobs.data.begin() + static_cast<long>(i * V),
                             r.logprobs.data.begin() + static_cast<long>((i + 1) * V));
      out.second.push_back(flatten(r.state, i));
    }
    return out;
  }

 private:
  State flatten(const DecoderState<T>& d, std::size_t row) const {
    State s;
    const std::size_t w = 2 * model_.cfg.dec_hidden, e = model_.cfg.encoder_dim();
    for (const auto& l : d.layers)
      s.insert(s.end(), l.data.begin() + static_cast<long>(row * w), l.data.begin() + static_cast<long>((row + 1) * w));
    s.insert(s.end(), d.context.data.begin() + static_cast<long>(row * e), d.context.data.begin() + static_cast<long>((row + 1) * e));
    return s;
  }

  Seq2SeqModel<T>& model_;
  EncoderOutput<T> enc_;
  EncoderOutput<T> replicated_;
};

// Drop the leading bos and everything from the first eos on.
inline std::vector<long> strip_markers(const std::vector<long>& tokens) {
  std::vector<long> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i == 0 && tokens[i] == text::kBos) continue;
    if (tokens[i] == text::kEos) break;
    out.push_back(tokens[i]);
  }
  return out;
}

template <typename T>
decode::BeamResult beam_translate(Seq2SeqModel<T>& model, const Example<T>& example, const decode::BeamConfig& cfg) {
  auto b = collate<T>({&example});
  BeamScorer<T> scorer(model, encode(model, b));
  return decode::beam_search(scorer, cfg);
}

// Batched greedy decoding (argmax, lowest id on ties) up to max_len tokens.
template <typename T>
std::vector<std::vector<long>> greedy_batch(Seq2SeqModel<T>& model, const Batch<T>& batch, std::size_t max_len) {
  const std::size_t B = batch.size();
  EncoderOutput<T> enc = encode(model, batch);
  DecoderState<T> st = initial_state(model, B);
  std::vector<std::vector<long>> out(B);
  std::vector<long> prev(B, text::kBos);
  std::vector<bool> done(B, false);
  const std::size_t V = model.cfg.vocab_size;
  for (std::size_t t = 0; t < max_len; ++t) {
    auto r = decode_step(model, prev, st, enc);
    bool all = true;
    for (std::size_t b = 0; b < B; ++b) {
      const T* row = r.logprobs.ptr() + b * V;
      const long best = static_cast<long>(std::max_element(row, row + V) - row);
      prev[b] = best;
      if (done[b]) continue;
      if (best == text::kEos)
        done[b] = true;
      else
        out[b].push_back(best);
      all = all && done[b];
    }
    if (all) break;
    st = std::move(r.state);
  }
  return out;
}

// Hypotheses for every example, in input order. beam == 1 uses batched
// greedy decoding in chunks of `chunk` examples.
template <typename T>
std::vector<std::vector<long>> translate(Seq2SeqModel<T>& model, const std::vector<Example<T>>& examples,
                                         const decode::BeamConfig& cfg, std::size_t chunk = 64) {
  std::vector<std::vector<long>> out;
  if (cfg.beam <= 1) {
    for (std::size_t i = 0; i < examples.size(); i += chunk) {
      std::vector<const Example<T>*> part;
      for (std::size_t j = i; j < std::min(examples.size(), i + chunk); ++j) part.push_back(&examples[j]);
      auto hyp = greedy_batch(model, collate(part), cfg.max_len);
      out.insert(out.end(), hyp.begin(), hyp.end());
    }
    return out;
  }
  for (const auto& e : examples) out.push_back(strip_markers(beam_translate(model, e, cfg).best.tokens));
  return out;
}

}  // namespace sslst::translator
