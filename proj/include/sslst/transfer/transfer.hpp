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

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sslst/ssl/cpc.hpp"
#include "sslst/ssl/mlm.hpp"
#include "sslst/transfer/checkpoint.hpp"
#include "sslst/translator/data.hpp"
#include "sslst/translator/train.hpp"

namespace sslst::transfer {

// ---- architecture descriptors -----------------------------------------------

inline nlohmann::json to_json(const ssl::MlmConfig& c) {
  return {{"codes", c.codes},     {"width", c.width},         {"blocks", c.blocks},
          {"heads", c.heads},     {"ffn", c.ffn},             {"max_len", c.max_len},
          {"mask_prob", c.mask_prob}, {"mask_span", c.mask_span}, {"embed_std", c.embed_std}};
}

inline nlohmann::json to_json(const ssl::CpcConfig& c) {
  return {{"kernels", c.kernels},       {"strides", c.strides},         {"channels", c.channels},
          {"agg_layers", c.agg_layers}, {"agg_kernel", c.agg_kernel},   {"steps_ahead", c.steps_ahead},
          {"negatives", c.negatives}};
}

inline nlohmann::json to_json(const translator::Seq2SeqConfig& c) {
  return {{"input_dim", c.input_dim},         {"input_width", c.input_width}, {"conv_channels", c.conv_channels},
          {"enc_layers", c.enc_layers},       {"enc_hidden", c.enc_hidden},   {"dec_layers", c.dec_layers},
          {"dec_hidden", c.dec_hidden},       {"embed_dim", c.embed_dim},     {"attention_dim", c.attention_dim},
          {"vocab_size", c.vocab_size}};
}

namespace detail {

template <typename U>
void read_field(const nlohmann::json& j, const char* key, U& out) {
  if (!j.contains(key)) throw CheckpointError(std::string("architecture descriptor lacks '") + key + "'");
  out = j.at(key).get<U>();
}

}  // namespace detail

inline ssl::MlmConfig mlm_config_from_json(const nlohmann::json& j) {
  ssl::MlmConfig c;
  detail::read_field(j, "codes", c.codes);
  detail::read_field(j, "width", c.width);
  detail::read_field(j, "blocks", c.blocks);
  detail::read_field(j, "heads", c.heads);
  detail::read_field(j, "ffn", c.ffn);
  detail::read_field(j, "max_len", c.max_len);
  detail::read_field(j, "mask_prob", c.mask_prob);
  detail::read_field(j, "mask_span", c.mask_span);
  detail::read_field(j, "embed_std", c.embed_std);
  return c;
}

inline ssl::CpcConfig cpc_config_from_json(const nlohmann::json& j) {
  ssl::CpcConfig c;
  detail::read_field(j, "kernels", c.kernels);
  detail::read_field(j, "strides", c.strides);
  detail::read_field(j, "channels", c.channels);
  detail::read_field(j, "agg_layers", c.agg_layers);
  detail::read_field(j, "agg_kernel", c.agg_kernel);
  detail::read_field(j, "steps_ahead", c.steps_ahead);
  detail::read_field(j, "negatives", c.negatives);
  return c;
}

inline translator::Seq2SeqConfig seq2seq_config_from_json(const nlohmann::json& j) {
  translator::Seq2SeqConfig c;
  detail::read_field(j, "input_dim", c.input_dim);
  detail::read_field(j, "input_width", c.input_width);
  detail::read_field(j, "conv_channels", c.conv_channels);
  detail::read_field(j, "enc_layers", c.enc_layers);
  detail::read_field(j, "enc_hidden", c.enc_hidden);
  detail::read_field(j, "dec_layers", c.dec_layers);
  detail::read_field(j, "dec_hidden", c.dec_hidden);
  detail::read_field(j, "embed_dim", c.embed_dim);
  detail::read_field(j, "attention_dim", c.attention_dim);
  detail::read_field(j, "vocab_size", c.vocab_size);
  return c;
}

// ---- model <-> checkpoint ---------------------------------------------------

template <typename T>
Checkpoint make_checkpoint(const translator::Seq2SeqModel<T>& m, const std::string& vocab_fingerprint, long step,
                           long order) {
  if (vocab_fingerprint.empty()) throw InvalidArgument("seq2seq checkpoints need a vocabulary fingerprint");
  CheckpointMeta meta;
  meta.kind = "seq2seq";
  meta.arch = {{"model", to_json(m.cfg)},
               {"encoder", m.kind == translator::EncoderKind::MaskedLm ? "mlm" : "recurrent"}};
  if (m.kind == translator::EncoderKind::MaskedLm) meta.arch["mlm"] = to_json(m.mlm_cfg);
  meta.vocab_fingerprint = vocab_fingerprint;
  meta.step = step;
  meta.order = order;
  return Checkpoint::from_params(m.params, std::move(meta));
}

template <typename T>
Checkpoint make_checkpoint(const ssl::CpcModel<T>& m, long step, long order) {
  CheckpointMeta meta;
  meta.kind = "cpc";
  meta.arch = to_json(m.cfg);
  meta.step = step;
  meta.order = order;
  return Checkpoint::from_params(m.params, std::move(meta));
}

// The tied output layer predicts codes, so the fingerprint names the code
// inventory.
template <typename T>
Checkpoint make_checkpoint(const ssl::MlmModel<T>& m, long step, long order) {
  CheckpointMeta meta;
  meta.kind = "mlm";
  meta.arch = {{"model", to_json(m.cfg)}, {"prefix", m.prefix}};
  meta.vocab_fingerprint = "codes:" + std::to_string(m.cfg.codes);
  meta.step = step;
  meta.order = order;
  return Checkpoint::from_params(m.params, std::move(meta));
}

inline void require_kind(const Checkpoint& c, const std::string& kind) {
  if (c.meta.kind != kind)
    throw CheckpointMismatchError("expected a " + kind + " checkpoint, got kind '" + c.meta.kind + "'");
}

template <typename T>
translator::Seq2SeqModel<T> seq2seq_from_checkpoint(const Checkpoint& c) {
  require_kind(c, "seq2seq");
  const auto cfg = seq2seq_config_from_json(c.meta.arch.at("model"));
  translator::Seq2SeqModel<T> m;
  if (c.meta.arch.value("encoder", "recurrent") == "mlm") {
    ssl::MlmModel<T> shell(mlm_config_from_json(c.meta.arch.at("mlm")));
    Rng unused(0);
    m = translator::Seq2SeqModel<T>::hybrid(shell, cfg, unused);
  } else {
    m = translator::Seq2SeqModel<T>(cfg);
  }
  c.load_into(m.params);
  return m;
}

template <typename T>
ssl::CpcModel<T> cpc_from_checkpoint(const Checkpoint& c) {
  require_kind(c, "cpc");
  ssl::CpcModel<T> m(cpc_config_from_json(c.meta.arch));
  if (c.tensors.count("vq.codebook")) m.set_codebook(c.at("vq.codebook").template cast<T>());
  c.load_into(m.params);
  return m;
}

template <typename T>
ssl::MlmModel<T> mlm_from_checkpoint(const Checkpoint& c) {
  require_kind(c, "mlm");
  ssl::MlmModel<T> m(mlm_config_from_json(c.meta.arch.at("model")), c.meta.arch.value("prefix", std::string("mlm.")));
  c.load_into(m.params);
  return m;
}

// Hybrid translator whose encoder is the masked-LM stored in `c`.
template <typename T>
translator::Seq2SeqModel<T> build_hybrid(const Checkpoint& c, translator::Seq2SeqConfig cfg, Rng& rng,
                                         bool train_encoder = true) {
  if (c.meta.kind != "mlm")
    throw CheckpointMismatchError("hybrid encoder needs a masked-LM checkpoint, got kind '" + c.meta.kind + "'");
  return translator::Seq2SeqModel<T>::hybrid(mlm_from_checkpoint<T>(c), cfg, rng, train_encoder);
}

// ---- cross-task transfer ----------------------------------------------------

enum class TransferScope { Encoder, EncoderDecoder };

inline const char* scope_name(TransferScope s) { return s == TransferScope::Encoder ? "encoder" : "encoder+decoder"; }

inline TransferScope parse_scope(const std::string& s) {
  if (s == "encoder") return TransferScope::Encoder;
  if (s == "encoder+decoder") return TransferScope::EncoderDecoder;
  throw InvalidArgument("unknown transfer scope '" + s + "' (expected encoder or encoder+decoder)");
}

inline bool in_scope(const std::string& name, TransferScope s) {
  if (name.starts_with("enc.")) return true;
  return s == TransferScope::EncoderDecoder && (name.starts_with("dec.") || name.starts_with("proj."));
}

struct TransferReport {
  std::vector<std::string> copied;
};

// Copy the in-scope tensors of `source` into `target` bitwise. Every check
// runs before the first write, so a rejected transfer leaves `target` as is.
template <typename T>
TransferReport transfer_parameters(const Checkpoint& source, translator::Seq2SeqModel<T>& target, TransferScope scope,
                                   const std::string& target_fingerprint) {
  require_kind(source, "seq2seq");
  if (scope == TransferScope::EncoderDecoder && source.meta.vocab_fingerprint != target_fingerprint)
    throw CheckpointMismatchError("decoder transfer needs identical vocabularies (source " +
                                  source.meta.vocab_fingerprint + ", target " + target_fingerprint + ")");
  TransferReport rep;
  for (const auto& [name, p] : target.params) {
    if (!in_scope(name, scope)) continue;
    auto it = source.tensors.find(name);
    if (it == source.tensors.end()) throw CheckpointMismatchError("source checkpoint lacks tensor '" + name + "'");
    if (it->second.value.shape != p.value.shape)
      throw CheckpointMismatchError("tensor '" + name + "' has shape " + shape_str(it->second.value.shape) +
                                    " in the source, " + shape_str(p.value.shape) + " in the target");
    rep.copied.push_back(name);
  }
  for (const auto& [name, st] : source.tensors)
    if (in_scope(name, scope) && !target.params.contains(name))
      throw CheckpointMismatchError("target model lacks tensor '" + name + "'");
  for (const auto& name : rep.copied) {
    auto& v = target.params.at(name).value;
    const auto& src = source.tensors.at(name).value;
    for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = static_cast<T>(src.data[i]);
  }
  return rep;
}

// ---- multilingual ASR -------------------------------------------------------

template <typename T>
struct LabeledAudio {
  std::string id;
  Tensor<T> features;  // [frames, dim]
  std::string text;
};

// English utterances first, then X, each encoded strictly with `vocab`.
template <typename T>
std::vector<translator::Example<T>> mix_corpora(const std::vector<LabeledAudio<T>>& english,
                                                const std::vector<LabeledAudio<T>>& other, const text::Vocabulary& vocab) {
  std::vector<translator::Example<T>> examples;
  examples.reserve(english.size() + other.size());
  for (const auto* part : {&english, &other})
    for (const auto& u : *part) examples.push_back(translator::make_example(u.id, u.features, vocab, u.text));
  return examples;
}

using CheckpointSink = std::function<void(const Checkpoint&, std::size_t epoch)>;

// Train one ASR model on the concatenation English ++ X. Both corpora are
// encoded with `vocab`; any symbol outside it rejects the whole mixture.
// `on_checkpoint` receives one checkpoint per epoch (order = epoch).
template <typename T>
Checkpoint train_multilingual_asr(const std::vector<LabeledAudio<T>>& english, const std::vector<LabeledAudio<T>>& other,
                                  const text::Vocabulary& vocab, translator::Seq2SeqModel<T>& model,
                                  const translator::TrainConfig& tc, const CheckpointSink& on_checkpoint = {},
                                  const translator::EpochCallback& on_epoch = {}) {
  if (english.empty() && other.empty()) throw InvalidArgument("multilingual ASR: both corpora are empty");
  if (model.cfg.vocab_size != vocab.size())
    throw translator::VocabularyMismatchError("model vocabulary size " + std::to_string(model.cfg.vocab_size) +
                                              " differs from the shared vocabulary (" + std::to_string(vocab.size()) + ")");
  const auto examples = mix_corpora(english, other, vocab);
  OptimizerState<T> opt;
  Checkpoint last;
  translator::train(model, examples, tc, opt, [&](std::size_t epoch, double loss) {
    last = make_checkpoint(model, vocab.fingerprint(), opt.step, static_cast<long>(epoch));
    if (on_checkpoint) on_checkpoint(last, epoch);
    return on_epoch ? on_epoch(epoch, loss) : true;
  });
  return last;
}

}  // namespace sslst::transfer
