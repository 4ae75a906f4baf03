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
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>

#include "sslst/cli/config.hpp"
#include "sslst/corpus/manifest.hpp"
#include "sslst/corpus/synth.hpp"
#include "sslst/ssl/extract.hpp"
#include "sslst/text/normalize.hpp"
#include "sslst/transfer/transfer.hpp"
#include "sslst/translator/data.hpp"

namespace sslst::cli {

namespace fs = std::filesystem;

// Output directory of one subcommand run: resolved config, metrics log and
// whatever artifacts the stage produces.
class Workspace {
 public:
  Workspace(json config, const std::string& stage) : cfg(std::move(config)), dir(cfg.at("output").get<std::string>()) {
    fs::create_directories(dir);
    log_.open(dir / "metrics.log", std::ios::trunc);
    if (!log_) throw IoError("cannot write '" + (dir / "metrics.log").string() + "'");
    write_config();
    log("stage=" + stage);
  }

  json cfg;
  fs::path dir;

  // Rewrites config.resolved.json; stages call it again after recording
  // derived facts such as a transfer source id.
  void write_config() const {
    std::ofstream os(dir / "config.resolved.json");
    if (!os) throw IoError("cannot write resolved config in '" + dir.string() + "'");
    os << cfg.dump(2) << '\n';
  }

  void log(const std::string& record) {
    log_ << record << '\n';
    log_.flush();
  }

  std::string path(const std::string& name) const { return (dir / name).string(); }

 private:
  std::ofstream log_;
};

inline std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

inline std::string file_id(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string bytes = ss.str();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes.data(), bytes.size())));
  return buf;
}

// ---- corpora and text -------------------------------------------------------

inline corpus::Corpus require_corpus(const json& cfg, const std::string& key) {
  const std::string path = cfg.at("data").at(key).get<std::string>();
  if (path.empty()) throw ConfigError("data." + key + " is required for this stage");
  auto c = corpus::load_manifest(path);
  if (c.empty()) throw InvalidArgument("manifest '" + path + "' has no utterances");
  return c;
}

inline std::optional<corpus::Corpus> optional_corpus(const json& cfg, const std::string& key) {
  if (cfg.at("data").at(key).get<std::string>().empty()) return std::nullopt;
  return require_corpus(cfg, key);
}

enum class Task { Asr, St };

inline Task parse_task(const std::string& s) {
  if (s == "asr") return Task::Asr;
  if (s == "st") return Task::St;
  throw ConfigError("task must be 'asr' or 'st', got '" + s + "'");
}

// Transcripts lose punctuation; translations keep it.
inline std::string target_text(const corpus::Utterance& u, Task task) {
  if (task == Task::Asr) return text::normalize(u.src_text, true);
  if (u.tgt_text.empty()) throw InvalidArgument("utterance '" + u.id + "' has no translation");
  return text::normalize(u.tgt_text, false);
}

// Shared character vocabulary over transcripts and translations, so ASR and
// ST models over the same data can exchange decoders.
inline text::Vocabulary resolve_vocab(const json& cfg, const std::vector<const corpus::Corpus*>& corpora) {
  const std::string path = cfg.at("data").at("vocab").get<std::string>();
  if (!path.empty()) return text::Vocabulary::load(path);
  std::vector<std::string> lines;
  for (const auto* c : corpora)
    for (const auto& u : *c) {
      lines.push_back(text::normalize(u.src_text, true));
      if (!u.tgt_text.empty()) lines.push_back(text::normalize(u.tgt_text, false));
    }
  return text::build_char_vocab(lines);
}

// ---- features ---------------------------------------------------------------

class FeatureSource {
 public:
  explicit FeatureSource(const json& cfg) {
    const json& f = cfg.at("features");
    kind_ = ssl::parse_feature_kind(f.at("kind").get<std::string>());
    hybrid_ = cfg.at("model").at("encoder").get<std::string>() == "mlm";
    const std::string cpc = f.at("cpc").get<std::string>(), mlm = f.at("mlm").get<std::string>();
    Checker chk;
    const bool needs_cpc = kind_ != audio::FeatureKind::LogMel || hybrid_;
    chk.require(!needs_cpc || !cpc.empty(), "features.cpc is required for this feature kind / encoder");
    chk.require(!(kind_ == audio::FeatureKind::MlmContext || hybrid_) || !mlm.empty(),
                "features.mlm is required for mlm features or the mlm encoder");
    chk.done();
    if (!cpc.empty()) cpc_ = transfer::cpc_from_checkpoint<float>(transfer::load_checkpoint(cpc));
    if (!mlm.empty()) mlm_checkpoint_ = transfer::load_checkpoint(mlm);
    if (mlm_checkpoint_) mlm_ = transfer::mlm_from_checkpoint<float>(*mlm_checkpoint_);
    if ((hybrid_ || kind_ == audio::FeatureKind::MlmContext || kind_ == audio::FeatureKind::VqEmbedding) &&
        !cpc_->quantized())
      throw ConfigError("features.cpc has no codebook; run train-vq first");
  }

  bool hybrid() const { return hybrid_; }
  const transfer::Checkpoint& mlm_checkpoint() const { return *mlm_checkpoint_; }

  std::size_t dim() const {
    switch (kind_) {
      case audio::FeatureKind::LogMel: return audio::LogMelConfig{}.n_mels;
      case audio::FeatureKind::MlmContext: return mlm_->cfg.width;
      default: return cpc_->context_dim();
    }
  }

  Tensor<float> features(corpus::Utterance& u) {
    ssl::SslModels<float> m{cpc_ ? &*cpc_ : nullptr, mlm_ ? &*mlm_ : nullptr};
    return ssl::extract_features(kind_, m, u.waveform()).frames;
  }

  std::vector<long> codes(corpus::Utterance& u) { return ssl::vq_codes(*cpc_, u.waveform()); }

  translator::Example<float> example(corpus::Utterance& u, const text::Vocabulary& vocab, Task task) {
    const std::string t = target_text(u, task);
    if (hybrid_) return translator::make_code_example<float>(u.id, codes(u), vocab, t);
    return translator::make_example(u.id, features(u), vocab, t);
  }

 private:
  audio::FeatureKind kind_;
  bool hybrid_ = false;
  std::optional<ssl::CpcModel<float>> cpc_;
  std::optional<ssl::MlmModel<float>> mlm_;
  std::optional<transfer::Checkpoint> mlm_checkpoint_;
};

// Examples that survive the length filter (frames of the 10 ms fbank grid,
// characters of the normalized target).
inline std::vector<translator::Example<float>> build_examples(corpus::Corpus& c, FeatureSource& fs_, const text::Vocabulary& vocab,
                                                           Task task, const text::FilterLimits& lim, std::size_t* dropped = nullptr) {
  std::vector<translator::Example<float>> out;
  std::size_t drop = 0;
  for (auto& u : c) {
    const text::SampleSize s{audio::num_frames(u.waveform().size()), text::utf8_chars(target_text(u, task)).size()};
    if (!text::keep_sample(s, lim)) {
      ++drop;
      continue;
    }
    out.push_back(fs_.example(u, vocab, task));
  }
  if (dropped) *dropped = drop;
  if (out.empty()) throw InvalidArgument("no utterances left after filtering");
  return out;
}

// ---- stages -----------------------------------------------------------------

inline void run_synth(Workspace& ws) {
  const auto spec = synth_spec(ws.cfg);
  const json& s = ws.cfg.at("data").at("synth");
  const auto n_train = s.at("n_train").get<std::size_t>(), n_test = s.at("n_test").get<std::size_t>();
  const auto seed = s.at("seed").get<std::uint64_t>();
  auto train = corpus::write_synth_corpus(ws.dir, spec, corpus::synth_corpus(spec, n_train, seed));
  corpus::write_manifest(ws.path("train.tsv"), train);
  ws.log("split=train utterances=" + std::to_string(train.size()) + " hours=" + fmt(corpus::corpus_stats(train).hours));
  if (n_test > 0) {
    auto test = corpus::write_synth_corpus(ws.dir, spec, corpus::synth_corpus(spec, n_test, seed, n_train));
    corpus::write_manifest(ws.path("test.tsv"), test);
    ws.log("split=test utterances=" + std::to_string(test.size()) + " hours=" + fmt(corpus::corpus_stats(test).hours));
  }
}

// Normalizes text, applies the length filter (ST targets when present,
// transcripts otherwise) and writes the filtered manifests with a vocabulary.
inline void run_prepare(Workspace& ws) {
  const auto lim = filter_limits(ws.cfg);
  std::vector<corpus::Corpus> kept;
  std::vector<std::string> names;
  for (const std::string key : {"train", "test", "extra_train"}) {
    auto c = key == "train" ? std::optional(require_corpus(ws.cfg, key)) : optional_corpus(ws.cfg, key);
    if (!c) continue;
    corpus::Corpus out;
    std::size_t dropped = 0;
    for (auto& u : *c) {
      corpus::Utterance n = u;
      n.audio_path = fs::absolute(u.resolved_audio()).string();
      n.src_text = text::normalize(u.src_text, true);
      n.tgt_text = text::normalize(u.tgt_text, false);
      const std::string& target = n.tgt_text.empty() ? n.src_text : n.tgt_text;
      const text::SampleSize sz{audio::num_frames(u.waveform().size()), text::utf8_chars(target).size()};
      if (text::keep_sample(sz, lim))
        out.push_back(std::move(n));
      else
        ++dropped;
    }
    corpus::write_manifest(ws.path(key + ".tsv"), out);
    ws.log("split=" + key + " kept=" + std::to_string(out.size()) + " dropped=" + std::to_string(dropped));
    kept.push_back(std::move(out));
    names.push_back(key);
  }
  std::vector<const corpus::Corpus*> ptrs;
  for (const auto& c : kept) ptrs.push_back(&c);
  auto vocab = resolve_vocab(ws.cfg, ptrs);
  vocab.save(ws.path("vocab.txt"));
  ws.log("vocab_size=" + std::to_string(vocab.size()) + " fingerprint=" + vocab.fingerprint());
}

inline std::vector<audio::Waveform> waveforms(corpus::Corpus& c) {
  std::vector<audio::Waveform> out;
  for (auto& u : c) out.push_back(u.waveform());
  return out;
}

inline void run_pretrain_cpc(Workspace& ws) {
  auto train = require_corpus(ws.cfg, "train");
  auto test = optional_corpus(ws.cfg, "test");
  const auto tc = ssl_train_config(ws.cfg);
  ssl::CpcModel<float> model(cpc_config(ws.cfg));
  Rng rng(mix_seed(tc.seed));
  model.init(rng);
  OptimizerState<float> opt;
  const auto t0 = std::chrono::steady_clock::now();
  ssl::train_cpc(model, waveforms(train), tc, opt, [&](std::size_t step, double loss) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ws.log("step=" + std::to_string(step + 1) + " loss=" + fmt(loss) + " lr=" + fmt(tc.schedule.lr(static_cast<long>(step) + 1)) +
           " time=" + fmt(secs, 4));
  });
  if (test) ws.log("eval_loss=" + fmt(ssl::cpc_eval_loss(model, waveforms(*test))));
  transfer::save_checkpoint(ws.path("cpc.ckpt"), transfer::make_checkpoint(model, static_cast<long>(tc.steps), 0));
}

inline void run_train_vq(Workspace& ws) {
  const std::string src = ws.cfg.at("features").at("cpc").get<std::string>();
  if (src.empty()) throw ConfigError("features.cpc is required for train-vq");
  const auto ck = transfer::load_checkpoint(src);
  auto model = transfer::cpc_from_checkpoint<float>(ck);
  auto train = require_corpus(ws.cfg, "train");
  const json& c = ws.cfg.at("ssl").at("cpc");
  Rng rng(mix_seed(ws.cfg.at("training").at("seed").get<std::uint64_t>()));
  auto r = ssl::fit_codebook(model, waveforms(train), c.at("codebook_size").get<std::size_t>(),
                             c.at("kmeans_iters").get<std::size_t>(), rng, c.at("kmeans_vectors").get<std::size_t>());
  for (std::size_t i = 0; i < r.distortion.size(); ++i)
    ws.log("iter=" + std::to_string(i + 1) + " distortion=" + fmt(r.distortion[i]));
  transfer::save_checkpoint(ws.path("cpc.ckpt"), transfer::make_checkpoint(model, ck.meta.step, ck.meta.order + 1));
}

inline std::vector<std::vector<long>> corpus_codes(ssl::CpcModel<float>& cpc, corpus::Corpus& c) {
  std::vector<std::vector<long>> out;
  for (auto& u : c) out.push_back(ssl::vq_codes(cpc, u.waveform()));
  return out;
}

inline void run_pretrain_mlm(Workspace& ws) {
  const std::string src = ws.cfg.at("features").at("cpc").get<std::string>();
  if (src.empty()) throw ConfigError("features.cpc (with a codebook) is required for pretrain-mlm");
  auto cpc = transfer::cpc_from_checkpoint<float>(transfer::load_checkpoint(src));
  if (!cpc.quantized()) throw ConfigError("features.cpc has no codebook; run train-vq first");
  auto train = require_corpus(ws.cfg, "train");
  const auto codes = corpus_codes(cpc, train);
  const auto tc = mlm_train_config(ws.cfg);
  ssl::MlmModel<float> model(mlm_config(ws.cfg, cpc.codebook().dim(0)));
  Rng rng(mix_seed(tc.seed));
  model.init(rng);
  OptimizerState<float> opt;
  const auto t0 = std::chrono::steady_clock::now();
  ssl::train_mlm(model, codes, tc, opt, [&](std::size_t step, double loss) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ws.log("step=" + std::to_string(step + 1) + " loss=" + fmt(loss) + " lr=" + fmt(tc.schedule.lr(static_cast<long>(step) + 1)) +
           " time=" + fmt(secs, 4));
  });
  if (auto test = optional_corpus(ws.cfg, "test")) ws.log("eval_loss=" + fmt(ssl::mlm_eval_loss(model, corpus_codes(cpc, *test))));
  transfer::save_checkpoint(ws.path("mlm.ckpt"), transfer::make_checkpoint(model, static_cast<long>(tc.steps), 0));
}

// Continues the SSL objective on data.train. The source checkpoints are only
// read; tuned copies land in the output directory.
inline void run_finetune_features(Workspace& ws) {
  const std::string kind = ws.cfg.at("features").at("kind").get<std::string>();
  const std::string cpc_path = ws.cfg.at("features").at("cpc").get<std::string>();
  if (cpc_path.empty()) throw ConfigError("features.cpc is required for finetune-features");
  auto train = require_corpus(ws.cfg, "train");
  const auto cpc_ck = transfer::load_checkpoint(cpc_path);
  auto cpc = transfer::cpc_from_checkpoint<float>(cpc_ck);
  auto log_step = [&](std::size_t step, double loss) { ws.log("step=" + std::to_string(step + 1) + " loss=" + fmt(loss)); };
  if (kind == "mlm") {
    const std::string mlm_path = ws.cfg.at("features").at("mlm").get<std::string>();
    if (mlm_path.empty()) throw ConfigError("features.mlm is required to fine-tune mlm features");
    const auto mlm_ck = transfer::load_checkpoint(mlm_path);
    auto mlm = transfer::mlm_from_checkpoint<float>(mlm_ck);
    std::vector<double> losses;
    auto tuned = ssl::finetune_mlm(mlm, cpc, waveforms(train), mlm_train_config(ws.cfg), &losses);
    for (std::size_t i = 0; i < losses.size(); ++i) log_step(i, losses[i]);
    transfer::save_checkpoint(ws.path("mlm.ckpt"),
                              transfer::make_checkpoint(tuned, mlm_ck.meta.step + static_cast<long>(losses.size()),
                                                        mlm_ck.meta.order + 1));
    transfer::save_checkpoint(ws.path("cpc.ckpt"), cpc_ck);
  } else if (kind == "cpc" || kind == "vq") {
    std::vector<double> losses;
    auto tuned = ssl::finetune_cpc(cpc, waveforms(train), ssl_train_config(ws.cfg), &losses);
    for (std::size_t i = 0; i < losses.size(); ++i) log_step(i, losses[i]);
    transfer::save_checkpoint(ws.path("cpc.ckpt"),
                              transfer::make_checkpoint(tuned, cpc_ck.meta.step + static_cast<long>(losses.size()),
                                                        cpc_ck.meta.order + 1));
  } else {
    throw ConfigError("finetune-features needs features.kind cpc, vq or mlm, got '" + kind + "'");
  }
}

inline translator::TrainConfig train_config(const json& cfg, std::size_t steps_per_epoch) {
  const json& t = cfg.at("training");
  translator::TrainConfig tc;
  tc.epochs = t.at("epochs").get<std::size_t>();
  tc.frame_budget = t.at("frame_budget").get<std::size_t>();
  tc.schedule = schedule(cfg, static_cast<long>(tc.epochs * steps_per_epoch));
  tc.clip_norm = t.at("clip_norm").get<double>();
  tc.seed = t.at("seed").get<std::uint64_t>();
  tc.augment = t.at("augment").get<bool>();
  tc.policy = augment_policy(cfg);
  return tc;
}

// Fresh model for the configured encoder, seeded from training.seed.
inline translator::Seq2SeqModel<float> build_model(const json& cfg, FeatureSource& feats, const text::Vocabulary& vocab) {
  Rng rng(mix_seed(cfg.at("training").at("seed").get<std::uint64_t>() ^ 0x5eedULL));
  const bool train_encoder = !cfg.at("model").at("freeze_encoder").get<bool>();
  if (feats.hybrid())
    return transfer::build_hybrid<float>(feats.mlm_checkpoint(), seq2seq_config(cfg, 0, vocab.size()), rng, train_encoder);
  translator::Seq2SeqModel<float> m(seq2seq_config(cfg, feats.dim(), vocab.size()));
  m.init(rng);
  if (!train_encoder)
    for (auto& [name, p] : m.params)
      if (name.starts_with("enc.")) p.trainable = false;
  return m;
}

// Applies the configured transfer (if any) and records the source id.
inline void apply_transfer(Workspace& ws, translator::Seq2SeqModel<float>& model, const text::Vocabulary& vocab) {
  const std::string scope = ws.cfg.at("transfer").at("scope").get<std::string>();
  if (scope == "none") return;
  const std::string src = ws.cfg.at("transfer").at("source").get<std::string>();
  if (src.empty()) throw ConfigError("transfer.source is required when transfer.scope is '" + scope + "'");
  const auto rep = transfer::transfer_parameters(transfer::load_checkpoint(src), model, transfer::parse_scope(scope),
                                                 vocab.fingerprint());
  ws.cfg["transfer"]["source_id"] = file_id(src);
  ws.write_config();
  ws.log("transfer scope=" + scope + " source=" + src + " source_id=" + file_id(src) +
         " tensors=" + std::to_string(rep.copied.size()));
}

inline void run_train(Workspace& ws, Task task) {
  auto train = require_corpus(ws.cfg, "train");
  auto extra = optional_corpus(ws.cfg, "extra_train");
  if (extra && task != Task::Asr) throw ConfigError("data.extra_train (multilingual mixture) applies to train-asr only");
  std::vector<const corpus::Corpus*> all{&train};
  if (extra) all.push_back(&*extra);
  const auto vocab = resolve_vocab(ws.cfg, all);
  vocab.save(ws.path("vocab.txt"));

  FeatureSource feats(ws.cfg);
  const auto lim = filter_limits(ws.cfg);
  std::size_t dropped = 0;
  auto examples = build_examples(train, feats, vocab, task, lim, &dropped);
  if (extra) {
    std::size_t d2 = 0;
    auto more = build_examples(*extra, feats, vocab, task, lim, &d2);
    examples.insert(examples.end(), more.begin(), more.end());
    dropped += d2;
  }
  ws.log("examples=" + std::to_string(examples.size()) + " dropped=" + std::to_string(dropped) +
         " vocab_size=" + std::to_string(vocab.size()));

  auto model = build_model(ws.cfg, feats, vocab);
  apply_transfer(ws, model, vocab);

  std::vector<std::size_t> lengths;
  for (const auto& e : examples) lengths.push_back(e.frames());
  Rng probe(0);
  const auto steps_per_epoch = translator::make_batches(lengths, ws.cfg.at("training").at("frame_budget").get<std::size_t>(), probe).size();
  auto tc = train_config(ws.cfg, steps_per_epoch);
  if (feats.hybrid()) tc.augment = false;

  fs::create_directories(ws.dir / "checkpoints");
  OptimizerState<float> opt;
  std::vector<std::string> saved;
  translator::train(
      model, examples, tc, opt,
      [&](std::size_t epoch, double loss) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoints/epoch-%04zu.ckpt", epoch);
        saved.push_back(ws.path(name));
        transfer::save_checkpoint(saved.back(), transfer::make_checkpoint(model, vocab.fingerprint(), opt.step,
                                                                          static_cast<long>(epoch)));
        ws.log("epoch=" + std::to_string(epoch) + " loss=" + fmt(loss));
        return true;
      },
      [&](const translator::StepRecord& r) {
        ws.log("step=" + std::to_string(r.step) + " loss=" + fmt(r.loss) + " lr=" + fmt(r.lr) + " time=" + fmt(r.seconds, 4));
      });
  transfer::save_checkpoint(ws.path("model.ckpt"), transfer::make_checkpoint(model, vocab.fingerprint(), opt.step,
                                                                             static_cast<long>(tc.epochs)));
  const auto k = ws.cfg.at("decode").at("average").get<std::size_t>();
  if (k > 0 && !saved.empty()) transfer::save_checkpoint(ws.path("averaged.ckpt"), transfer::average_checkpoint_files(saved, k));
}

// Writes a freshly initialized target model with the source's in-scope
// tensors copied in.
inline void run_transfer(Workspace& ws) {
  const std::string scope = ws.cfg.at("transfer").at("scope").get<std::string>();
  if (scope == "none") throw ConfigError("transfer.scope must be 'encoder' or 'encoder+decoder' for the transfer stage");
  auto train = require_corpus(ws.cfg, "train");
  const auto vocab = resolve_vocab(ws.cfg, {&train});
  vocab.save(ws.path("vocab.txt"));
  FeatureSource feats(ws.cfg);
  auto model = build_model(ws.cfg, feats, vocab);
  apply_transfer(ws, model, vocab);
  transfer::save_checkpoint(ws.path("model.ckpt"), transfer::make_checkpoint(model, vocab.fingerprint(), 0, 0));
}

inline std::vector<std::string> checkpoints_in(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ckpt") out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no .ckpt files in '" + dir.string() + "'");
  return out;
}

inline void run_average(Workspace& ws, std::vector<std::string> inputs) {
  if (inputs.empty()) {
    const std::string c = ws.cfg.at("decode").at("checkpoint").get<std::string>();
    if (c.empty()) throw ConfigError("average needs checkpoint files or decode.checkpoint naming a directory");
    inputs = fs::is_directory(c) ? checkpoints_in(c) : std::vector<std::string>{c};
  }
  const auto k = ws.cfg.at("decode").at("average").get<std::size_t>();
  auto avg = transfer::average_checkpoint_files(inputs, k);
  transfer::save_checkpoint(ws.path("averaged.ckpt"), avg);
  ws.log("inputs=" + std::to_string(inputs.size()) + " k=" + std::to_string(k) + " step=" + std::to_string(avg.meta.step));
}

// A directory means "average its last decode.average checkpoints".
inline transfer::Checkpoint resolve_model_checkpoint(const json& cfg) {
  const std::string c = cfg.at("decode").at("checkpoint").get<std::string>();
  if (c.empty()) throw ConfigError("decode.checkpoint is required for decode");
  if (!fs::is_directory(c)) return transfer::load_checkpoint(c);
  const auto k = cfg.at("decode").at("average").get<std::size_t>();
  return transfer::average_checkpoint_files(checkpoints_in(c), std::max<std::size_t>(k, 1));
}

inline void run_decode(Workspace& ws, std::size_t threads) {
  const auto ck = resolve_model_checkpoint(ws.cfg);
  auto model = transfer::seq2seq_from_checkpoint<float>(ck);
  auto test = require_corpus(ws.cfg, "test");
  const std::string vpath = ws.cfg.at("data").at("vocab").get<std::string>();
  if (vpath.empty()) throw ConfigError("data.vocab is required for decode (the vocab.txt written by training)");
  const auto vocab = text::Vocabulary::load(vpath);
  if (vocab.fingerprint() != ck.meta.vocab_fingerprint)
    throw transfer::CheckpointMismatchError("data.vocab does not match the checkpoint's vocabulary fingerprint");
  const Task task = parse_task(ws.cfg.at("decode").at("task").get<std::string>());
  FeatureSource feats(ws.cfg);
  if (feats.hybrid() != (model.kind == translator::EncoderKind::MaskedLm))
    throw ConfigError("model.encoder does not match the checkpoint's encoder");
  std::sort(test.begin(), test.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::vector<translator::Example<float>> examples;
  std::vector<std::string> refs;
  for (auto& u : test) {
    examples.push_back(feats.example(u, vocab, task));
    refs.push_back(target_text(u, task));
  }
  const auto beam = beam_config(ws.cfg);
  std::vector<std::vector<long>> hyps(examples.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, examples.size()));
  const std::size_t per = (examples.size() + workers - 1) / workers;
  std::vector<std::future<void>> jobs;
  for (std::size_t w = 0; w < workers; ++w) {
    jobs.push_back(std::async(workers == 1 ? std::launch::deferred : std::launch::async, [&, w] {
      auto local = model;
      const std::size_t lo = w * per, hi = std::min(examples.size(), lo + per);
      if (lo >= hi) return;
      std::vector<translator::Example<float>> part(examples.begin() + static_cast<long>(lo),
                                                   examples.begin() + static_cast<long>(hi));
      auto out = translator::translate(local, part, beam);
      for (std::size_t i = 0; i < out.size(); ++i) hyps[lo + i] = std::move(out[i]);
    }));
  }
  for (auto& j : jobs) j.get();
  std::ofstream os(ws.path("decode.tsv"));
  if (!os) throw IoError("cannot write decode output");
  os << "id\thypothesis\treference\n";
  for (std::size_t i = 0; i < examples.size(); ++i) os << examples[i].id << '\t' << vocab.decode(hyps[i]) << '\t' << refs[i] << '\n';
  ws.log("decoded=" + std::to_string(examples.size()) + " beam=" + std::to_string(beam.beam));
}

struct DecodeTable {
  std::vector<std::string> ids, hyps, refs;
};

inline DecodeTable read_decode_table(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read decode output '" + path + "'");
  DecodeTable t;
  std::string line;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    ++row;
    if (row == 1 && line.starts_with("id\t")) continue;
    if (line.empty()) continue;
    auto cols = corpus::detail::split_tabs(line);
    if (cols.size() != 3)
      throw InvalidArgument(path + ":" + std::to_string(row) + ": expected 3 tab-separated columns, got " +
                            std::to_string(cols.size()));
    t.ids.push_back(cols[0]);
    t.hyps.push_back(cols[1]);
    t.refs.push_back(cols[2]);
  }
  if (t.ids.empty()) throw InvalidArgument("decode output '" + path + "' has no rows");
  return t;
}

// BLEU is reported on the 0-100 scale; WER as a percentage.
inline std::string score_report(const DecodeTable& t, const std::string& metric) {
  if (metric == "bleu") return decode::format_metric("BLEU", decode::bleu(t.refs, t.hyps));
  if (metric == "wer") return decode::format_metric("WER", 100.0 * decode::corpus_wer(t.refs, t.hyps));
  throw ConfigError("decode.metric must be 'bleu' or 'wer', got '" + metric + "'");
}

inline std::string run_score(Workspace& ws, std::string input) {
  if (input.empty()) input = ws.path("decode.tsv");
  const std::string report = score_report(read_decode_table(input), ws.cfg.at("decode").at("metric").get<std::string>());
  std::ofstream os(ws.path("score.txt"));
  os << report << '\n';
  ws.log(report);
  return report;
}

inline std::string describe(const transfer::Checkpoint& c) {
  std::ostringstream os;
  os << "kind: " << c.meta.kind << "\nstep: " << c.meta.step << "\norder: " << c.meta.order
     << "\nvocab_fingerprint: " << c.meta.vocab_fingerprint << "\narch: " << c.meta.arch.dump() << "\ntensors:\n";
  std::size_t total = 0;
  for (const auto& [name, st] : c.tensors) {
    os << "  " << name << ' ' << (st.dtype == transfer::Dtype::F32 ? "f32" : "f64") << ' ' << shape_str(st.value.shape)
       << '\n';
    total += st.value.size();
  }
  os << "scalars: " << total << '\n';
  return os.str();
}

}  // namespace sslst::cli
