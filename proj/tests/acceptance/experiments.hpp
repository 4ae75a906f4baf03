// Small end-to-end experiments on the synthetic corpus, shared by the
// acceptance criteria that compare training regimes.
#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "sslst/audio/features.hpp"
#include "sslst/corpus/synth.hpp"
#include "sslst/decode/metrics.hpp"
#include "sslst/ssl/extract.hpp"
#include "sslst/text/vocab.hpp"
#include "sslst/transfer/transfer.hpp"
#include "sslst/translator/data.hpp"
#include "sslst/translator/search.hpp"
#include "sslst/translator/train.hpp"

namespace sslst::acceptance {

using translator::Example;

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Desk-scale recurrent model for utterances of 30..100 frames.
inline translator::Seq2SeqConfig desk_model(std::size_t input_dim, std::size_t vocab) {
  translator::Seq2SeqConfig c;
  c.input_dim = input_dim;
  c.input_width = 64;
  c.enc_layers = 2;
  c.enc_hidden = 64;
  c.dec_hidden = 128;
  c.embed_dim = 64;
  c.attention_dim = 64;
  c.vocab_size = vocab;
  return c;
}

inline translator::TrainConfig desk_training(std::size_t epochs, std::uint64_t seed) {
  translator::TrainConfig tc;
  tc.epochs = epochs;
  tc.frame_budget = 600;
  tc.schedule = Schedule::fixed(1e-3);
  tc.augment = false;
  tc.seed = seed;
  return tc;
}

// Shared vocabulary over both text sides of every utterance that may appear,
// so encoder+decoder transfer keeps the output layer meaningful.
inline text::Vocabulary synth_vocab(const std::vector<const std::vector<corpus::SynthUtterance>*>& sets) {
  std::vector<std::string> texts;
  for (const auto* s : sets)
    for (const auto& u : *s) {
      texts.push_back(u.transcript);
      texts.push_back(u.translation);
    }
  return text::build_char_vocab(texts);
}

enum class Side { Transcript, Translation };

using Featurizer = std::function<Tensor<float>(const audio::Waveform&)>;

inline Featurizer fbank_features() {
  return [](const audio::Waveform& w) { return audio::logmel<float>(w).frames; };
}

inline Featurizer cpc_features(ssl::CpcModel<float>& cpc) {
  return [&cpc](const audio::Waveform& w) {
    return ssl::extract_features(audio::FeatureKind::CpcContext, ssl::SslModels<float>{&cpc, nullptr}, w).frames;
  };
}

struct Split {
  std::vector<Example<float>> examples;
  std::vector<std::string> references;
};

inline Split make_split(const std::vector<corpus::SynthUtterance>& utts, const Featurizer& feat,
                        const text::Vocabulary& vocab, Side side) {
  Split s;
  for (const auto& u : utts) {
    const std::string& t = side == Side::Transcript ? u.transcript : u.translation;
    s.examples.push_back(translator::make_example(u.id, feat(u.audio), vocab, t));
    s.references.push_back(t);
  }
  return s;
}

inline double greedy_bleu(translator::Seq2SeqModel<float>& m, const Split& test, const text::Vocabulary& vocab) {
  return translator::evaluate(m, test.examples, test.references, vocab, decode::BeamConfig{1, 40, 1, 2}).bleu;
}

struct Curve {
  std::vector<double> bleu;  // greedy test BLEU after each epoch
  double averaged_bleu = 0;  // beam-5 BLEU of the last-5 checkpoint average
  double seconds = 0;

  // First epoch (1-based) reaching `target`, or epochs + 1 if never.
  std::size_t epochs_to(double target) const {
    for (std::size_t i = 0; i < bleu.size(); ++i)
      if (bleu[i] >= target) return i + 1;
    return bleu.size() + 1;
  }
};

// Trains `m` for tc.epochs, scoring the test split greedily after every
// epoch; the returned model is the average of the last five epochs, which is
// also scored with a beam of 5.
inline Curve train_curve(translator::Seq2SeqModel<float>& m, const Split& train, const Split& test,
                         const text::Vocabulary& vocab, const translator::TrainConfig& tc) {
  Curve c;
  const auto t0 = std::chrono::steady_clock::now();
  OptimizerState<float> opt;
  std::vector<transfer::Checkpoint> recent;
  translator::train(m, train.examples, tc, opt, [&](std::size_t epoch, double) {
    c.bleu.push_back(greedy_bleu(m, test, vocab));
    recent.push_back(transfer::make_checkpoint(m, vocab.fingerprint(), opt.step, static_cast<long>(epoch)));
    if (recent.size() > 5) recent.erase(recent.begin());
    return true;
  });
  transfer::average_checkpoints(recent, 5).load_into(m.params);
  c.averaged_bleu =
      translator::evaluate(m, test.examples, test.references, vocab, decode::BeamConfig{5, 40, 1, 2}).bleu;
  c.seconds = seconds_since(t0);
  return c;
}

inline translator::Seq2SeqModel<float> fresh_model(const translator::Seq2SeqConfig& cfg, std::uint64_t seed) {
  translator::Seq2SeqModel<float> m(cfg);
  Rng rng(mix_seed(seed ^ 0x5eed));
  m.init(rng);
  return m;
}

// Trains an ASR model for a fixed number of epochs and returns its final
// checkpoint.
inline transfer::Checkpoint pretrain_asr(const translator::Seq2SeqConfig& cfg, const Split& train,
                                         const text::Vocabulary& vocab, std::size_t epochs, std::uint64_t seed) {
  auto m = fresh_model(cfg, seed);
  OptimizerState<float> opt;
  translator::train(m, train.examples, desk_training(epochs, seed), opt);
  return transfer::make_checkpoint(m, vocab.fingerprint(), opt.step, 0);
}

inline translator::Seq2SeqModel<float> transferred(const translator::Seq2SeqConfig& cfg, const transfer::Checkpoint& src,
                                                   transfer::TransferScope scope, const text::Vocabulary& vocab,
                                                   std::uint64_t seed) {
  auto m = fresh_model(cfg, seed);
  transfer::transfer_parameters(src, m, scope, vocab.fingerprint());
  return m;
}

inline std::vector<audio::Waveform> waves(const std::vector<corpus::SynthUtterance>& utts) {
  std::vector<audio::Waveform> out;
  for (const auto& u : utts) out.push_back(u.audio);
  return out;
}

}  // namespace sslst::acceptance
