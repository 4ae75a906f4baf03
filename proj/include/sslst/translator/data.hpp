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

#include <string>
#include <vector>

#include "sslst/decode/metrics.hpp"
#include "sslst/text/vocab.hpp"
#include "sslst/translator/search.hpp"

namespace sslst::translator {

SSLST_DEFINE_ERROR(VocabularyMismatchError, Error, "vocabulary");

// Encode `text` with no tolerance for out-of-vocabulary symbols.
inline std::vector<long> encode_strict(const text::Vocabulary& vocab, const std::string& text, const std::string& id) {
  auto ids = vocab.encode(text);
  for (long t : ids)
    if (t == text::kUnk)
      throw VocabularyMismatchError("utterance '" + id + "': text \"" + text + "\" has symbols outside the target vocabulary");
  return ids;
}

template <typename T>
Example<T> make_example(std::string id, Tensor<T> features, const text::Vocabulary& vocab, const std::string& text) {
  if (features.rank() != 2) throw InvalidArgument("make_example: features must be [frames, dim]");
  Example<T> e;
  e.target = encode_strict(vocab, text, id);
  e.id = std::move(id);
  e.features = std::move(features);
  return e;
}

template <typename T>
Example<T> make_code_example(std::string id, std::vector<long> codes, const text::Vocabulary& vocab,
                             const std::string& text) {
  if (codes.empty()) throw InvalidArgument("make_code_example: empty code sequence");
  Example<T> e;
  e.target = encode_strict(vocab, text, id);
  e.id = std::move(id);
  e.codes = std::move(codes);
  return e;
}

struct Evaluation {
  std::vector<std::string> hypotheses;
  double bleu = 0;
  double wer = 0;
};

// Decode `examples` and score against `references` (same order).
template <typename T>
Evaluation evaluate(Seq2SeqModel<T>& model, const std::vector<Example<T>>& examples,
                    const std::vector<std::string>& references, const text::Vocabulary& vocab,
                    const decode::BeamConfig& cfg) {
  if (examples.size() != references.size()) throw InvalidArgument("evaluate: examples and references differ in count");
  Evaluation ev;
  for (const auto& toks : translate(model, examples, cfg)) ev.hypotheses.push_back(vocab.decode(toks));
  ev.bleu = decode::bleu(references, ev.hypotheses);
  ev.wer = decode::corpus_wer(references, ev.hypotheses);
  return ev;
}

}  // namespace sslst::translator
