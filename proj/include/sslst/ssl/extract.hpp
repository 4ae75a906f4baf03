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

#include "sslst/audio/features.hpp"
#include "sslst/ssl/cpc.hpp"
#include "sslst/ssl/kmeans.hpp"
#include "sslst/ssl/mlm.hpp"

namespace sslst::ssl {

inline audio::FeatureKind parse_feature_kind(const std::string& s) {
  if (s == "fbank") return audio::FeatureKind::LogMel;
  if (s == "cpc") return audio::FeatureKind::CpcContext;
  if (s == "vq") return audio::FeatureKind::VqEmbedding;
  if (s == "mlm") return audio::FeatureKind::MlmContext;
  throw InvalidArgument("unknown feature kind '" + s + "' (expected fbank, cpc, vq or mlm)");
}

// Frozen models used by extract_features. `cpc` must carry a codebook for
// the vq and mlm kinds.
template <typename T>
struct SslModels {
  CpcModel<T>* cpc = nullptr;
  MlmModel<T>* mlm = nullptr;
};

template <typename T>
std::vector<long> vq_codes(CpcModel<T>& cpc, const audio::Waveform& w) {
  if (!cpc.quantized()) throw InvalidArgument("vq codes need a CPC model with a codebook");
  Graph<T> g;
  NodeId z = cpc.encode(g, g.input("wav", waveform_batch<T>({&w.samples}, w.size())));
  return g.quantize_tokens(g.quantize(z, cpc.codebook()));
}

template <typename T>
audio::FeatureSequence<T> extract_features(audio::FeatureKind kind, const SslModels<T>& models, const audio::Waveform& w) {
  using audio::FeatureKind;
  audio::FeatureSequence<T> out;
  out.kind = kind;
  if (kind == FeatureKind::LogMel) return audio::logmel<T>(w);
  if (!models.cpc) throw InvalidArgument(std::string("feature kind '") + audio::feature_kind_name(kind) + "' needs a CPC model");
  CpcModel<T>& cpc = *models.cpc;
  out.hop_ms = 1000.0 * static_cast<double>(cpc.cfg.hop()) / audio::kSampleRate;
  Graph<T> g;
  if (kind == FeatureKind::CpcContext) {
    NodeId z = cpc.encode(g, g.input("wav", waveform_batch<T>({&w.samples}, w.size())));
    out.frames = g.value(cpc.aggregate(g, z));
  } else if (kind == FeatureKind::VqEmbedding) {
    if (!cpc.quantized()) throw InvalidArgument("feature kind 'vq' needs a CPC model with a codebook");
    NodeId z = cpc.encode(g, g.input("wav", waveform_batch<T>({&w.samples}, w.size())));
    out.frames = g.value(cpc.aggregate(g, g.quantize(z, cpc.codebook())));
  } else {
    if (!models.mlm) throw InvalidArgument("feature kind 'mlm' needs a masked-LM model");
    out.frames = g.value(models.mlm->hidden(g, {vq_codes(cpc, w)}));
  }
  const std::size_t Tn = out.frames.dim(1), D = out.frames.dim(2);
  out.frames.shape = {Tn, D};
  return out;
}

// Fit a k-means codebook on encoder latents (at most `max_vectors` frames,
// taken in corpus order) and attach it to the model.
template <typename T>
KMeansResult fit_codebook(CpcModel<T>& model, const std::vector<audio::Waveform>& corpus, std::size_t V,
                          std::size_t iters, Rng& rng, std::size_t max_vectors = 20000) {
  std::vector<double> rows;
  const std::size_t D = model.latent_dim();
  for (const auto& w : corpus) {
    if (rows.size() >= max_vectors * D) break;
    Graph<T> g;
    const auto& z = g.value(model.encode(g, g.input("wav", waveform_batch<T>({&w.samples}, w.size()))));
    rows.insert(rows.end(), z.data.begin(), z.data.end());
  }
  rows.resize(std::min(rows.size(), max_vectors * D));
  const std::size_t N = rows.size() / D;
  auto r = kmeans_train(Tensor<double>({N, D}, std::move(rows)), V, iters, rng);
  model.set_codebook(r.centroids.template cast<T>());
  return r;
}

// Continue the contrastive objective on new audio; the input model is left
// untouched and the tuned copy is returned.
template <typename T>
CpcModel<T> finetune_cpc(const CpcModel<T>& model, const std::vector<audio::Waveform>& corpus, const SslTrainConfig& tc,
                         std::vector<double>* losses = nullptr) {
  if (corpus.empty()) throw InvalidArgument("finetune: empty corpus");
  CpcModel<T> tuned = model;
  OptimizerState<T> opt;
  auto l = train_cpc(tuned, corpus, tc, opt);
  if (losses) *losses = std::move(l);
  return tuned;
}

// Continue masked prediction on codes re-quantized from new audio.
template <typename T>
MlmModel<T> finetune_mlm(const MlmModel<T>& model, CpcModel<T>& vq, const std::vector<audio::Waveform>& corpus,
                         const MlmTrainConfig& tc, std::vector<double>* losses = nullptr) {
  if (corpus.empty()) throw InvalidArgument("finetune: empty corpus");
  std::vector<std::vector<long>> codes;
  for (const auto& w : corpus) codes.push_back(vq_codes(vq, w));
  MlmModel<T> tuned = model;
  OptimizerState<T> opt;
  auto l = train_mlm(tuned, codes, tc, opt);
  if (losses) *losses = std::move(l);
  return tuned;
}

}  // namespace sslst::ssl
