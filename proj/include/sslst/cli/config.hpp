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

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sslst/audio/specaugment.hpp"
#include "sslst/corpus/synth.hpp"
#include "sslst/decode/beam.hpp"
#include "sslst/ssl/cpc.hpp"
#include "sslst/ssl/mlm.hpp"
#include "sslst/text/filter.hpp"
#include "sslst/translator/seq2seq.hpp"
#include "sslst/translator/train.hpp"

namespace sslst::cli {

using nlohmann::json;

SSLST_DEFINE_ERROR(ConfigError, Error, "config");

inline constexpr int kConfigVersion = 1;

// Every accepted key with its default. Anything else in a user config is an
// error; types must match the default's JSON type (integer settings accept
// only non-negative integers, reals accept any number).
inline json default_config() {
  const corpus::SynthSpec synth;
  const ssl::CpcConfig cpc;
  const ssl::MlmConfig mlm;
  const translator::Seq2SeqConfig s2s;
  const audio::AugmentPolicy aug;
  const text::FilterLimits lim;
  return json{
      {"version", kConfigVersion},
      {"output", "out"},
      {"data",
       {{"train", ""},
        {"test", ""},
        {"extra_train", ""},
        {"vocab", ""},
        {"synth",
         {{"n_train", 2000},
          {"n_test", 200},
          {"seed", 1},
          {"alphabet", synth.alphabet},
          {"tone_samples", synth.tone_samples},
          {"base_hz", synth.base_hz},
          {"step_hz", synth.step_hz},
          {"freq_offset_hz", synth.freq_offset_hz},
          {"amplitude", synth.amplitude},
          {"noise", synth.noise},
          {"min_len", synth.min_len},
          {"max_len", synth.max_len},
          {"bijection_mult", synth.bijection_mult},
          {"bijection_add", synth.bijection_add},
          {"src_lang", synth.src_lang},
          {"tgt_lang", synth.tgt_lang}}},
        {"filter",
         {{"min_frames", lim.min_frames},
          {"max_frames", lim.max_frames},
          {"min_chars", lim.min_chars},
          {"max_chars", lim.max_chars}}}}},
      {"features", {{"kind", "fbank"}, {"cpc", ""}, {"mlm", ""}}},
      {"ssl",
       {{"cpc",
         {{"kernels", cpc.kernels},
          {"strides", cpc.strides},
          {"channels", cpc.channels},
          {"agg_layers", cpc.agg_layers},
          {"agg_kernel", cpc.agg_kernel},
          {"steps_ahead", cpc.steps_ahead},
          {"negatives", cpc.negatives},
          {"codebook_size", 64},
          {"kmeans_iters", 20},
          {"kmeans_vectors", 20000}}},
        {"mlm",
         {{"width", mlm.width},
          {"blocks", mlm.blocks},
          {"heads", mlm.heads},
          {"ffn", mlm.ffn},
          {"max_len", mlm.max_len},
          {"mask_prob", mlm.mask_prob},
          {"mask_span", mlm.mask_span},
          {"embed_std", mlm.embed_std}}}}},
      {"model",
       {{"encoder", "recurrent"},
        {"freeze_encoder", false},
        {"input_width", s2s.input_width},
        {"conv_channels", s2s.conv_channels},
        {"enc_layers", s2s.enc_layers},
        {"enc_hidden", s2s.enc_hidden},
        {"dec_layers", s2s.dec_layers},
        {"dec_hidden", s2s.dec_hidden},
        {"embed_dim", s2s.embed_dim},
        {"attention_dim", s2s.attention_dim}}},
      {"training",
       {{"seed", 1},
        {"epochs", 50},
        {"frame_budget", 8000},
        {"schedule", "fixed"},
        {"lr", 1e-3},
        {"warmup", 0},
        {"end_lr", 0.0},
        {"clip_norm", 5.0},
        {"augment", true},
        {"augment_policy",
         {{"time_masks", aug.time_masks},
          {"time_width", aug.time_width},
          {"freq_masks", aug.freq_masks},
          {"freq_width", aug.freq_width}}},
        {"steps", 2000},
        {"batch", 8},
        {"crop_samples", 4800},
        {"crop_tokens", 100}}},
      {"transfer", {{"scope", "none"}, {"source", ""}, {"source_id", ""}}},
      {"decode",
       {{"checkpoint", ""}, {"average", 5}, {"beam", 5}, {"max_len", 200}, {"task", "st"}, {"metric", "bleu"}}}};
}

namespace detail {

inline const char* type_name(const json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

inline bool compatible(const json& def, const json& v) {
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_number_integer()) return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
  if (def.is_number()) return v.is_number();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) {
    if (!v.is_array()) return false;
    for (const auto& e : v)
      if (!e.is_number_integer()) return false;
    return true;
  }
  return def.is_object() && v.is_object();
}

inline void merge(json& base, const json& user, const std::string& path, std::vector<std::string>& errors) {
  for (const auto& [key, value] : user.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) {
      errors.push_back("unknown key '" + here + "'");
      continue;
    }
    json& slot = base[key];
    if (!compatible(slot, value)) {
      errors.push_back("'" + here + "' must be " + (slot.is_number_integer() ? std::string("a non-negative integer") : type_name(slot)) +
                       ", got " + (value.is_number_integer() ? value.dump() : type_name(value)));
      continue;
    }
    if (slot.is_object())
      merge(slot, value, here, errors);
    else
      slot = value;
  }
}

}  // namespace detail

// Defaults overlaid with `user`; every unknown key and type error is
// reported in one ConfigError.
inline json resolve_config(const json& user) {
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  json cfg = default_config();
  std::vector<std::string> errors;
  detail::merge(cfg, user, "", errors);
  if (cfg["version"] != kConfigVersion)
    errors.push_back("unsupported config version " + cfg["version"].dump() + " (expected " +
                     std::to_string(kConfigVersion) + ")");
  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " config error(s):";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

inline json load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return resolve_config(json::parse(ss.str()));
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

// Semantic checks that need more than one field; collects every violation.
class Checker {
 public:
  void require(bool ok, const std::string& msg) {
    if (!ok) errors_.push_back(msg);
  }
  void done() const {
    if (errors_.empty()) return;
    std::string msg = std::to_string(errors_.size()) + " config error(s):";
    for (const auto& e : errors_) msg += "\n  " + e;
    throw ConfigError(msg);
  }

 private:
  std::vector<std::string> errors_;
};

// ---- typed views ------------------------------------------------------------

inline corpus::SynthSpec synth_spec(const json& c) {
  const json& s = c.at("data").at("synth");
  corpus::SynthSpec spec;
  spec.alphabet = s.at("alphabet").get<int>();
  spec.tone_samples = s.at("tone_samples").get<std::size_t>();
  spec.base_hz = s.at("base_hz").get<double>();
  spec.step_hz = s.at("step_hz").get<double>();
  spec.freq_offset_hz = s.at("freq_offset_hz").get<double>();
  spec.amplitude = s.at("amplitude").get<double>();
  spec.noise = s.at("noise").get<double>();
  spec.min_len = s.at("min_len").get<std::size_t>();
  spec.max_len = s.at("max_len").get<std::size_t>();
  spec.bijection_mult = s.at("bijection_mult").get<int>();
  spec.bijection_add = s.at("bijection_add").get<int>();
  spec.src_lang = s.at("src_lang").get<std::string>();
  spec.tgt_lang = s.at("tgt_lang").get<std::string>();
  return spec;
}

inline text::FilterLimits filter_limits(const json& c) {
  const json& f = c.at("data").at("filter");
  return {f.at("min_frames").get<std::size_t>(), f.at("max_frames").get<std::size_t>(),
          f.at("min_chars").get<std::size_t>(), f.at("max_chars").get<std::size_t>()};
}

inline ssl::CpcConfig cpc_config(const json& c) {
  const json& s = c.at("ssl").at("cpc");
  ssl::CpcConfig cfg;
  cfg.kernels = s.at("kernels").get<std::vector<long>>();
  cfg.strides = s.at("strides").get<std::vector<long>>();
  cfg.channels = s.at("channels").get<std::size_t>();
  cfg.agg_layers = s.at("agg_layers").get<std::size_t>();
  cfg.agg_kernel = s.at("agg_kernel").get<long>();
  cfg.steps_ahead = s.at("steps_ahead").get<std::size_t>();
  cfg.negatives = s.at("negatives").get<std::size_t>();
  return cfg;
}

inline ssl::MlmConfig mlm_config(const json& c, std::size_t codes) {
  const json& s = c.at("ssl").at("mlm");
  ssl::MlmConfig cfg;
  cfg.codes = codes;
  cfg.width = s.at("width").get<std::size_t>();
  cfg.blocks = s.at("blocks").get<std::size_t>();
  cfg.heads = s.at("heads").get<std::size_t>();
  cfg.ffn = s.at("ffn").get<std::size_t>();
  cfg.max_len = s.at("max_len").get<std::size_t>();
  cfg.mask_prob = s.at("mask_prob").get<double>();
  cfg.mask_span = s.at("mask_span").get<std::size_t>();
  cfg.embed_std = s.at("embed_std").get<double>();
  return cfg;
}

inline translator::Seq2SeqConfig seq2seq_config(const json& c, std::size_t input_dim, std::size_t vocab_size) {
  const json& m = c.at("model");
  translator::Seq2SeqConfig cfg;
  cfg.input_dim = input_dim;
  cfg.vocab_size = vocab_size;
  cfg.input_width = m.at("input_width").get<std::size_t>();
  cfg.conv_channels = m.at("conv_channels").get<std::size_t>();
  cfg.enc_layers = m.at("enc_layers").get<std::size_t>();
  cfg.enc_hidden = m.at("enc_hidden").get<std::size_t>();
  cfg.dec_layers = m.at("dec_layers").get<std::size_t>();
  cfg.dec_hidden = m.at("dec_hidden").get<std::size_t>();
  cfg.embed_dim = m.at("embed_dim").get<std::size_t>();
  cfg.attention_dim = m.at("attention_dim").get<std::size_t>();
  return cfg;
}

inline Schedule schedule(const json& c, long total_steps) {
  const json& t = c.at("training");
  const std::string kind = t.at("schedule").get<std::string>();
  const double lr = t.at("lr").get<double>();
  if (kind == "fixed") return Schedule::fixed(lr);
  if (kind == "polynomial")
    return Schedule::polynomial(lr, t.at("warmup").get<long>(), std::max(total_steps, 1L), t.at("end_lr").get<double>());
  throw ConfigError("training.schedule must be 'fixed' or 'polynomial', got '" + kind + "'");
}

inline audio::AugmentPolicy augment_policy(const json& c) {
  const json& a = c.at("training").at("augment_policy");
  audio::AugmentPolicy p;
  p.time_masks = a.at("time_masks").get<std::size_t>();
  p.time_width = a.at("time_width").get<std::size_t>();
  p.freq_masks = a.at("freq_masks").get<std::size_t>();
  p.freq_width = a.at("freq_width").get<std::size_t>();
  return p;
}

inline ssl::SslTrainConfig ssl_train_config(const json& c) {
  const json& t = c.at("training");
  ssl::SslTrainConfig tc;
  tc.steps = t.at("steps").get<std::size_t>();
  tc.batch = t.at("batch").get<std::size_t>();
  tc.crop_samples = t.at("crop_samples").get<std::size_t>();
  tc.schedule = schedule(c, static_cast<long>(tc.steps));
  tc.clip_norm = t.at("clip_norm").get<double>();
  tc.seed = t.at("seed").get<std::uint64_t>();
  return tc;
}

inline ssl::MlmTrainConfig mlm_train_config(const json& c) {
  const json& t = c.at("training");
  ssl::MlmTrainConfig tc;
  tc.steps = t.at("steps").get<std::size_t>();
  tc.batch = t.at("batch").get<std::size_t>();
  tc.crop_tokens = t.at("crop_tokens").get<std::size_t>();
  tc.schedule = schedule(c, static_cast<long>(tc.steps));
  tc.clip_norm = t.at("clip_norm").get<double>();
  tc.seed = t.at("seed").get<std::uint64_t>();
  return tc;
}

inline decode::BeamConfig beam_config(const json& c) {
  decode::BeamConfig b;
  b.beam = c.at("decode").at("beam").get<std::size_t>();
  b.max_len = c.at("decode").at("max_len").get<std::size_t>();
  return b;
}

}  // namespace sslst::cli
