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

// sslst: one subcommand per pipeline stage, driven by a JSON config.

#include <Eigen/Core>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "sslst/cli/pipeline.hpp"

using namespace sslst;

namespace {

// Error categories share a prefix per family ("checkpoint-magic", ...).
int exit_status(const std::string& category) {
  static const std::vector<std::pair<std::string, int>> codes{
      {"config", 2},     {"io", 3},         {"checkpoint", 4}, {"invalid-argument", 5}, {"training", 6},
      {"vocabulary", 7}, {"text", 7},       {"manifest", 8},   {"wav", 8}};
  for (const auto& [prefix, code] : codes)
    if (category.starts_with(prefix)) return code;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  Eigen::setNbThreads(1);
  CLI::App app{"sslst: self-supervised speech representations for speech translation"};
  app.require_subcommand(1);
  std::string config_path, out;
  long seed = -1;
  std::size_t threads = 1;
  app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "override training.seed (and data.synth.seed for synth)")->check(CLI::NonNegativeNumber);
  app.add_option("--out", out, "override the output directory");
  app.add_option("--threads", threads, "decode workers; 1 is the deterministic mode")->check(CLI::PositiveNumber);

  const std::vector<std::pair<std::string, std::string>> stages{
      {"synth", "write a synthetic tone corpus (train.tsv, test.tsv, wav/)"},
      {"prepare", "normalize, filter and build the vocabulary"},
      {"pretrain-cpc", "train the contrastive model on data.train audio"},
      {"train-vq", "fit the k-means codebook onto features.cpc"},
      {"pretrain-mlm", "train the masked-code model on quantized data.train"},
      {"finetune-features", "continue SSL training of the feature models on data.train"},
      {"train-asr", "train a speech recognizer (plus data.extra_train for a multilingual mixture)"},
      {"train-st", "train a speech translator, optionally warm-started by transfer"},
      {"transfer", "initialize a model from transfer.source and save it"},
      {"average", "average the last decode.average checkpoints"},
      {"decode", "beam-search data.test with decode.checkpoint"},
      {"score", "score a decode.tsv (BLEU or WER)"},
      {"inspect", "print a checkpoint's descriptor"}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : stages) subs[name] = app.add_subcommand(name, help);
  std::vector<std::string> average_inputs;
  subs["average"]->add_option("checkpoints", average_inputs, "checkpoint files (default: decode.checkpoint)");
  std::string score_input, metric;
  subs["score"]->add_option("--input", score_input, "decode output (default: <out>/decode.tsv)");
  subs["score"]->add_option("--metric", metric, "bleu or wer (default: decode.metric)");
  std::string inspect_path;
  subs["inspect"]->add_option("checkpoint", inspect_path, "checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const std::string stage = app.get_subcommands().front()->get_name();
    if (stage == "inspect") {
      std::cout << cli::describe(transfer::load_checkpoint(inspect_path));
      return 0;
    }
    cli::json cfg = config_path.empty() ? cli::resolve_config(cli::json::object()) : cli::load_config(config_path);
    if (seed >= 0) {
      cfg["training"]["seed"] = seed;
      cfg["data"]["synth"]["seed"] = seed;
    }
    if (!out.empty()) cfg["output"] = out;
    if (!metric.empty()) cfg["decode"]["metric"] = metric;
    cli::Workspace ws(cfg, stage);

    if (stage == "synth") cli::run_synth(ws);
    else if (stage == "prepare") cli::run_prepare(ws);
    else if (stage == "pretrain-cpc") cli::run_pretrain_cpc(ws);
    else if (stage == "train-vq") cli::run_train_vq(ws);
    else if (stage == "pretrain-mlm") cli::run_pretrain_mlm(ws);
    else if (stage == "finetune-features") cli::run_finetune_features(ws);
    else if (stage == "train-asr") cli::run_train(ws, cli::Task::Asr);
    else if (stage == "train-st") cli::run_train(ws, cli::Task::St);
    else if (stage == "transfer") cli::run_transfer(ws);
    else if (stage == "average") cli::run_average(ws, average_inputs);
    else if (stage == "decode") cli::run_decode(ws, threads);
    else if (stage == "score") std::cout << cli::run_score(ws, score_input) << '\n';
    return 0;
  } catch (const Error& e) {
    std::cerr << "error[" << e.category() << "]: " << e.what() << '\n';
    return exit_status(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << '\n';
    return 1;
  }
}
