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
#include <concepts>
#include <limits>
#include <utility>
#include <vector>

#include "sslst/common.hpp"

namespace sslst::decode {

struct Hypothesis {
  std::vector<long> tokens;  // starts with bos
  double logprob = 0.0;
  double score = 0.0;  // logprob / generated length
  bool finished = false;
};

struct BeamConfig {
  std::size_t beam = 5;
  std::size_t max_len = 200;
  long bos = 1;
  long eos = 2;  // negative: no end symbol, every hypothesis runs to max_len
};

struct BeamResult {
  Hypothesis best;
  std::vector<Hypothesis> nbest;
};

// A step model scores the next token for a batch of partial hypotheses.
// `step(states, prev)` returns per-row log-probabilities over the vocabulary
// and the successor state of each row.
template <class M>
concept StepModel = requires(M& m, const std::vector<typename M::State>& states, const std::vector<long>& prev) {
  { m.initial() } -> std::convertible_to<typename M::State>;
  { m.step(states, prev) } -> std::convertible_to<
      std::pair<std::vector<std::vector<double>>, std::vector<typename M::State>>>;
};

inline double length_normalized(double logprob, std::size_t generated) {
  return generated == 0 ? logprob : logprob / static_cast<double>(generated);
}

namespace detail {

inline bool better_final(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace detail

template <StepModel M>
BeamResult beam_search(M& model, const BeamConfig& cfg) {
  using State = typename M::State;
  if (cfg.beam < 1) throw InvalidArgument("beam must be at least 1");
  if (cfg.max_len < 1) throw InvalidArgument("max_len must be at least 1");

  struct Live {
    Hypothesis hyp;
    State state;
  };
  std::vector<Live> live;
  live.push_back({Hypothesis{{cfg.bos}, 0.0, 0.0, false}, model.initial()});
  std::vector<Hypothesis> done;

  for (std::size_t t = 1; t <= cfg.max_len && !live.empty() && done.size() < cfg.beam; ++t) {
    std::vector<State> states;
    std::vector<long> prev;
    states.reserve(live.size());
    for (const auto& l : live) {
      states.push_back(l.state);
      prev.push_back(l.hyp.tokens.back());
    }
    auto [logp, next] = model.step(states, prev);

    struct Cand {
      double lp;
      std::size_t parent;
      long token;
    };
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < live.size(); ++i)
      for (std::size_t v = 0; v < logp[i].size(); ++v) {
        const double lp = live[i].hyp.logprob + logp[i][v];
        if (std::isfinite(lp)) cands.push_back({lp, i, static_cast<long>(v)});
      }
    const std::size_t keep = std::min(cfg.beam - done.size(), cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep), cands.end(),
                      [](const Cand& a, const Cand& b) {
                        if (a.lp != b.lp) return a.lp > b.lp;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });

    std::vector<Live> survivors;
    for (std::size_t k = 0; k < keep; ++k) {
      const Cand& c = cands[k];
      Hypothesis h = live[c.parent].hyp;
      h.tokens.push_back(c.token);
      h.logprob = c.lp;
      h.score = length_normalized(c.lp, h.tokens.size() - 1);
      if (cfg.eos >= 0 && c.token == cfg.eos) {
        h.finished = true;
        done.push_back(std::move(h));
      } else {
        survivors.push_back({std::move(h), next[c.parent]});
      }
    }
    live = std::move(survivors);
  }
  for (auto& l : live) done.push_back(std::move(l.hyp));
  if (done.empty()) throw InvalidArgument("beam search produced no hypothesis");
  std::sort(done.begin(), done.end(), detail::better_final);
  BeamResult r;
  r.best = done.front();
  r.nbest = std::move(done);
  return r;
}

// Argmax decoding; ties go to the lowest token id.
template <StepModel M>
Hypothesis greedy_decode(M& model, const BeamConfig& cfg) {
  using State = typename M::State;
  if (cfg.max_len < 1) throw InvalidArgument("max_len must be at least 1");
  Hypothesis h{{cfg.bos}, 0.0, 0.0, false};
  std::vector<State> state{model.initial()};
  for (std::size_t t = 1; t <= cfg.max_len; ++t) {
    auto [logp, next] = model.step(state, {h.tokens.back()});
    const auto& row = logp.front();
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    h.tokens.push_back(best);
    h.logprob += row[static_cast<std::size_t>(best)];
    state = {std::move(next.front())};
    if (cfg.eos >= 0 && best == cfg.eos) {
      h.finished = true;
      break;
    }
  }
  h.score = length_normalized(h.logprob, h.tokens.size() - 1);
  return h;
}

}  // namespace sslst::decode
