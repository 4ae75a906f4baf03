#include <catch_amalgamated.hpp>

#include <cmath>

#include "sslst/decode/beam.hpp"
#include "sslst/decode/metrics.hpp"
#include "support/random_rnn.hpp"

using namespace sslst;
using namespace sslst::decode;

namespace {

// Next token is a fixed function of the previous one.
struct ChainModel {
  using State = int;
  std::vector<long> next;
  State initial() const { return 0; }
  std::pair<std::vector<std::vector<double>>, std::vector<State>> step(const std::vector<State>& states,
                                                                        const std::vector<long>& prev) {
    std::pair<std::vector<std::vector<double>>, std::vector<State>> out;
    for (std::size_t i = 0; i < states.size(); ++i) {
      std::vector<double> lp(next.size(), -std::numeric_limits<double>::infinity());
      lp[static_cast<std::size_t>(next[static_cast<std::size_t>(prev[i])])] = 0.0;
      out.first.push_back(lp);
      out.second.push_back(0);
    }
    return out;
  }
};

}  // namespace

TEST_CASE("beam: width 1 equals greedy", "[decode]") {
  Rng rng(21);
  for (int m = 0; m < 50; ++m) {
    testing::RandomRnn model(6, 4, rng);
    BeamConfig cfg{1, 12, 1, 2};
    auto b = beam_search(model, cfg);
    auto g = greedy_decode(model, cfg);
    REQUIRE(b.best.tokens == g.tokens);
    REQUIRE(b.best.logprob == g.logprob);
  }
}

TEST_CASE("beam: deterministic chain is followed for any width", "[decode]") {
  ChainModel model{{0, 4, 2, 2, 5, 3}};
  for (std::size_t beam : {1u, 2u, 5u, 8u}) {
    auto r = beam_search(model, BeamConfig{beam, 20, 1, 2});
    REQUIRE(r.best.tokens == std::vector<long>{1, 4, 5, 3, 2});
    REQUIRE(r.best.finished);
    REQUIRE(r.best.logprob == 0.0);
  }
}

TEST_CASE("beam: exhaustive oracle on small vocabularies", "[decode]") {
  Rng rng(33);
  int agree = 0;
  for (int m = 0; m < 50; ++m) {
    const std::size_t V = static_cast<std::size_t>(rng.uniform_int(2, 5));
    const std::size_t L = static_cast<std::size_t>(rng.uniform_int(1, 4));
    testing::RandomRnn model(V, 3, rng);

    auto [best_seq, best_lp] = testing::exhaustive_best(model, L);

    std::size_t width = 1;
    for (std::size_t k = 1; k < L; ++k) width *= V;
    auto r = beam_search(model, BeamConfig{width, L, 0, -1});
    if (r.best.tokens == best_seq && std::abs(r.best.score - best_lp / static_cast<double>(L)) < 1e-12) ++agree;
  }
  REQUIRE(agree == 50);
}

TEST_CASE("beam: n-best ordering and argument checks", "[decode]") {
  Rng rng(4);
  testing::RandomRnn model(6, 4, rng);
  auto r = beam_search(model, BeamConfig{5, 10, 1, 2});
  REQUIRE(!r.nbest.empty());
  for (std::size_t i = 1; i < r.nbest.size(); ++i) REQUIRE(r.nbest[i - 1].score >= r.nbest[i].score);
  for (const auto& h : r.nbest) {
    REQUIRE(h.tokens.front() == 1);
    REQUIRE((h.tokens.back() == 2 || h.tokens.size() == 11));
    REQUIRE(std::isfinite(h.score));
  }
  CHECK_THROWS_AS(beam_search(model, BeamConfig{0, 10, 1, 2}), InvalidArgument);
  CHECK_THROWS_AS(beam_search(model, BeamConfig{5, 0, 1, 2}), InvalidArgument);
}

TEST_CASE("wer: examples", "[decode]") {
  CHECK(wer("a b c", "a b c") == 0.0);
  CHECK(wer("a b c d", "a x c") == 0.5);
  CHECK(wer("a", "a b c") == 2.0);
  CHECK_THROWS_AS(wer("", "a"), InvalidArgument);
  CHECK(corpus_wer({"a b", "c d"}, {"a b", "c"}) == 0.25);
}

TEST_CASE("wer: invariant under token relabeling", "[decode][property]") {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    std::vector<long> r, h;
    for (long k = rng.uniform_int(1, 8); k > 0; --k) r.push_back(rng.uniform_int(0, 5));
    for (long k = rng.uniform_int(0, 8); k > 0; --k) h.push_back(rng.uniform_int(0, 5));
    std::vector<long> perm{0, 1, 2, 3, 4, 5};
    rng.shuffle(perm.begin(), perm.end());
    auto relabel = [&](std::vector<long> x) {
      for (auto& t : x) t = perm[static_cast<std::size_t>(t)];
      return x;
    };
    REQUIRE(wer(r, h) == wer(relabel(r), relabel(h)));
    REQUIRE(wer(r, r) == 0.0);
  }
}

TEST_CASE("bleu: examples", "[decode]") {
  CHECK(bleu({"the cat sat on the mat"}, {"the cat sat on the mat"}) == Catch::Approx(100.0).margin(1e-9));
  auto st = corpus_bleu({"a b c d e"}, {"a b c d"});
  CHECK(st.precisions == std::array<double, 4>{1.0, 1.0, 1.0, 1.0});
  CHECK(st.brevity_penalty == Catch::Approx(std::exp(1.0 - 5.0 / 4.0)).epsilon(1e-15));
  CHECK(st.score == Catch::Approx(77.88).margin(0.005));
  CHECK(bleu({"a b c d"}, {"A B C D"}) == Catch::Approx(100.0).margin(1e-9));
  CHECK(bleu({"a b c d"}, {"x y z w"}) == 0.0);
  CHECK_THROWS_AS(bleu({"a"}, {}), InvalidArgument);
  CHECK(format_metric("BLEU", 77.88007830714049) == "BLEU=77.88");
}

TEST_CASE("bleu: order and case invariance", "[decode][property]") {
  Rng rng(17);
  const std::vector<std::string> words{"a", "B", "c", "D", "e", "f", ",", "."};
  auto sentence = [&] {
    std::string s;
    for (long k = rng.uniform_int(4, 9); k > 0; --k) s += words[static_cast<std::size_t>(rng.uniform_int(0, 7))] + " ";
    return s;
  };
  auto upper = [](std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return s;
  };
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::string> refs, hyps;
    for (int i = 0; i < 12; ++i) {
      refs.push_back(sentence());
      hyps.push_back(rng.bernoulli(0.5) ? refs.back() : sentence());
    }
    const double base = bleu(refs, hyps);
    REQUIRE(bleu(refs, refs) == Catch::Approx(100.0).margin(1e-9));
    std::vector<std::size_t> order(refs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    std::vector<std::string> r2, h2;
    for (auto i : order) {
      r2.push_back(upper(refs[i]));
      h2.push_back(hyps[i]);
    }
    REQUIRE(bleu(r2, h2) == Catch::Approx(base).margin(1e-9));
  }
}
